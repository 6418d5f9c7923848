"""Resonator design calculators: quarter-wave CPW frequency, feedline
coupling capacitance, and lumped-element parameter extraction from
eigenmode/capacitance simulation outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import SPEED_OF_LIGHT


@dataclass
class CpwDesign:
    length_m: float
    eps_eff: float
    velocity_m_s: float = SPEED_OF_LIGHT
    target_z0_ohm: float = 50.0

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError("length_m must be positive")
        if self.eps_eff < 1.0:
            raise ValueError("eps_eff must be >= 1")


def cpw_f0(design: CpwDesign) -> float:
    """Quarter-wave resonance: f0 = v / (4 l sqrt(eps_eff))."""
    return design.velocity_m_s / (4.0 * design.length_m * np.sqrt(design.eps_eff))


def cpw_length_for_f0(f0_hz: float, eps_eff: float, velocity_m_s: float = SPEED_OF_LIGHT) -> float:
    if f0_hz <= 0:
        raise ValueError("f0_hz must be positive")
    return velocity_m_s / (4.0 * f0_hz * np.sqrt(eps_eff))


def coupling_capacitance(q_c: float, f0_hz: float, z0_ohm: float) -> float:
    """Feedline coupling capacitance for a target Q_c:
    C_c = sqrt(pi / (4 Q_c)) / (2 pi f0 Z0)."""
    if min(q_c, f0_hz, z0_ohm) <= 0:
        raise ValueError("q_c, f0_hz and z0_ohm must all be positive")
    return np.sqrt(np.pi / (4.0 * q_c)) / (2.0 * np.pi * f0_hz * z0_ohm)


@dataclass
class LumpedExtraction:
    """Lumped-element resonator parameters recovered from three simulations:
    pad capacitance C_L, meander-only resonance, and full-resonator resonance.

    The meander resonates with only the stray capacitance (f_m ~ 1/sqrt(L C_S)),
    the full resonator with C_L + C_S, which closes the 2x2 system:

        C_S = C_L / ((f_m/f_r)^2 - 1),   L = 1 / (w_m^2 C_S),
        Z0 = sqrt(L / (C_L + C_S)).

    ``angular_literal`` selects the convention for turning resonance
    "frequencies" into w: False (default) treats inputs as cyclic frequencies
    (w = 2 pi f); True takes the 1/sqrt(LC) expressions literally, i.e. the
    inputs are already angular. Both are self-consistent; only L, C_S and Z0
    rescale between them.
    """

    c_load_f: float
    f_meander_hz: float
    f_resonator_hz: float
    angular_literal: bool = False
    inductance_h: float = 0.0
    c_stray_f: float = 0.0
    z0_ohm: float = 0.0
    f0_hz: float = 0.0

    def __post_init__(self):
        if self.c_load_f <= 0:
            raise ValueError("c_load_f must be positive")
        if not (self.f_meander_hz > self.f_resonator_hz > 0):
            raise ValueError("require f_meander_hz > f_resonator_hz > 0")
        ratio2 = (self.f_meander_hz / self.f_resonator_hz) ** 2
        self.c_stray_f = self.c_load_f / (ratio2 - 1.0)
        w_m = self.f_meander_hz if self.angular_literal else 2.0 * np.pi * self.f_meander_hz
        self.inductance_h = 1.0 / (w_m**2 * self.c_stray_f)
        c_tot = self.c_load_f + self.c_stray_f
        self.z0_ohm = np.sqrt(self.inductance_h / c_tot)
        w0 = 1.0 / np.sqrt(self.inductance_h * c_tot)
        self.f0_hz = w0 if self.angular_literal else w0 / (2.0 * np.pi)


def extract_lumped(
    c_load_f: float,
    f_meander_hz: float,
    f_resonator_hz: float,
    angular_literal: bool = False,
) -> LumpedExtraction:
    return LumpedExtraction(c_load_f, f_meander_hz, f_resonator_hz, angular_literal)
