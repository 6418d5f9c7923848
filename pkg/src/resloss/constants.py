"""Physical constants and small unit helpers shared by the model modules."""

from __future__ import annotations

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT  # noqa: F401  (re-exported)
from scipy.constants import h as PLANCK  # noqa: F401
from scipy.constants import hbar as HBAR
from scipy.constants import k as K_BOLTZMANN

# BCS weak-coupling ratio between the zero-temperature gap and kB*Tc.
BCS_GAP_RATIO = 1.764


def gap_energy(tc_k):
    """Zero-temperature superconducting gap for critical temperature ``tc_k``."""
    return BCS_GAP_RATIO * K_BOLTZMANN * np.asarray(tc_k, dtype=float)


def photon_thermal_ratio(omega_rad_s, temperature_k):
    """hbar*omega / (2 kB T), the argument of the thermal saturation factors."""
    return HBAR * np.asarray(omega_rad_s, dtype=float) / (
        2.0 * K_BOLTZMANN * np.asarray(temperature_k, dtype=float)
    )


def dbm_to_watts(power_dbm):
    return 1e-3 * 10.0 ** (np.asarray(power_dbm, dtype=float) / 10.0)
