"""Fractional frequency shift vs temperature: TLS plus thermal quasiparticles.

The TLS part follows the standard digamma form (Gao 2008 thesis),

    (df/f0)_TLS = [Re psi(1/2 + i*y) - ln y] / (pi * Q_TLS0),  y = hbar*w/(2 pi kB T).

The quasiparticle part comes from the reactance of a superconductor whose
surface impedance scales as a power of the thermal complex conductivity,
Z_s = A * sigma^g. Writing sigma = |sigma| e^{i phi},

    (df/f0)_QP = -(alpha/2) * (1 - [sin(g*phi(T)) / sin(g*pi/2)] * (|sigma(T)|/|sigma(0)|)^(-g)),

where alpha is the kinetic inductance fraction and g selects the material
regime: -1/3 (thick film, extreme anomalous), -1/2 (thick film, dirty),
-1 (thin film, dirty; the default). At g = -1 this reduces to
-(alpha/2) * (1 - sin(phi) * |sigma(T)|/|sigma(0)|). The prefactor A cancels
in the ratio and is never represented.

The thermal conductivity ratios (normal-state normalized) are

    sigma1/sn = (4 gap / hw) * exp(-gap/kBT) * sinh(x) * K0(x)
    sigma2/sn = (pi gap / hw) * [1 - sqrt(2 pi kB T / gap) * exp(-gap/kBT)
                                   - 2 exp(-gap/kBT) exp(-x) I0(x)]

with x = hbar*w/(2 kB T) and gap = 1.764 kB Tc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .constants import HBAR, K_BOLTZMANN, gap_energy, photon_thermal_ratio
from .numerics import (
    FitDivergedError,
    FitProblem,
    bessel_i0_scaled,
    bessel_k0_scaled,
    digamma_real_part,
    nlls_fit,
)
from .validation import as_float_array, check_positive, check_same_length

GAMMA_REGIMES = (-1.0, -0.5, -1.0 / 3.0)


class InsufficientDataError(ValueError):
    pass


def _check_gamma(gamma: float) -> float:
    g = float(gamma)
    if not any(math.isclose(g, allowed, rel_tol=1e-9) for allowed in GAMMA_REGIMES):
        raise ValueError(f"gamma must be one of {GAMMA_REGIMES}, got {g}")
    return g


# ---------------------------------------------------------------------------
# Thermal complex conductivity
# ---------------------------------------------------------------------------


@dataclass
class ConductivityState:
    """Normal-state-normalized complex conductivity at one (T, omega)."""

    sigma1: float
    sigma2: float
    phase: float  # arctan(sigma2 / sigma1), in (0, pi/2]
    magnitude: float


def sigma_thermal(temperature_k, omega_rad_s, tc_k) -> ConductivityState:
    """Thermal-quasiparticle conductivity for 0 < T < Tc."""
    t = float(temperature_k)
    if not (0.0 < t < tc_k):
        raise ValueError(f"require 0 < T < Tc, got T={t}, Tc={tc_k}")
    gap = float(gap_energy(tc_k))
    hw = HBAR * float(omega_rad_s)
    x = float(photon_thermal_ratio(omega_rad_s, t))
    gap_ratio = gap / (K_BOLTZMANN * t)

    # sinh(x)*K0(x) = (1 - exp(-2x))/2 * [exp(x) K0(x)]: fully scaled, so the
    # only remaining exponential is the Boltzmann factor
    with np.errstate(under="ignore"):
        boltz = math.exp(max(-gap_ratio, -745.0))
        s1 = (
            (4.0 * gap / hw)
            * 0.5
            * (1.0 - math.exp(-2.0 * x))
            * bessel_k0_scaled(x)
            * boltz
        )
        bracket = math.fsum(
            [
                1.0,
                -math.sqrt(2.0 * math.pi * K_BOLTZMANN * t / gap) * boltz,
                -2.0 * boltz * bessel_i0_scaled(x),
            ]
        )
    s2 = (math.pi * gap / hw) * bracket
    return ConductivityState(
        sigma1=s1,
        sigma2=s2,
        phase=math.atan2(s2, s1),
        magnitude=math.hypot(s1, s2),
    )


def sigma_zero(omega_rad_s, tc_k) -> ConductivityState:
    """T -> 0 limit: sigma1 -> 0, sigma2 -> pi*gap/(hbar*omega)."""
    s2 = math.pi * float(gap_energy(tc_k)) / (HBAR * float(omega_rad_s))
    return ConductivityState(sigma1=0.0, sigma2=s2, phase=math.pi / 2.0, magnitude=s2)


# ---------------------------------------------------------------------------
# Shift components
# ---------------------------------------------------------------------------


def tls_freq_shift(q_tls0, temperature_k, omega_rad_s):
    """TLS contribution to df/f0 (positive, grows with T)."""
    t = np.asarray(temperature_k, dtype=float)
    y = HBAR * float(omega_rad_s) / (2.0 * math.pi * K_BOLTZMANN * t)
    out = (digamma_real_part(y) - np.log(y)) / (math.pi * q_tls0)
    return float(out) if np.isscalar(temperature_k) else out


def qp_freq_shift(params, temperature_k, omega_rad_s):
    """Quasiparticle contribution to df/f0 (zero at T -> 0, then negative)."""
    gamma = _check_gamma(params.gamma)
    ref = sigma_zero(omega_rad_s, params.tc_k)
    sin_ref = math.sin(gamma * math.pi / 2.0)

    def one(t):
        st = sigma_thermal(t, omega_rad_s, params.tc_k)
        sin_term = math.sin(gamma * st.phase) / sin_ref
        ratio = (st.magnitude / ref.magnitude) ** (-gamma)
        return -(params.alpha_kin / 2.0) * (1.0 - sin_term * ratio)

    if np.isscalar(temperature_k):
        return one(float(temperature_k))
    return np.array([one(float(t)) for t in np.asarray(temperature_k, dtype=float)])


@dataclass
class FreqShiftParams:
    q_tls0: float
    tc_k: float
    alpha_kin: float
    gamma: float = -1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha_kin <= 1.0):
            raise ValueError("alpha_kin must lie in [0, 1]")
        if self.tc_k <= 0:
            raise ValueError("tc_k must be positive")
        self.gamma = _check_gamma(self.gamma)


def freq_shift_model(params: FreqShiftParams, temperature_k, omega_rad_s, t_ref=None):
    """Total df/f0; referenced to ``t_ref`` (base temperature) when given."""
    total = tls_freq_shift(params.q_tls0, temperature_k, omega_rad_s) + qp_freq_shift(
        params, temperature_k, omega_rad_s
    )
    if t_ref is not None:
        total = total - (
            tls_freq_shift(params.q_tls0, t_ref, omega_rad_s)
            + qp_freq_shift(params, t_ref, omega_rad_s)
        )
    return total


# ---------------------------------------------------------------------------
# Dataset + estimator
# ---------------------------------------------------------------------------


@dataclass
class FreqShiftDataset:
    device_id: str
    omega_rad_s: float
    temperature_k: np.ndarray
    df_over_f: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        self.temperature_k = as_float_array(self.temperature_k, "temperature_k")
        self.df_over_f = as_float_array(self.df_over_f, "df_over_f")
        check_same_length(
            ("temperature_k", self.temperature_k), ("df_over_f", self.df_over_f)
        )
        check_positive(self.temperature_k, "temperature_k")
        order = np.argsort(self.temperature_k)
        self.temperature_k = self.temperature_k[order]
        self.df_over_f = self.df_over_f[order]
        if self.sigma is not None:
            self.sigma = as_float_array(self.sigma, "sigma")[order]
            check_positive(self.sigma, "sigma")


@dataclass
class FreqShiftResult:
    device_id: str
    omega_rad_s: float
    params: FreqShiftParams
    covariance: np.ndarray = field(repr=False, default=None)
    param_names: Sequence[str] = ("q_tls0", "tc_k", "alpha_kin")
    sigmas: dict = field(default_factory=dict)
    reduced_chisq: float = np.nan
    chisq: float = np.nan
    converged: bool = True
    t_ref_k: float = np.nan


class FreqShiftFit(BaseEstimator):
    """Weighted fit of df/f0 vs T for (Q_TLS0, Tc, alpha_kin) at fixed gamma.

    The model is referenced to the lowest measured temperature, so the fitted
    curve passes through zero there by construction. The Tc search window is
    clipped to stay above the hottest data point (the conductivity forms
    require T < Tc).
    """

    def __init__(
        self,
        gamma: float = -1.0,
        n_starts: int = 4,
        seed: int = 0,
        q_bounds: tuple = (1e3, 1e12),
        tc_max_k: float = 6.0,
        ftol: float = 1e-10,
        max_iterations: int = 200,
    ):
        self.gamma = gamma
        self.n_starts = n_starts
        self.seed = seed
        self.q_bounds = q_bounds
        self.tc_max_k = tc_max_k
        self.ftol = ftol
        self.max_iterations = max_iterations

    def fit(self, temperature_k, df_over_f, sigma=None, *, omega_rad_s, device_id=""):
        t = as_float_array(temperature_k, "temperature_k")
        y = as_float_array(df_over_f, "df_over_f")
        check_same_length(("temperature_k", t), ("df_over_f", y))
        if t.size < 6:
            raise InsufficientDataError("need at least 6 temperature points")
        gamma = _check_gamma(self.gamma)
        omega = float(omega_rad_s)
        t_ref = float(np.min(t))
        tc_min = float(np.max(t)) * 1.05

        if sigma is None:
            sig = np.full_like(y, max(float(np.std(y)) * 0.1, 1e-12))
            scale_cov = True
        else:
            sig = as_float_array(sigma, "sigma")
            check_positive(sig, "sigma")
            scale_cov = False

        # crude scales: TLS from the hottest (most positive) end, alpha from
        # the most negative excursion
        bracket_hot = tls_freq_shift(1.0, np.max(t), omega) - tls_freq_shift(
            1.0, t_ref, omega
        )
        q0 = np.clip(bracket_hot / max(np.max(y), 1e-12), *self.q_bounds)
        alpha0 = np.clip(-2.0 * min(np.min(y), 0.0) + 1e-6, 1e-8, 1.0)

        lower = np.array([np.log(self.q_bounds[0]), tc_min, 0.0])
        upper = np.array([np.log(self.q_bounds[1]), self.tc_max_k, 1.0])

        def residual(x):
            params = FreqShiftParams(
                q_tls0=float(np.exp(x[0])), tc_k=float(x[1]), alpha_kin=float(x[2]), gamma=gamma
            )
            model = freq_shift_model(params, t, omega, t_ref=t_ref)
            return (model - y) / sig

        rng = np.random.default_rng(self.seed)
        tc_starts = np.geomspace(tc_min * 1.2, self.tc_max_k * 0.8, max(self.n_starts, 1))
        best = None
        for i, tc0 in enumerate(tc_starts):
            x0 = np.array(
                [
                    np.clip(np.log(q0) + (rng.uniform(-0.3, 0.3) if i else 0.0), lower[0], upper[0]),
                    tc0,
                    np.clip(alpha0 * (rng.uniform(0.7, 1.3) if i else 1.0), 1e-8, 0.999),
                ]
            )
            problem = FitProblem(residual=residual, x0=x0, lower=lower, upper=upper)
            try:
                out = nlls_fit(problem, ftol=self.ftol, max_iterations=self.max_iterations)
            except Exception:
                continue
            if out.converged and (best is None or out.chisq < best.chisq):
                best = out
        if best is None:
            raise FitDivergedError("frequency-shift fit failed for every start")

        q_tls0 = float(np.exp(best.params[0]))
        params = FreqShiftParams(
            q_tls0=q_tls0,
            tc_k=float(best.params[1]),
            alpha_kin=float(best.params[2]),
            gamma=gamma,
        )
        cov = best.covariance.copy()
        if scale_cov:
            cov = cov * best.reduced_chisq
        scale = np.array([q_tls0, 1.0, 1.0])
        cov_nat = cov * np.outer(scale, scale)
        sigmas = {
            name: float(np.sqrt(max(cov_nat[i, i], 0.0)))
            for i, name in enumerate(("q_tls0", "tc_k", "alpha_kin"))
        }
        self.result_ = FreqShiftResult(
            device_id=device_id,
            omega_rad_s=omega,
            params=params,
            covariance=cov_nat,
            sigmas=sigmas,
            reduced_chisq=best.reduced_chisq,
            chisq=best.chisq,
            converged=best.converged,
            t_ref_k=t_ref,
        )
        self._t_ref = t_ref
        return self

    def predict(self, temperature_k):
        return freq_shift_model(
            self.result_.params, temperature_k, self.result_.omega_rad_s, t_ref=self._t_ref
        )


def fit_freq_shift(dataset: FreqShiftDataset, gamma: float = -1.0, **options):
    est = FreqShiftFit(gamma=gamma, **options).fit(
        dataset.temperature_k,
        dataset.df_over_f,
        dataset.sigma,
        omega_rad_s=dataset.omega_rad_s,
        device_id=dataset.device_id,
    )
    return est.result_
