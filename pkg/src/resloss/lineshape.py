"""Single-trace transmission-dip model and fitting.

The magnitude model is the asymmetric notch shape of Geerlings et al.
(Appl. Phys. Lett. 103, 102603, 2013), written for magnitude-only data:

    |S21(f)| = | 1 - (Q_tot/Q_c - i*asym) / (1 + 2i*Q_tot*(f - f0)/f0) | + baseline

``asym`` is the dimensionless asymmetry (an impedance-mismatch frequency
offset expressed in units of half linewidths); zero gives a symmetric dip of
depth Q_tot/Q_c on a flat background of 1 + baseline.

Fits are parameterized in (f0, ln Q_int, ln Q_c, asym, baseline) so both
quality factors stay positive and Q_tot <= Q_c holds structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .numerics import FitDivergedError, FitProblem, nlls_fit
from .validation import (
    as_float_array,
    check_nonnegative,
    check_same_length,
    check_strictly_increasing,
)


class NoDipFoundError(ValueError):
    """The trace has no resolvable dip below the estimated background."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class ResonatorTrace:
    """A frequency-swept |S21| measurement with its acquisition metadata."""

    freq_hz: np.ndarray
    s21_mag: np.ndarray
    sigma: Optional[np.ndarray] = None
    power_dbm: Optional[float] = None
    temperature_k: Optional[float] = None
    resonator_id: str = ""

    def __post_init__(self):
        self.freq_hz = as_float_array(self.freq_hz, "freq_hz")
        self.s21_mag = as_float_array(self.s21_mag, "s21_mag")
        if self.freq_hz.size < 8:
            raise ValueError("trace needs at least 8 samples")
        check_same_length(("freq_hz", self.freq_hz), ("s21_mag", self.s21_mag))
        check_strictly_increasing(self.freq_hz, "freq_hz")
        check_nonnegative(self.s21_mag, "s21_mag")
        if self.sigma is not None:
            self.sigma = as_float_array(self.sigma, "sigma")
            check_same_length(("freq_hz", self.freq_hz), ("sigma", self.sigma))
            if np.any(self.sigma <= 0):
                raise ValueError("sigma must be strictly positive")


@dataclass
class LineshapeParams:
    """Best-fit dip parameters. Q_tot is tied to (Q_int, Q_c) by construction."""

    f0_hz: float
    q_tot: float
    q_c: float
    asymmetry: float = 0.0
    baseline: float = 0.0

    def __post_init__(self):
        if self.q_tot <= 0 or self.q_c <= 0:
            raise ValueError("quality factors must be positive")
        # allow round-off at the Q_int -> infinity edge
        if self.q_tot > self.q_c * (1 + 1e-12):
            raise ValueError("q_tot must not exceed q_c")
        if self.f0_hz <= 0:
            raise ValueError("f0_hz must be positive")

    @property
    def q_int(self) -> float:
        inv = 1.0 / self.q_tot - 1.0 / self.q_c
        return np.inf if inv <= 0 else 1.0 / inv

    @classmethod
    def from_q_int(cls, f0_hz, q_int, q_c, asymmetry=0.0, baseline=0.0):
        q_tot = 1.0 / (1.0 / q_int + 1.0 / q_c)
        return cls(f0_hz, q_tot, q_c, asymmetry, baseline)

    @property
    def linewidth_hz(self) -> float:
        return self.f0_hz / self.q_tot


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


def s21_model(params: LineshapeParams, freq_hz):
    """Evaluate |S21| at ``freq_hz`` for the given dip parameters."""
    f = np.asarray(freq_hz, dtype=float)
    out = _s21_mag(
        f, params.f0_hz, params.q_tot, params.q_c, params.asymmetry, params.baseline
    )
    return float(out) if np.isscalar(freq_hz) else out


def _s21_mag(f, f0, q_tot, q_c, asym, baseline):
    depth = q_tot / q_c
    u = 2.0 * q_tot * (f - f0) / f0
    dip = 1.0 - (depth - 1j * asym) / (1.0 + 1j * u)
    return np.abs(dip) + baseline


def _model_and_jacobian(f, f0, log_qi, log_qc, asym, baseline):
    """Model values plus analytic derivatives in the fit parameterization."""
    qi = np.exp(log_qi)
    qc = np.exp(log_qc)
    d = qi / (qi + qc)  # = q_tot / q_c
    q_tot = qi * qc / (qi + qc)
    u = 2.0 * q_tot * (f - f0) / f0

    numer = d - 1j * asym
    denom = 1.0 + 1j * u
    c = numer / denom
    a_cplx = 1.0 - c
    mag = np.abs(a_cplx)
    model = mag + baseline

    safe = np.maximum(mag, 1e-12)
    dc_du = -1j * numer / denom**2
    du_df0 = -2.0 * q_tot * f / f0**2

    dc_dlogqi = d * (1.0 - d) / denom + dc_du * u * (1.0 - d)
    dc_dlogqc = -d * (1.0 - d) / denom + dc_du * u * d
    dc_df0 = dc_du * du_df0
    dc_dasym = -1j / denom

    def mag_deriv(dc):
        return -np.real(np.conj(a_cplx) * dc) / safe

    jac = np.column_stack(
        [
            mag_deriv(dc_df0),
            mag_deriv(dc_dlogqi),
            mag_deriv(dc_dlogqc),
            mag_deriv(dc_dasym),
            np.ones_like(f),
        ]
    )
    return model, jac


def estimate_noise_sigma(s21_mag) -> float:
    """Robust per-point noise level from first differences of the trace."""
    diffs = np.abs(np.diff(np.asarray(s21_mag, dtype=float)))
    return 1.4826 * float(np.median(diffs)) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------

_PARAM_NAMES = ("f0_hz", "q_int", "q_c", "asymmetry", "baseline")


class LineshapeFit(BaseEstimator):
    """Weighted least-squares fit of a single transmission dip.

    The flat-background assumption holds for narrow measurement spans
    (a few linewidths); wide sweeps with standing-wave ripple should be
    windowed before fitting.

    Parameters
    ----------
    min_dip_snr : float
        Minimum dip depth in units of the estimated noise level; traces
        shallower than this raise :class:`NoDipFoundError`.
    q_bounds : (float, float)
        Bounds applied to both Q_int and Q_c during the fit.
    asym_bound : float
        Symmetric bound on the dimensionless asymmetry.
    """

    def __init__(
        self,
        min_dip_snr: float = 4.0,
        q_bounds: tuple = (1e2, 1e12),
        asym_bound: float = 2.0,
        ftol: float = 1e-10,
        max_iterations: int = 200,
    ):
        self.min_dip_snr = min_dip_snr
        self.q_bounds = q_bounds
        self.asym_bound = asym_bound
        self.ftol = ftol
        self.max_iterations = max_iterations

    # -- internals ---------------------------------------------------------

    def _initial_guess(self, f, y):
        n = f.size
        n_edge = max(3, n // 10)
        level = float(np.median(np.concatenate([y[:n_edge], y[-n_edge:]])))
        noise = estimate_noise_sigma(y)
        i_min = int(np.argmin(y))
        depth = level - float(y[i_min])
        if depth <= max(self.min_dip_snr * noise, 1e-9 * max(level, 1.0)):
            raise NoDipFoundError(
                f"no dip below background (depth={depth:.3g}, noise={noise:.3g})"
            )
        f0 = float(f[i_min])

        half = level - 0.5 * depth
        left = i_min
        while left > 0 and y[left] < half:
            left -= 1
        right = i_min
        while right < n - 1 and y[right] < half:
            right += 1
        fwhm = float(f[right] - f[left])
        if fwhm <= 0:
            fwhm = (f[-1] - f[0]) / 10.0

        q_tot = np.clip(f0 / fwhm, 10.0, 1e9)
        d = np.clip(depth / max(level, 1e-9), 1e-6, 1.0 - 1e-6)
        q_c = q_tot / d
        q_int = q_tot / (1.0 - d)
        return f0, q_int, q_c, level - 1.0, noise

    def fit(self, freq_hz, s21_mag, sigma=None):
        f = as_float_array(freq_hz, "freq_hz")
        y = as_float_array(s21_mag, "s21_mag")
        check_same_length(("freq_hz", f), ("s21_mag", y))
        check_strictly_increasing(f, "freq_hz")

        f0_0, qi_0, qc_0, b_0, noise = self._initial_guess(f, y)
        if sigma is None:
            sig = np.full_like(y, max(noise, 1e-10))
        else:
            sig = as_float_array(sigma, "sigma")
            check_same_length(("freq_hz", f), ("sigma", sig))

        lo_q, hi_q = self.q_bounds
        qi_0 = np.clip(qi_0, lo_q * 1.01, hi_q * 0.99)
        qc_0 = np.clip(qc_0, lo_q * 1.01, hi_q * 0.99)
        span = f[-1] - f[0]
        lower = np.array([f[0], np.log(lo_q), np.log(lo_q), -self.asym_bound, -1.5])
        upper = np.array([f[-1], np.log(hi_q), np.log(hi_q), self.asym_bound, 10.0])
        x0 = np.array(
            [
                np.clip(f0_0, f[0] + 1e-9 * span, f[-1] - 1e-9 * span),
                np.log(qi_0),
                np.log(qc_0),
                0.0,
                np.clip(b_0, -1.4, 9.0),
            ]
        )

        def residual(p):
            model, _ = _model_and_jacobian(f, *p)
            return model - y

        def jacobian(p):
            _, jac = _model_and_jacobian(f, *p)
            return jac

        problem = FitProblem(
            residual=residual,
            x0=x0,
            lower=lower,
            upper=upper,
            weights=1.0 / sig,
            jacobian=jacobian,
        )
        outcome = nlls_fit(problem, ftol=self.ftol, max_iterations=self.max_iterations)

        f0, log_qi, log_qc, asym, baseline = outcome.params
        qi, qc = np.exp(log_qi), np.exp(log_qc)
        self.params_ = LineshapeParams.from_q_int(f0, qi, qc, asym, baseline)
        # delta-method transform of (f0, ln qi, ln qc, a, b) covariance
        scale = np.array([1.0, qi, qc, 1.0, 1.0])
        self.covariance_ = outcome.covariance * np.outer(scale, scale)
        self.param_names_ = _PARAM_NAMES
        self.q_int_ = qi
        self.q_int_sigma_ = float(np.sqrt(max(self.covariance_[1, 1], 0.0)))
        self.q_c_sigma_ = float(np.sqrt(max(self.covariance_[2, 2], 0.0)))
        self.f0_sigma_ = float(np.sqrt(max(self.covariance_[0, 0], 0.0)))
        self.noise_sigma_ = noise
        self.reduced_chisq_ = outcome.reduced_chisq
        self.converged_ = outcome.converged
        self.outcome_ = outcome
        return self

    def predict(self, freq_hz):
        return s21_model(self.params_, freq_hz)


# ---------------------------------------------------------------------------
# Operation-level wrappers
# ---------------------------------------------------------------------------


@dataclass
class LineshapeResult:
    params: LineshapeParams
    q_int: float
    sigmas: dict
    covariance: np.ndarray = field(repr=False, default=None)
    param_names: Sequence[str] = _PARAM_NAMES
    reduced_chisq: float = np.nan
    noise_sigma: float = np.nan
    power_dbm: Optional[float] = None
    temperature_k: Optional[float] = None
    resonator_id: str = ""


def fit_trace(trace: ResonatorTrace, **options) -> LineshapeResult:
    """Fit one trace; raises NoDipFoundError / FitDivergedError on failure."""
    est = LineshapeFit(**options).fit(trace.freq_hz, trace.s21_mag, trace.sigma)
    if not est.converged_:
        raise FitDivergedError("lineshape fit did not converge")
    p = est.params_
    sigmas = {
        "f0_hz": est.f0_sigma_,
        "q_int": est.q_int_sigma_,
        "q_c": est.q_c_sigma_,
        "asymmetry": float(np.sqrt(max(est.covariance_[3, 3], 0.0))),
        "baseline": float(np.sqrt(max(est.covariance_[4, 4], 0.0))),
    }
    return LineshapeResult(
        params=p,
        q_int=est.q_int_,
        sigmas=sigmas,
        covariance=est.covariance_,
        reduced_chisq=est.reduced_chisq_,
        noise_sigma=est.noise_sigma_,
        power_dbm=trace.power_dbm,
        temperature_k=trace.temperature_k,
        resonator_id=trace.resonator_id,
    )


@dataclass
class NonlinearityReport:
    flagged: bool
    rms_score: float
    skew_score: float
    noise_sigma: float


def detect_nonlinearity(
    trace: ResonatorTrace,
    params: LineshapeParams,
    *,
    rms_threshold: float = 5.0,
    skew_threshold: float = 0.3,
    noise_sigma: Optional[float] = None,
) -> NonlinearityReport:
    """Screen a fitted trace for drive-power distortion (bent/pulled dips).

    Two statistics are compared against their thresholds: the in-band
    residual RMS in units of the per-point noise, and a left/right residual
    imbalance about the fitted center. Either exceeding its threshold flags
    the trace for exclusion from downstream sweep fits.
    """
    f = trace.freq_hz
    residual = trace.s21_mag - s21_model(params, f)
    noise = estimate_noise_sigma(trace.s21_mag) if noise_sigma is None else noise_sigma
    noise = max(noise, 1e-12)

    rms_score = float(np.sqrt(np.mean(residual**2)) / noise)
    lower = f < params.f0_hz
    upper = f > params.f0_hz
    total = float(np.sum(np.abs(residual)))
    if total <= 0:
        skew_score = 0.0
    else:
        skew_score = float(
            abs(np.sum(residual[upper]) - np.sum(residual[lower])) / total
        )
    flagged = (rms_score > rms_threshold) or (skew_score > skew_threshold)
    return NonlinearityReport(flagged, rms_score, skew_score, noise)


@dataclass
class QcConstancyReport:
    mean_qc: float
    cv: float
    passed: bool
    n_traces: int
    threshold: float


def qc_constancy(fits, cv_threshold: float = 0.2) -> QcConstancyReport:
    """Spread of fitted Q_c across a sweep; a large spread warns that the
    coupling and internal losses were not cleanly separated."""
    values = []
    for item in fits:
        if isinstance(item, LineshapeResult):
            values.append(item.params.q_c)
        elif isinstance(item, LineshapeParams):
            values.append(item.q_c)
        else:
            values.append(float(item))
    if len(values) < 3:
        raise ValueError("qc_constancy needs at least 3 fitted traces")
    arr = np.asarray(values, dtype=float)
    mean = float(np.mean(arr))
    cv = float(np.std(arr) / mean) if mean != 0 else np.inf
    return QcConstancyReport(mean, cv, cv <= cv_threshold, arr.size, cv_threshold)
