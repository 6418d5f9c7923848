"""Power- and temperature-dependent internal-loss model and joint fit.

Three parallel channels set the internal quality factor of a resonator at
angular frequency ``omega`` driven to a mean photon number ``nbar`` at
temperature ``T``:

* saturable two-level-system (TLS) absorption,
      1/Q_TLS = tanh(x) / (Q_TLS0 * sqrt(1 + (nbar^b2 / (D * T^b1)) * tanh(x))),
      x = hbar*omega / (2 kB T),
  with ``D`` (``sat_scale``) an empirical saturation scale and b1/b2
  (``temp_exp``/``photon_exp``) empirical exponents capturing the bath's
  dephasing-time temperature dependence and mode-geometry saturation;
* thermal equilibrium quasiparticles,
      1/Q_QP = sinh(x) * K0(x) * exp(-gap/kB T) / Q_QP0,
  with gap = 1.764 kB Tc, evaluated through scaled Bessel forms so the
  exponentials never overflow at deep-cryogenic temperatures;
* a power- and temperature-independent channel 1/Q_other (optional).

The joint fit runs in log-Q space with multiplicative weights, multi-started
to cope with the known saturation-scale/exponent ridge.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import k0e
from sklearn.base import BaseEstimator

from .constants import (
    BCS_GAP_RATIO,
    HBAR,
    K_BOLTZMANN,
    dbm_to_watts,
    gap_energy,
    photon_thermal_ratio,
)
from .lineshape import LineshapeParams
from .numerics import FitDivergedError, FitProblem, nlls_fit
from .validation import as_float_array, check_positive, check_same_length


class InsufficientGridError(ValueError):
    """The (power, temperature) grid is too small for a joint fit."""


class QOtherUnidentifiableWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Forward model
# ---------------------------------------------------------------------------


def tls_loss(nbar, temperature_k, omega_rad_s, q_tls0, sat_scale, temp_exp, photon_exp):
    """1/Q_TLS for the saturable two-level-system channel."""
    nbar = np.asarray(nbar, dtype=float)
    t = np.asarray(temperature_k, dtype=float)
    th = np.tanh(photon_thermal_ratio(omega_rad_s, t))
    sat = np.power(nbar, photon_exp) / (sat_scale * np.power(t, temp_exp))
    return th / (q_tls0 * np.sqrt(1.0 + sat * th))


def q_tls(nbar, temperature_k, omega_rad_s, q_tls0, sat_scale, temp_exp, photon_exp):
    return 1.0 / tls_loss(
        nbar, temperature_k, omega_rad_s, q_tls0, sat_scale, temp_exp, photon_exp
    )


def qp_loss(temperature_k, omega_rad_s, q_qp0, tc_k):
    """1/Q_QP for thermal quasiparticles; underflows cleanly to 0 at low T.

    sinh(x)*K0(x)*exp(-gap/kBT) is assembled in log space from the scaled
    Bessel function, so no intermediate overflows for any cryogenic input.
    """
    t = np.asarray(temperature_k, dtype=float)
    x = photon_thermal_ratio(omega_rad_s, t)
    log_loss = (
        np.log1p(-np.exp(-2.0 * x))
        - np.log(2.0)
        + np.log(k0e(x))
        - gap_energy(tc_k) / (K_BOLTZMANN * t)
        - np.log(q_qp0)
    )
    with np.errstate(under="ignore"):
        return np.exp(log_loss)


def q_qp(temperature_k, omega_rad_s, q_qp0, tc_k):
    """Quasiparticle quality factor; +inf where the loss underflows to zero."""
    loss = qp_loss(temperature_k, omega_rad_s, q_qp0, tc_k)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(loss > 0, 1.0 / np.maximum(loss, 5e-324), np.inf)


def q_int_model(
    nbar,
    temperature_k,
    omega_rad_s,
    q_tls0,
    sat_scale,
    temp_exp,
    photon_exp,
    q_qp0,
    tc_k,
    q_other=None,
):
    """Total internal quality factor from the parallel loss channels."""
    loss = tls_loss(
        nbar, temperature_k, omega_rad_s, q_tls0, sat_scale, temp_exp, photon_exp
    ) + qp_loss(temperature_k, omega_rad_s, q_qp0, tc_k)
    if q_other is not None and np.isfinite(q_other):
        loss = loss + 1.0 / q_other
    return 1.0 / loss


def photon_number(power_dbm, lineshape: LineshapeParams, attenuation_db):
    """Mean intracavity photon number for an applied power.

    Uses the steady-state relation nbar = 2 Q_tot^2 P_in / (Q_c hbar omega0^2)
    (the convention of e.g. arXiv:1801.10204, Eq. 1), where P_in is the power
    at the device after subtracting the total input-line attenuation. The
    attenuation must be supplied explicitly; it is a per-line calibration.
    """
    if attenuation_db is None:
        raise ValueError("attenuation_db is required to refer power to the device")
    p_in = dbm_to_watts(np.asarray(power_dbm, dtype=float) - attenuation_db)
    omega0 = 2.0 * np.pi * lineshape.f0_hz
    return 2.0 * lineshape.q_tot**2 * p_in / (lineshape.q_c * HBAR * omega0**2)


# ---------------------------------------------------------------------------
# Dataset and result types
# ---------------------------------------------------------------------------


@dataclass
class SweepDataset:
    """Per-point (nbar, T, Q_int) grid for one resonator."""

    device_id: str
    omega_rad_s: float
    nbar: np.ndarray
    temperature_k: np.ndarray
    q_int: np.ndarray
    q_int_sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        self.nbar = as_float_array(self.nbar, "nbar")
        self.temperature_k = as_float_array(self.temperature_k, "temperature_k")
        self.q_int = as_float_array(self.q_int, "q_int")
        check_same_length(
            ("nbar", self.nbar),
            ("temperature_k", self.temperature_k),
            ("q_int", self.q_int),
        )
        check_positive(self.nbar, "nbar")
        check_positive(self.temperature_k, "temperature_k")
        check_positive(self.q_int, "q_int")
        if self.q_int_sigma is not None:
            self.q_int_sigma = as_float_array(self.q_int_sigma, "q_int_sigma")
            check_same_length(("q_int", self.q_int), ("q_int_sigma", self.q_int_sigma))
            check_positive(self.q_int_sigma, "q_int_sigma")
        if np.unique(np.round(np.log10(self.nbar), 6)).size < 2:
            raise InsufficientGridError("need at least 2 distinct powers")
        if np.unique(np.round(self.temperature_k, 9)).size < 3:
            raise InsufficientGridError("need at least 3 distinct temperatures")


@dataclass
class SweepFitDiagnostics:
    q_other_identifiable: bool
    delta_chisq_q_other: float
    qp_loss_share_max: float
    qp_identifiable: bool
    tc_qqp_correlation: float
    n_starts: int
    start_costs: Sequence[float] = ()


_FULL_NAMES = ("q_tls0", "sat_scale", "temp_exp", "photon_exp", "q_qp0", "tc_k", "q_other")


@dataclass
class LossFitResult:
    device_id: str
    omega_rad_s: float
    q_tls0: float
    sat_scale: float
    temp_exp: float
    photon_exp: float
    q_qp0: float
    tc_k: float
    q_other: Optional[float]
    covariance: np.ndarray = field(repr=False, default=None)
    param_names: Sequence[str] = _FULL_NAMES
    sigmas: dict = field(default_factory=dict)
    reduced_chisq: float = np.nan
    chisq: float = np.nan
    converged: bool = True
    diagnostics: Optional[SweepFitDiagnostics] = None

    @property
    def gap_energy_j(self) -> float:
        """Zero-temperature gap; derived from tc_k, never stored independently."""
        return float(gap_energy(self.tc_k))

    def q_int(self, nbar, temperature_k):
        return q_int_model(
            nbar,
            temperature_k,
            self.omega_rad_s,
            self.q_tls0,
            self.sat_scale,
            self.temp_exp,
            self.photon_exp,
            self.q_qp0,
            self.tc_k,
            self.q_other,
        )


# ---------------------------------------------------------------------------
# Estimator
# ---------------------------------------------------------------------------


class SweepLossFit(BaseEstimator):
    """Joint fit of Q_int(nbar, T) to the three-channel loss model.

    ``fit_q_other="auto"`` fits the model with and without the constant
    channel and drops it when the chi-square improvement is below
    ``identifiability_delta_chisq`` (no high-power plateau in the data).
    """

    def __init__(
        self,
        fit_q_other="auto",
        n_starts: int = 5,
        seed: int = 0,
        ftol: float = 1e-10,
        max_iterations: int = 200,
        q_bounds: tuple = (1e3, 1e12),
        q_qp0_bounds: tuple = (1e-3, 1e12),
        sat_scale_bounds: tuple = (1e-9, 1e15),
        temp_exp_bounds: tuple = (0.0, 4.0),
        photon_exp_bounds: tuple = (0.05, 2.0),
        tc_bounds: tuple = (0.05, 6.0),
        identifiability_delta_chisq: float = 1.0,
        initial_guess: Optional[dict] = None,
    ):
        self.fit_q_other = fit_q_other
        self.n_starts = n_starts
        self.seed = seed
        self.ftol = ftol
        self.max_iterations = max_iterations
        self.q_bounds = q_bounds
        # the quasiparticle prefactor is rescaled by exp(gap/kBT) >> 1, so its
        # physical range extends far below measurable quality factors
        self.q_qp0_bounds = q_qp0_bounds
        self.sat_scale_bounds = sat_scale_bounds
        self.temp_exp_bounds = temp_exp_bounds
        self.photon_exp_bounds = photon_exp_bounds
        self.tc_bounds = tc_bounds
        self.identifiability_delta_chisq = identifiability_delta_chisq
        self.initial_guess = initial_guess

    # -- heuristics ----------------------------------------------------------

    def _initial_guess(self, nbar, t, q, omega):
        t_min, t_max = float(np.min(t)), float(np.max(t))
        th_min = np.tanh(photon_thermal_ratio(omega, t_min))

        i_lin = int(np.lexsort((nbar, t))[0])  # lowest T, then lowest nbar
        q_tls0 = float(np.clip(q[i_lin] * th_min, *self.q_bounds))
        q_other = float(np.clip(2.0 * np.max(q), *self.q_bounds))

        # saturation scale from the highest-power point at base temperature
        at_base = t <= t_min * 1.001
        i_sat = int(np.argmax(np.where(at_base, nbar, -np.inf)))
        g = q[i_sat] * th_min / q_tls0
        s = max((g**2 - 1.0) / th_min, 1e-3)
        photon_exp = 0.7
        temp_exp = 1.0
        sat_scale = float(
            np.clip(nbar[i_sat] ** photon_exp / (s * t_min**temp_exp), *self.sat_scale_bounds)
        )

        # quasiparticle channel from the decay of the hottest points
        tc = 1.5
        q_qp0 = 1e4
        hottest = np.unique(t)[-3:]
        if hottest.size >= 2:
            ts, losses = [], []
            for tv in hottest:
                sel = np.isclose(t, tv)
                extra = 1.0 / np.min(q[sel]) - 1.0 / q_other
                if extra > 0:
                    ts.append(tv)
                    losses.append(extra)
            if len(ts) >= 2:
                ts = np.asarray(ts)
                slope = np.polyfit(1.0 / ts, np.log(losses), 1)[0]
                if slope < 0:
                    tc = float(
                        np.clip(
                            -slope / BCS_GAP_RATIO,
                            self.tc_bounds[0] * 1.2,
                            self.tc_bounds[1] * 0.9,
                        )
                    )
                x_max = photon_thermal_ratio(omega, t_max)
                shape = (1.0 - np.exp(-2.0 * x_max)) / 2.0 * k0e(x_max)
                log_qqp0 = (
                    np.log(shape)
                    - gap_energy(tc) / (K_BOLTZMANN * t_max)
                    - np.log(losses[-1])
                )
                q_qp0 = float(
                    np.clip(np.exp(np.clip(log_qqp0, -600, 600)), *self.q_qp0_bounds)
                )
        return q_tls0, sat_scale, temp_exp, photon_exp, q_qp0, tc, q_other

    def _pack_bounds(self, with_other):
        lo = [
            np.log(self.q_bounds[0]),
            np.log(self.sat_scale_bounds[0]),
            self.temp_exp_bounds[0],
            self.photon_exp_bounds[0],
            np.log(self.q_qp0_bounds[0]),
            self.tc_bounds[0],
        ]
        hi = [
            np.log(self.q_bounds[1]),
            np.log(self.sat_scale_bounds[1]),
            self.temp_exp_bounds[1],
            self.photon_exp_bounds[1],
            np.log(self.q_qp0_bounds[1]),
            self.tc_bounds[1],
        ]
        if with_other:
            lo.append(np.log(self.q_bounds[0]))
            hi.append(np.log(self.q_bounds[1]))
        return np.asarray(lo), np.asarray(hi)

    @staticmethod
    def _unpack(x, with_other):
        q_tls0, sat_scale = np.exp(x[0]), np.exp(x[1])
        temp_exp, photon_exp = x[2], x[3]
        q_qp0, tc = np.exp(x[4]), x[5]
        q_other = np.exp(x[6]) if with_other else None
        return q_tls0, sat_scale, temp_exp, photon_exp, q_qp0, tc, q_other

    def _run_starts(self, x0, lower, upper, residual, rng):
        jitters = [np.zeros_like(x0)]
        for _ in range(max(self.n_starts - 1, 0)):
            jitters.append(rng.uniform(np.log(0.7), np.log(1.3), size=x0.size))
        best = None
        costs = []
        for jit in jitters:
            xs = np.clip(x0 + jit, lower + 1e-9, upper - 1e-9)
            problem = FitProblem(residual=residual, x0=xs, lower=lower, upper=upper)
            try:
                out = nlls_fit(problem, ftol=self.ftol, max_iterations=self.max_iterations)
            except Exception:
                continue
            costs.append(out.chisq)
            if out.converged and (best is None or out.chisq < best.chisq):
                best = out
        if best is None:
            raise FitDivergedError("sweep fit failed for every start")
        return best, costs

    # -- fitting --------------------------------------------------------------

    def fit(self, nbar, temperature_k, q_int, sigma=None, *, omega_rad_s, device_id=""):
        nbar = as_float_array(nbar, "nbar")
        t = as_float_array(temperature_k, "temperature_k")
        q = as_float_array(q_int, "q_int")
        check_same_length(("nbar", nbar), ("temperature_k", t), ("q_int", q))
        if np.unique(np.round(np.log10(nbar), 6)).size < 2:
            raise InsufficientGridError("need at least 2 distinct powers")
        if np.unique(np.round(t, 9)).size < 3:
            raise InsufficientGridError("need at least 3 distinct temperatures")

        if sigma is None:
            sigma_ln = np.ones_like(q)
            scale_cov = True
        else:
            sig = as_float_array(sigma, "sigma")
            check_positive(sig, "sigma")
            sigma_ln = sig / q
            scale_cov = False
        log_q = np.log(q)
        omega = float(omega_rad_s)

        guess = self._initial_guess(nbar, t, q, omega)
        if self.initial_guess:
            override = dict(self.initial_guess)
            defaults = dict(zip(_FULL_NAMES, guess))
            defaults.update({k: v for k, v in override.items() if v is not None})
            guess = tuple(defaults[name] for name in _FULL_NAMES)
        x0_full = np.array(
            [
                np.log(guess[0]),
                np.log(guess[1]),
                guess[2],
                guess[3],
                np.log(guess[4]),
                guess[5],
                np.log(guess[6]),
            ]
        )
        rng = np.random.default_rng(self.seed)

        def make_residual(with_other):
            def residual(x):
                params = self._unpack(x, with_other)
                model = q_int_model(nbar, t, omega, *params)
                return (np.log(model) - log_q) / sigma_ln

            return residual

        fit_full = self.fit_q_other in ("auto", True)
        fit_reduced = self.fit_q_other in ("auto", False)

        out_full = costs_full = None
        if fit_full:
            lo, hi = self._pack_bounds(True)
            out_full, costs_full = self._run_starts(
                x0_full, lo, hi, make_residual(True), rng
            )
        out_red = costs_red = None
        if fit_reduced:
            lo, hi = self._pack_bounds(False)
            out_red, costs_red = self._run_starts(
                x0_full[:6], lo, hi, make_residual(False), rng
            )

        if self.fit_q_other is True:
            use_other, delta = True, np.inf
        elif self.fit_q_other is False:
            use_other, delta = False, 0.0
        else:
            delta = out_red.chisq - out_full.chisq
            if scale_cov:
                # no measurement sigmas: express the improvement in units of
                # the full model's residual variance so the 1-chisq rule holds
                dof = max(out_full.n_residuals - out_full.params.size, 1)
                noise_var = out_full.chisq / dof
                delta = np.inf if noise_var == 0 and delta > 0 else delta / max(noise_var, 1e-300)
            use_other = delta >= self.identifiability_delta_chisq

        out = out_full if use_other else out_red
        costs = costs_full if use_other else costs_red
        with_other = use_other
        params = self._unpack(out.params, with_other)
        q_tls0, sat_scale, temp_exp, photon_exp, q_qp0, tc, q_other = params

        cov = out.covariance.copy()
        if scale_cov:
            cov = cov * out.reduced_chisq
        # delta-method to natural units for the log-parameterized entries
        scale = np.array(
            [q_tls0, sat_scale, 1.0, 1.0, q_qp0, 1.0]
            + ([q_other] if with_other else [])
        )
        cov_nat = cov * np.outer(scale, scale)
        names = _FULL_NAMES if with_other else _FULL_NAMES[:6]
        sigmas = {
            name: float(np.sqrt(max(cov_nat[i, i], 0.0)))
            for i, name in enumerate(names)
        }

        share = qp_loss(t, omega, q_qp0, tc) * self.q_int_from(params, nbar, t, omega)
        qp_share = float(np.max(share))
        i_tc, i_qp = 5, 4
        denom = np.sqrt(max(cov[i_tc, i_tc] * cov[i_qp, i_qp], 0.0))
        tc_qqp_corr = float(cov[i_tc, i_qp] / denom) if denom > 0 else np.nan
        sigma_tc = float(np.sqrt(max(cov[i_tc, i_tc], 0.0)))
        # tight (Tc, Q_QP0) correlation is intrinsic to the exponential tail;
        # the channel only counts as unidentified when it barely touches the
        # data or leaves Tc essentially unconstrained
        qp_identifiable = qp_share >= 0.05 and sigma_tc <= 0.5 * tc

        diagnostics = SweepFitDiagnostics(
            q_other_identifiable=use_other,
            delta_chisq_q_other=float(delta),
            qp_loss_share_max=qp_share,
            qp_identifiable=qp_identifiable,
            tc_qqp_correlation=tc_qqp_corr,
            n_starts=self.n_starts,
            start_costs=tuple(float(c) for c in (costs or ())),
        )
        self.result_ = LossFitResult(
            device_id=device_id,
            omega_rad_s=omega,
            q_tls0=q_tls0,
            sat_scale=sat_scale,
            temp_exp=temp_exp,
            photon_exp=photon_exp,
            q_qp0=q_qp0,
            tc_k=tc,
            q_other=q_other,
            covariance=cov_nat,
            param_names=names,
            sigmas=sigmas,
            reduced_chisq=out.reduced_chisq,
            chisq=out.chisq,
            converged=out.converged,
            diagnostics=diagnostics,
        )
        return self

    @staticmethod
    def q_int_from(params, nbar, t, omega):
        return q_int_model(nbar, t, omega, *params)

    def predict(self, nbar, temperature_k):
        return self.result_.q_int(nbar, temperature_k)


def fit_sweep(dataset: SweepDataset, **options) -> LossFitResult:
    est = SweepLossFit(**options).fit(
        dataset.nbar,
        dataset.temperature_k,
        dataset.q_int,
        dataset.q_int_sigma,
        omega_rad_s=dataset.omega_rad_s,
        device_id=dataset.device_id,
    )
    return est.result_


# ---------------------------------------------------------------------------
# Cross-device parameter-correlation diagnostics
# ---------------------------------------------------------------------------


@dataclass
class CorrelationReport:
    names: Sequence[str]
    matrix: np.ndarray
    flagged_pairs: Sequence[tuple]
    zero_variance: Sequence[str]
    threshold: float
    n_fits: int


def _pairwise_pearson(x, y):
    mask = np.isfinite(x) & np.isfinite(y)
    if np.count_nonzero(mask) < 3:
        return np.nan
    xv, yv = x[mask], y[mask]
    sx, sy = np.std(xv), np.std(yv)
    if sx == 0 or sy == 0:
        return np.nan
    return float(np.mean((xv - np.mean(xv)) * (yv - np.mean(yv))) / (sx * sy))


def correlation_report(results: Sequence[LossFitResult], threshold: float = 0.8):
    """Pearson correlations of fitted parameters across an ensemble of devices.

    Scale parameters are correlated in log10; a derived
    ``sat_scale**(1/photon_exp)`` column is included because the raw
    (sat_scale, photon_exp) pair is degenerate along a log-linear ridge.
    """
    if len(results) < 5:
        raise ValueError("correlation_report needs at least 5 fits")
    cols = {
        "log10_q_tls0": np.array([np.log10(r.q_tls0) for r in results]),
        "log10_sat_scale": np.array([np.log10(r.sat_scale) for r in results]),
        "temp_exp": np.array([r.temp_exp for r in results]),
        "photon_exp": np.array([r.photon_exp for r in results]),
        "log10_q_qp0": np.array([np.log10(r.q_qp0) for r in results]),
        "tc_k": np.array([r.tc_k for r in results]),
        "log10_q_other": np.array(
            [np.log10(r.q_other) if r.q_other else np.nan for r in results]
        ),
        "log10_sat_scale_root": np.array(
            [np.log10(r.sat_scale) / r.photon_exp for r in results]
        ),
    }
    names = list(cols)
    n = len(names)
    matrix = np.eye(n)
    flagged, zero_var = [], []
    for name, arr in cols.items():
        finite = arr[np.isfinite(arr)]
        if finite.size >= 2 and np.std(finite) == 0:
            zero_var.append(name)
    for i, j in itertools.combinations(range(n), 2):
        r = _pairwise_pearson(cols[names[i]], cols[names[j]])
        matrix[i, j] = matrix[j, i] = r
        if np.isfinite(r) and abs(r) > threshold:
            flagged.append((names[i], names[j], r))
    return CorrelationReport(
        names=names,
        matrix=matrix,
        flagged_pairs=flagged,
        zero_variance=zero_var,
        threshold=threshold,
        n_fits=len(results),
    )
