"""Special functions and generic bounded nonlinear least squares.

The special functions are thin, domain-checked wrappers around
:mod:`scipy.special`; scaled variants are exposed so the model modules can
compose exponentials without overflowing at deep-cryogenic arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special
from scipy.optimize import least_squares


class FitDivergedError(RuntimeError):
    """Raised when an optimizer fails to reach a converged solution."""


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

# exp(x) overflows double precision just above this argument
_EXP_OVERFLOW = 709.0


def _scalar_like(x, out):
    if np.isscalar(x) or (isinstance(x, np.ndarray) and x.ndim == 0):
        return float(out)
    return out


def bessel_k0(x):
    """Modified Bessel function of the second kind, order zero. Requires x > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("bessel_k0 requires finite x > 0")
    return _scalar_like(x, special.k0(arr))


def bessel_k0_scaled(x):
    """exp(x) * K0(x), safe against underflow of K0 at large x. Requires x > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("bessel_k0_scaled requires finite x > 0")
    return _scalar_like(x, special.k0e(arr))


def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero (even in x).

    Raises :class:`OverflowError` once exp(|x|) exceeds double range; use
    :func:`bessel_i0_scaled` there instead.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)):
        raise ValueError("bessel_i0 requires finite x")
    if np.any(np.abs(arr) > _EXP_OVERFLOW + 5.0):
        raise OverflowError("bessel_i0 overflows for |x| > ~709; use bessel_i0_scaled")
    out = special.i0(arr)
    if np.any(~np.isfinite(out)):
        raise OverflowError("bessel_i0 overflowed; use bessel_i0_scaled")
    return _scalar_like(x, out)


def bessel_i0_scaled(x):
    """exp(-|x|) * I0(x); finite for all finite x."""
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)):
        raise ValueError("bessel_i0_scaled requires finite x")
    return _scalar_like(x, special.i0e(arr))


def digamma_real_part(y):
    """Re psi(1/2 + i*y) for real y. Even in y; ~ln|y| as |y| grows."""
    arr = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(arr)):
        raise ValueError("digamma_real_part requires finite y")
    return _scalar_like(y, special.digamma(0.5 + 1j * arr).real)


# ---------------------------------------------------------------------------
# Weighted nonlinear least squares with box bounds
# ---------------------------------------------------------------------------


@dataclass
class FitProblem:
    """A bounded weighted least-squares problem.

    ``residual(params)`` returns the raw residual vector (model - data);
    ``weights`` (1/sigma per datum) are applied by the fitter. ``jacobian``
    is the derivative of the *raw* residuals and is optional; a forward
    finite-difference estimate is used when it is absent.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    weights: Optional[np.ndarray] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.x0.size
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds must match parameter dimension")
        if np.any(self.lower >= self.upper):
            raise ValueError("lower bounds must be strictly below upper bounds")
        if np.any(self.x0 < self.lower) or np.any(self.x0 > self.upper):
            raise ValueError("initial point must lie within bounds")
        r0 = np.asarray(self.residual(self.x0), dtype=float)
        if r0.size < n:
            raise ValueError("residual dimension must be >= parameter dimension")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.size != r0.size:
                raise ValueError("weights must match residual dimension")
            if np.any(self.weights <= 0) or np.any(~np.isfinite(self.weights)):
                raise ValueError("weights must be finite and strictly positive")


@dataclass
class FitOutcome:
    params: np.ndarray
    covariance: np.ndarray
    reduced_chisq: float
    converged: bool
    n_evaluations: int
    rank_deficient: bool = False
    gradient_norm: float = np.nan
    message: str = ""
    chisq: float = np.nan
    n_residuals: int = 0
    fitted_residuals: np.ndarray = field(default=None, repr=False)


def covariance_from_jacobian(jac: np.ndarray, rcond: float = 1e-12):
    """Gauss-Newton covariance inv(J^T J) via SVD, with a rank-deficiency flag."""
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    cutoff = rcond * s[0] if s.size and s[0] > 0 else 0.0
    keep = s > cutoff
    rank_deficient = not bool(np.all(keep))
    inv_s2 = np.zeros_like(s)
    inv_s2[keep] = 1.0 / s[keep] ** 2
    cov = (vt.T * inv_s2) @ vt
    # enforce exact symmetry against round-off
    cov = 0.5 * (cov + cov.T)
    return cov, rank_deficient


def nlls_fit(
    problem: FitProblem,
    *,
    ftol: float = 1e-10,
    max_iterations: int = 200,
) -> FitOutcome:
    """Minimize ||w * residual(p)||^2 subject to box bounds.

    Uses a damped Gauss-Newton trust-region method; the covariance is the
    Gauss-Newton approximation from the weighted Jacobian at the optimum.
    """
    w = problem.weights if problem.weights is not None else 1.0

    def fun(p):
        return w * np.asarray(problem.residual(p), dtype=float)

    if problem.jacobian is not None:
        if np.isscalar(w):
            jac = lambda p: w * np.asarray(problem.jacobian(p), dtype=float)  # noqa: E731
        else:
            jac = lambda p: np.asarray(problem.jacobian(p), dtype=float) * w[:, None]  # noqa: E731
    else:
        jac = "2-point"

    n = problem.x0.size
    res = least_squares(
        fun,
        problem.x0,
        jac=jac,
        bounds=(problem.lower, problem.upper),
        method="trf",
        ftol=ftol,
        xtol=ftol,
        gtol=1e-12,
        max_nfev=max_iterations * (n + 1),
        x_scale="jac",
    )
    cov, rank_deficient = covariance_from_jacobian(res.jac)
    m = res.fun.size
    chisq = float(2.0 * res.cost)
    dof = max(m - n, 1)
    return FitOutcome(
        params=res.x,
        covariance=cov,
        reduced_chisq=chisq / dof,
        converged=bool(res.status > 0),
        n_evaluations=int(res.nfev),
        rank_deficient=rank_deficient,
        gradient_norm=float(res.optimality),
        message=str(res.message),
        chisq=chisq,
        n_residuals=int(m),
        fitted_residuals=res.fun,
    )
