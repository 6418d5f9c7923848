"""Surface vs bulk loss separation and surface-chemistry decomposition.

Two stages:

1. Across devices, the low-power TLS loss splits into a surface part that
   scales with the metal-substrate surface participation ratio (SPR) and a
   shared SPR-independent bulk part:

       1/Q_TLS0 = p_ms * tan_delta_surface(treatment) + L_bulk.

2. Across surface treatments, the fitted surface loss tangents combine with
   measured oxide thicknesses to separate an oxide term that scales with
   thickness, a hydrocarbon term present only on surfaces that kept their
   fabrication residue, and a thickness-independent remainder:

       tan_delta_i = (t_i/t0) * oxide + joint + gamma_i * hydrocarbon,

   where t0 is the reference interface thickness used for the SPR
   simulations. Solving any two residue-free treatments gives the oxide and
   joint terms; the residue-bearing treatment then gives the hydrocarbon
   term. All outputs here are referenced to p_ms (participation-ratio free);
   intrinsic per-interface values require the p_ma/p_ms ratio and are an
   optional rescale.

Uncertainty handling is first-order Gaussian propagation throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from .lossmodel import LossFitResult, q_tls
from .validation import as_float_array, check_positive, check_same_length

TREATMENTS = ("native", "BOE", "longBOE", "triacid")

# Oxide thickness per treatment (nm). Only the long-BOE value carries a
# published uncertainty; the others are treated as exact unless overridden.
DEFAULT_OXIDE_THICKNESS_NM: Dict[str, Tuple[float, float]] = {
    "native": (3.0, 0.0),
    "BOE": (2.4, 0.0),
    "longBOE": (1.5, 0.3),
    "triacid": (6.0, 0.0),
}

DEFAULT_REFERENCE_THICKNESS_NM = 3.0


class DegeneratePairError(ValueError):
    """The two treatments have identical oxide thickness; the pair is singular."""


def canonical_treatment(name: str) -> str:
    key = str(name).replace("_", "").replace("-", "").replace(" ", "").lower()
    mapping = {"native": "native", "boe": "BOE", "longboe": "longBOE", "triacid": "triacid"}
    if key not in mapping:
        raise ValueError(f"unknown treatment {name!r}; expected one of {TREATMENTS}")
    return mapping[key]


# ---------------------------------------------------------------------------
# Value-with-uncertainty helper
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Measured:
    value: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def scaled(self, factor: float) -> "Measured":
        return Measured(self.value * factor, self.sigma * abs(factor))


def inverse_variance_mean(values: Sequence[Measured]) -> Tuple[Measured, float]:
    """Weighted mean with 1/sigma^2 weights; returns (mean, consistency chi2).

    If every input is exact (sigma == 0) the plain mean is returned.
    """
    vals = np.array([m.value for m in values], dtype=float)
    sigs = np.array([m.sigma for m in values], dtype=float)
    if np.all(sigs == 0):
        mean = float(np.mean(vals))
        chi2 = np.inf if np.any(vals != mean) else 0.0
        return Measured(mean, 0.0), chi2
    w = 1.0 / np.maximum(sigs, 1e-300) ** 2
    mean = float(np.sum(w * vals) / np.sum(w))
    sigma = float(1.0 / np.sqrt(np.sum(w)))
    chi2 = float(np.sum(w * (vals - mean) ** 2))
    return Measured(mean, sigma), chi2


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class DeviceGeometry:
    device_id: str
    p_ms: float
    treatment: str
    device_type: str = "CPW"  # or "LE"
    p_ma: Optional[float] = None
    p_sa: Optional[float] = None
    etch: str = ""
    packaging: str = ""

    def __post_init__(self):
        self.treatment = canonical_treatment(self.treatment)
        for name, val in (("p_ms", self.p_ms), ("p_ma", self.p_ma), ("p_sa", self.p_sa)):
            if val is not None and not (0.0 < val < 1.0):
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass
class SurfaceEntry:
    loss_tangent: Measured
    thickness_nm: Measured
    hydrocarbon: bool  # carries the fabrication-residue term

    def __post_init__(self):
        if self.thickness_nm.value <= 0:
            raise ValueError("oxide thickness must be positive")


@dataclass
class SurfaceLossTable:
    entries: Dict[str, SurfaceEntry]
    reference_thickness_nm: float = DEFAULT_REFERENCE_THICKNESS_NM
    bulk: Optional[Measured] = None

    def __post_init__(self):
        self.entries = {canonical_treatment(k): v for k, v in self.entries.items()}

    @classmethod
    def from_loss_tangents(
        cls,
        tangents: Dict[str, Measured],
        thicknesses: Optional[Dict[str, Tuple[float, float]]] = None,
        hydrocarbon_on: Iterable[str] = ("native",),
        reference_thickness_nm: float = DEFAULT_REFERENCE_THICKNESS_NM,
        bulk: Optional[Measured] = None,
    ) -> "SurfaceLossTable":
        thick = dict(DEFAULT_OXIDE_THICKNESS_NM)
        for k, v in (thicknesses or {}).items():
            thick[canonical_treatment(k)] = tuple(v) if not np.isscalar(v) else (float(v), 0.0)
        residue = {canonical_treatment(n) for n in hydrocarbon_on}
        entries = {}
        for name, tangent in tangents.items():
            cname = canonical_treatment(name)
            t_val, t_sig = thick[cname]
            entries[cname] = SurfaceEntry(
                loss_tangent=tangent,
                thickness_nm=Measured(t_val, t_sig),
                hydrocarbon=cname in residue,
            )
        return cls(entries, reference_thickness_nm, bulk)

    def with_hydrocarbon_on(self, names: Iterable[str]) -> "SurfaceLossTable":
        residue = {canonical_treatment(n) for n in names}
        entries = {
            k: replace(v, hydrocarbon=(k in residue)) for k, v in self.entries.items()
        }
        return SurfaceLossTable(entries, self.reference_thickness_nm, self.bulk)

    def clean_treatments(self) -> List[str]:
        return [k for k, v in self.entries.items() if not v.hydrocarbon]

    def residue_treatments(self) -> List[str]:
        return [k for k, v in self.entries.items() if v.hydrocarbon]


# ---------------------------------------------------------------------------
# Pair / triplet algebra
# ---------------------------------------------------------------------------


@dataclass
class PairSolution:
    pair: Tuple[str, str]
    ma_oxide: Measured  # oxide term at reference thickness, p_ms-referenced
    sa_ms: Measured  # thickness-independent joint term, p_ms-referenced
    degenerate: bool = False
    low_precision: bool = False


def solve_pair(a: str, b: str, table: SurfaceLossTable) -> PairSolution:
    """Solve two same-residue-state treatments for the oxide and joint terms.

        oxide = t0 * (tan_a - tan_b) / (t_a - t_b)
        joint = (t_a * tan_b - t_b * tan_a) / (t_a - t_b)

    Symmetric under swapping (a, b). Flags the pair as degenerate when the
    thickness difference is within uncertainty of zero (sigma then blows up
    through the propagation, which is the honest answer).
    """
    a, b = canonical_treatment(a), canonical_treatment(b)
    ea, eb = table.entries[a], table.entries[b]
    if ea.hydrocarbon != eb.hydrocarbon:
        raise ValueError(
            f"pair ({a}, {b}) mixes residue-bearing and residue-free treatments"
        )
    t0 = table.reference_thickness_nm
    da, db = ea.loss_tangent, eb.loss_tangent
    ta, tb = ea.thickness_nm, eb.thickness_nm
    dt = ta.value - tb.value
    if dt == 0.0:
        raise DegeneratePairError(f"treatments {a} and {b} have equal thickness")

    ma = t0 * (da.value - db.value) / dt
    sams = (ta.value * db.value - tb.value * da.value) / dt

    var_ma = (
        (t0 / dt * da.sigma) ** 2
        + (t0 / dt * db.sigma) ** 2
        + (ma / dt * ta.sigma) ** 2
        + (ma / dt * tb.sigma) ** 2
    )
    var_sams = (
        (tb.value / dt * da.sigma) ** 2
        + (ta.value / dt * db.sigma) ** 2
        + ((db.value - sams) / dt * ta.sigma) ** 2
        + ((sams - da.value) / dt * tb.sigma) ** 2
    )
    ma_m = Measured(ma, float(np.sqrt(var_ma)))
    sams_m = Measured(sams, float(np.sqrt(var_sams)))
    degenerate = abs(dt) < 2.0 * np.hypot(ta.sigma, tb.sigma)
    low_precision = (ma_m.sigma >= abs(ma_m.value)) or (
        sams_m.sigma >= abs(sams_m.value)
    )
    return PairSolution((a, b), ma_m, sams_m, degenerate, low_precision)


def solve_hydrocarbon(
    native: SurfaceEntry,
    ma_oxide: Measured,
    sa_ms: Measured,
    table: SurfaceLossTable,
) -> Measured:
    """Residue loss term from the residue-bearing treatment and a pair solution.

        hydrocarbon = tan_native - (t_native/t0) * oxide - joint

    Inputs are treated as independent for the propagation.
    """
    if not native.hydrocarbon:
        raise ValueError("the residue-bearing entry must have hydrocarbon=True")
    t0 = table.reference_thickness_nm
    tn = native.thickness_nm
    value = native.loss_tangent.value - (tn.value / t0) * ma_oxide.value - sa_ms.value
    var = (
        native.loss_tangent.sigma**2
        + (tn.value / t0 * ma_oxide.sigma) ** 2
        + sa_ms.sigma**2
        + (ma_oxide.value / t0 * tn.sigma) ** 2
    )
    return Measured(value, float(np.sqrt(var)))


@dataclass
class DecompositionResult:
    ma_oxide: Measured
    sa_ms: Measured
    hydrocarbon: Optional[Measured]
    pair_solutions: List[PairSolution]
    hydrocarbon_by_pair: List[Measured]
    consistency_chisq: Dict[str, float]
    unphysical: bool = False

    def reconstruct(self, entry: SurfaceEntry, t0: float) -> float:
        """Model loss tangent for a residue-free entry from the aggregates."""
        return (entry.thickness_nm.value / t0) * self.ma_oxide.value + self.sa_ms.value


def aggregate_triplets(table: SurfaceLossTable) -> DecompositionResult:
    """Solve every residue-free pair, then inverse-variance-average.

    A degenerate pair keeps its (huge) propagated sigma and therefore gets
    essentially no weight in the averages.
    """
    clean = table.clean_treatments()
    if len(clean) < 2:
        raise ValueError("need at least two residue-free treatments")
    residue = table.residue_treatments()
    if len(residue) > 1:
        raise ValueError(
            "this solver expects a single residue-bearing treatment; "
            "use solve_alternate_placement for other configurations"
        )
    pairs = [solve_pair(a, b, table) for a, b in itertools.combinations(sorted(clean), 2)]
    ma_mean, ma_chi2 = inverse_variance_mean([p.ma_oxide for p in pairs])
    sams_mean, sams_chi2 = inverse_variance_mean([p.sa_ms for p in pairs])

    hc_by_pair: List[Measured] = []
    hc_mean = None
    chi2 = {"ma_oxide": ma_chi2, "sa_ms": sams_chi2}
    if residue:
        native = table.entries[residue[0]]
        hc_by_pair = [
            solve_hydrocarbon(native, p.ma_oxide, p.sa_ms, table) for p in pairs
        ]
        hc_mean, hc_chi2 = inverse_variance_mean(hc_by_pair)
        chi2["hydrocarbon"] = hc_chi2

    values = [ma_mean.value, sams_mean.value] + (
        [hc_mean.value] if hc_mean is not None else []
    )
    return DecompositionResult(
        ma_oxide=ma_mean,
        sa_ms=sams_mean,
        hydrocarbon=hc_mean,
        pair_solutions=pairs,
        hydrocarbon_by_pair=hc_by_pair,
        consistency_chisq=chi2,
        unphysical=any(v < 0 for v in values),
    )


@dataclass
class PlacementSolution:
    triplet: Tuple[str, str, str]
    ma_oxide: Measured
    sa_ms: Measured
    hydrocarbon: Measured
    unphysical: bool


def solve_alternate_placement(
    table: SurfaceLossTable,
    hydrocarbon_treatments: Iterable[str] = ("native", "BOE", "longBOE"),
) -> List[PlacementSolution]:
    """Solve an alternative residue arrangement (residue on every non-acid
    surface, acid-cleaned surface residue-free).

    Kept as a diagnostic: on the published numbers this arrangement yields
    negative loss tangents, which is the signature that rules it out.
    """
    alt = table.with_hydrocarbon_on(hydrocarbon_treatments)
    clean = alt.clean_treatments()
    if len(clean) != 1:
        raise ValueError("alternate placement expects exactly one residue-free treatment")
    clean_name = clean[0]
    e_clean = alt.entries[clean_name]
    t0 = alt.reference_thickness_nm

    solutions = []
    for a, b in itertools.combinations(sorted(alt.residue_treatments()), 2):
        pair = solve_pair(a, b, alt)
        ma = pair.ma_oxide
        s_val = e_clean.loss_tangent.value - (e_clean.thickness_nm.value / t0) * ma.value
        s_var = (
            e_clean.loss_tangent.sigma**2
            + (e_clean.thickness_nm.value / t0 * ma.sigma) ** 2
            + (ma.value / t0 * e_clean.thickness_nm.sigma) ** 2
        )
        s = Measured(s_val, float(np.sqrt(s_var)))
        ea = alt.entries[a]
        hc_val = ea.loss_tangent.value - (ea.thickness_nm.value / t0) * ma.value - s.value
        hc_var = (
            ea.loss_tangent.sigma**2
            + (ea.thickness_nm.value / t0 * ma.sigma) ** 2
            + s.sigma**2
            + (ma.value / t0 * ea.thickness_nm.sigma) ** 2
        )
        hc = Measured(hc_val, float(np.sqrt(hc_var)))
        unphysical = min(ma.value, s.value, hc.value) < 0
        solutions.append(PlacementSolution((a, b, clean_name), ma, s, hc, unphysical))
    return solutions


@dataclass
class IntrinsicLoss:
    oxide: Measured
    sa_ms: Measured
    hydrocarbon: Optional[Measured]
    beta_ma: float


def rescale_intrinsic(
    result: DecompositionResult,
    alpha_ms: Optional[float] = None,
    beta_ma: Optional[float] = None,
) -> IntrinsicLoss:
    """Convert p_ms-referenced terms to intrinsic per-interface loss tangents.

    ``beta_ma`` is p_ma/p_ms and ``alpha_ms`` its inverse; either suffices.
    Passing both cross-checks that they describe the same geometry.
    """
    if beta_ma is None and alpha_ms is None:
        raise ValueError("supply beta_ma (p_ma/p_ms) or alpha_ms (p_ms/p_ma)")
    if beta_ma is not None and alpha_ms is not None:
        if abs(beta_ma * alpha_ms - 1.0) > 1e-6:
            raise ValueError("beta_ma * alpha_ms must equal 1 for one geometry")
    if beta_ma is None:
        beta_ma = 1.0 / alpha_ms
    if beta_ma <= 0:
        raise ValueError("beta_ma must be positive")
    inv = 1.0 / beta_ma
    return IntrinsicLoss(
        oxide=result.ma_oxide.scaled(inv),
        sa_ms=result.sa_ms.scaled(inv),
        hydrocarbon=None if result.hydrocarbon is None else result.hydrocarbon.scaled(inv),
        beta_ma=beta_ma,
    )


# ---------------------------------------------------------------------------
# SPR scaling regression (shared bulk term)
# ---------------------------------------------------------------------------


@dataclass
class SprScalingResult:
    surface_tangents: Dict[str, Measured]
    bulk_loss: Measured  # the shared SPR-independent loss (1/Q units)
    tan_delta_bulk: Measured  # bulk_loss / p_bulk
    p_bulk: float
    covariance: np.ndarray = field(repr=False, default=None)
    param_names: Sequence[str] = ()
    reduced_chisq: float = np.nan
    n_devices: int = 0
    bulk_identified: bool = True

    def ratio(self, a: str, b: str) -> Measured:
        """tan_a / tan_b with covariance-aware uncertainty."""
        a, b = canonical_treatment(a), canonical_treatment(b)
        ia = self.param_names.index(a)
        ib = self.param_names.index(b)
        va, vb = self.surface_tangents[a].value, self.surface_tangents[b].value
        cov = self.covariance
        value = va / vb
        var = (
            cov[ia, ia] / vb**2
            + va**2 * cov[ib, ib] / vb**4
            - 2.0 * va * cov[ia, ib] / vb**3
        )
        return Measured(value, float(np.sqrt(max(var, 0.0))))


class SprScalingFit(BaseEstimator):
    """Weighted linear fit of 1/Q_TLS0 = p_ms * tan_surface(treatment) + L_bulk.

    One slope per treatment, one shared intercept. ``p_bulk`` converts the
    intercept into a bulk loss tangent (unity by default: the bulk energy
    fraction is treated as geometry-independent).
    """

    def __init__(self, p_bulk: float = 1.0, min_devices_per_treatment: int = 3):
        self.p_bulk = p_bulk
        self.min_devices_per_treatment = min_devices_per_treatment

    def fit(self, p_ms, q_tls0, sigma=None, treatment=None):
        p = as_float_array(p_ms, "p_ms")
        q = as_float_array(q_tls0, "q_tls0")
        check_same_length(("p_ms", p), ("q_tls0", q))
        check_positive(p, "p_ms")
        check_positive(q, "q_tls0")
        if treatment is None:
            labels = np.array(["BOE"] * p.size)
        else:
            labels = np.array([canonical_treatment(t) for t in treatment])
        names = sorted(set(labels))
        for name in names:
            if np.count_nonzero(labels == name) < self.min_devices_per_treatment:
                raise ValueError(
                    f"treatment {name} has fewer than "
                    f"{self.min_devices_per_treatment} devices"
                )

        y = 1.0 / q
        if sigma is None:
            w = np.ones_like(y)
            scale_cov = True
        else:
            sig_q = as_float_array(sigma, "sigma")
            check_positive(sig_q, "sigma")
            w = q**2 / sig_q  # 1/sigma_y with sigma_y = sigma_q / q^2
            scale_cov = False

        n_par = len(names) + 1
        design = np.zeros((p.size, n_par))
        for j, name in enumerate(names):
            design[labels == name, j] = p[labels == name]
        design[:, -1] = 1.0

        xw = design * w[:, None]
        yw = y * w
        beta, _, rank, _ = np.linalg.lstsq(xw, yw, rcond=None)
        resid = yw - xw @ beta
        chisq = float(resid @ resid)
        dof = max(p.size - n_par, 1)
        cov = np.linalg.pinv(xw.T @ xw)
        if scale_cov:
            cov = cov * chisq / dof

        tangents = {
            name: Measured(float(beta[j]), float(np.sqrt(max(cov[j, j], 0.0))))
            for j, name in enumerate(names)
        }
        bulk = Measured(float(beta[-1]), float(np.sqrt(max(cov[-1, -1], 0.0))))
        self.result_ = SprScalingResult(
            surface_tangents=tangents,
            bulk_loss=bulk,
            tan_delta_bulk=bulk.scaled(1.0 / self.p_bulk),
            p_bulk=self.p_bulk,
            covariance=cov,
            param_names=tuple(names) + ("bulk",),
            reduced_chisq=chisq / dof,
            n_devices=int(p.size),
            bulk_identified=bool(bulk.value > 2.0 * bulk.sigma),
        )
        self._labels = labels
        return self

    def predict(self, p_ms, treatment):
        res = self.result_
        p = np.asarray(p_ms, dtype=float)
        if isinstance(treatment, str):
            tang = res.surface_tangents[canonical_treatment(treatment)].value
            return 1.0 / (p * tang + res.bulk_loss.value)
        tang = np.array(
            [res.surface_tangents[canonical_treatment(t)].value for t in treatment]
        )
        return 1.0 / (p * tang + res.bulk_loss.value)


def fit_spr_scaling(p_ms, q_tls0, sigma=None, treatment=None, p_bulk=1.0, **options):
    est = SprScalingFit(p_bulk=p_bulk, **options).fit(p_ms, q_tls0, sigma, treatment)
    return est.result_


# ---------------------------------------------------------------------------
# Single-photon TLS quality factor
# ---------------------------------------------------------------------------


def q_tls_at_photon(
    fit: LossFitResult, nbar: float = 1.0, temperature_k: float = 0.017
) -> Measured:
    """TLS quality factor at a working photon number and base temperature.

    The uncertainty comes from the fitted covariance via the delta method
    over (q_tls0, sat_scale, temp_exp, photon_exp).
    """
    names = list(fit.param_names)
    active = ["q_tls0", "sat_scale", "temp_exp", "photon_exp"]
    theta = np.array([getattr(fit, n) for n in active])

    def value(v):
        return q_tls(nbar, temperature_k, fit.omega_rad_s, *v)

    base = float(value(theta))
    if fit.covariance is None:
        return Measured(base, 0.0)
    idx = [names.index(n) for n in active]
    cov = fit.covariance[np.ix_(idx, idx)]
    grad = np.zeros(len(active))
    for i in range(len(active)):
        h = max(abs(theta[i]) * 1e-6, 1e-12)
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (value(up) - value(dn)) / (2.0 * h)
    var = float(grad @ cov @ grad)
    return Measured(base, float(np.sqrt(max(var, 0.0))))


# ---------------------------------------------------------------------------
# Oxide-thickness extrapolation from photoelectron intensity fractions
# ---------------------------------------------------------------------------


@dataclass
class ThicknessExtrapolation:
    thickness_nm: Measured
    slope: float
    intercept: float
    n_points: int


def extrapolate_oxide_thickness(points, query_intensity: float) -> ThicknessExtrapolation:
    """Ordinary least-squares line through (intensity fraction, thickness)
    calibration points, evaluated at ``query_intensity``.

    The prediction uncertainty is the fit-parameter part only (the residual
    scatter of the calibration line dominates the estimate).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (intensity, thickness) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.ptp(x) == 0:
        raise ValueError("calibration intensities are all identical")
    design = np.column_stack([np.ones_like(x), x])
    beta, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    n = x.size
    s2 = float(resid @ resid) / (n - 2) if n > 2 else 0.0
    cov = s2 * np.linalg.inv(design.T @ design)
    v = np.array([1.0, query_intensity])
    pred = float(v @ beta)
    var = float(v @ cov @ v)
    return ThicknessExtrapolation(
        thickness_nm=Measured(pred, float(np.sqrt(max(var, 0.0)))),
        slope=float(beta[1]),
        intercept=float(beta[0]),
        n_points=int(n),
    )
