"""Batch orchestration: ingest -> trace fits -> sweep fits -> decomposition.

The pipeline never aborts on a per-device failure; failures and excluded
traces are aggregated into a machine-readable ledger. All outputs are
deterministic for a fixed (config, data) pair: canonical JSON, sorted keys,
seeded fits, worker-count-independent merge order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import io as rio
from .config import RunConfig
from .decomposition import (
    DecompositionResult,
    DeviceGeometry,
    Measured,
    SprScalingResult,
    SurfaceLossTable,
    aggregate_triplets,
    fit_spr_scaling,
    q_tls_at_photon,
)
from .freqshift import FreqShiftDataset, FreqShiftResult, fit_freq_shift
from .lineshape import (
    LineshapeResult,
    NoDipFoundError,
    ResonatorTrace,
    detect_nonlinearity,
    fit_trace,
    qc_constancy,
)
from .lossmodel import (
    InsufficientGridError,
    LossFitResult,
    SweepDataset,
    correlation_report,
    fit_sweep,
    photon_number,
)
from .numerics import FitDivergedError


@dataclass
class ExclusionRecord:
    key: str
    reason: str  # machine-readable: no_dip | fit_diverged | nonlinear | ...
    detail: str = ""

    def as_dict(self):
        return {"key": self.key, "reason": self.reason, "detail": self.detail}


@dataclass
class DeviceInputs:
    device_id: str
    geometry: Optional[DeviceGeometry] = None
    traces: List[ResonatorTrace] = field(default_factory=list)
    sweep: Optional[SweepDataset] = None
    freq_shift: Optional[FreqShiftDataset] = None


@dataclass
class IngestRegistry:
    devices: Dict[str, DeviceInputs] = field(default_factory=dict)
    surface_table: Optional[SurfaceLossTable] = None
    row_errors: List[rio.RowError] = field(default_factory=list)
    exclusions: List[ExclusionRecord] = field(default_factory=list)


def _trace_key(device_id: str, trace: ResonatorTrace) -> str:
    return (
        f"{device_id}/{trace.resonator_id}"
        f"@{trace.power_dbm}dBm,{trace.temperature_k}K"
    )


def ingest(input_dir) -> IngestRegistry:
    """Scan an input directory into a validated, deduplicated registry.

    Layout: ``devices.json`` (optional geometry registry),
    ``traces/<device>/*.csv[+.json]`` or single-file ``*.json`` bundles,
    ``sweeps/<device>.csv[+.json]``, ``fshift/<device>.csv[+.json]``, and an
    optional ``surface_table.json``. Malformed rows are reported with file
    and line, never silently dropped; duplicate (device, resonator, power,
    temperature) keys keep the first occurrence and ledger the rest.
    """
    root = Path(input_dir)
    registry = IngestRegistry()
    if not root.exists():
        raise FileNotFoundError(f"input directory not found: {root}")

    def device(device_id: str) -> DeviceInputs:
        return registry.devices.setdefault(device_id, DeviceInputs(device_id))

    reg_path = root / "devices.json"
    if reg_path.exists():
        for entry in rio.read_device_registry(reg_path):
            geom = rio.geometry_from_registry_entry(entry)
            device(geom.device_id).geometry = geom

    table_path = root / "surface_table.json"
    if table_path.exists():
        registry.surface_table = rio.read_surface_table(table_path)

    seen_keys = set()
    traces_root = root / "traces"
    if traces_root.exists():
        for dev_dir in sorted(p for p in traces_root.iterdir() if p.is_dir()):
            for path in sorted(dev_dir.iterdir()):
                try:
                    if path.suffix == ".csv":
                        trace, errors = rio.read_trace_csv(path)
                        registry.row_errors.extend(errors)
                    elif path.suffix == ".json" and not path.with_suffix(".csv").exists():
                        trace = rio.read_trace_json(path)
                    else:
                        continue
                except (rio.ParseError, ValueError) as exc:
                    registry.exclusions.append(
                        ExclusionRecord(str(path), "parse_error", str(exc))
                    )
                    continue
                key = _trace_key(dev_dir.name, trace)
                if key in seen_keys:
                    registry.exclusions.append(
                        ExclusionRecord(key, "duplicate_key", str(path))
                    )
                    continue
                seen_keys.add(key)
                device(dev_dir.name).traces.append(trace)

    sweeps_root = root / "sweeps"
    if sweeps_root.exists():
        for path in sorted(sweeps_root.iterdir()):
            try:
                if path.suffix == ".csv":
                    dataset, errors = rio.read_sweep_csv(path)
                    registry.row_errors.extend(errors)
                elif path.suffix == ".json" and not path.with_suffix(".csv").exists():
                    dataset = rio.read_sweep_json(path)
                else:
                    continue
            except (rio.ParseError, ValueError) as exc:
                registry.exclusions.append(
                    ExclusionRecord(str(path), "parse_error", str(exc))
                )
                continue
            device(dataset.device_id).sweep = dataset

    fshift_root = root / "fshift"
    if fshift_root.exists():
        for path in sorted(fshift_root.glob("*.csv")):
            try:
                dataset, errors = rio.read_freq_shift_csv(path)
                registry.row_errors.extend(errors)
            except (rio.ParseError, ValueError) as exc:
                registry.exclusions.append(
                    ExclusionRecord(str(path), "parse_error", str(exc))
                )
                continue
            device(dataset.device_id).freq_shift = dataset

    return registry


# ---------------------------------------------------------------------------
# Per-device processing
# ---------------------------------------------------------------------------


@dataclass
class TraceFitRecord:
    key: str
    power_dbm: Optional[float]
    temperature_k: Optional[float]
    nbar: Optional[float]
    result: Optional[LineshapeResult]
    excluded: bool = False
    exclusion_reason: str = ""


@dataclass
class DeviceReport:
    device_id: str
    trace_fits: List[TraceFitRecord] = field(default_factory=list)
    qc_report: Optional[dict] = None
    loss_fit: Optional[LossFitResult] = None
    freq_shift_fit: Optional[FreqShiftResult] = None
    exclusions: List[ExclusionRecord] = field(default_factory=list)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def _attenuation_for(config: RunConfig, resonator_id: str) -> float:
    return float(
        config.attenuation_db_by_resonator.get(resonator_id, config.attenuation_db)
    )


def process_device(inputs: DeviceInputs, config: RunConfig) -> DeviceReport:
    report = DeviceReport(device_id=inputs.device_id)
    if inputs.traces:
        _fit_device_traces(inputs, config, report)

    sweep = inputs.sweep
    if sweep is None and inputs.traces:
        sweep = _assemble_sweep(inputs.device_id, report)
    if sweep is not None:
        try:
            report.loss_fit = fit_sweep(
                sweep,
                seed=config.seed,
                n_starts=config.n_starts,
                identifiability_delta_chisq=config.identifiability_delta_chisq,
            )
        except (InsufficientGridError, FitDivergedError, ValueError) as exc:
            report.error = f"sweep_fit: {exc}"
    elif not inputs.traces:
        report.error = "no usable data"

    if inputs.freq_shift is not None:
        try:
            report.freq_shift_fit = fit_freq_shift(inputs.freq_shift, gamma=config.gamma)
        except (ValueError, FitDivergedError) as exc:
            report.exclusions.append(
                ExclusionRecord(inputs.device_id, "freq_shift_fit_failed", str(exc))
            )
    return report


def _fit_device_traces(inputs: DeviceInputs, config: RunConfig, report: DeviceReport) -> None:
    for trace in inputs.traces:
        key = _trace_key(inputs.device_id, trace)
        record = TraceFitRecord(
            key=key,
            power_dbm=trace.power_dbm,
            temperature_k=trace.temperature_k,
            nbar=None,
            result=None,
        )
        try:
            result = fit_trace(trace)
        except NoDipFoundError as exc:
            record.excluded, record.exclusion_reason = True, "no_dip"
            report.exclusions.append(ExclusionRecord(key, "no_dip", str(exc)))
            report.trace_fits.append(record)
            continue
        except FitDivergedError as exc:
            record.excluded, record.exclusion_reason = True, "fit_diverged"
            report.exclusions.append(ExclusionRecord(key, "fit_diverged", str(exc)))
            report.trace_fits.append(record)
            continue
        record.result = result
        screen = detect_nonlinearity(
            trace,
            result.params,
            rms_threshold=config.nonlinearity_rms_threshold,
            skew_threshold=config.nonlinearity_skew_threshold,
        )
        if screen.flagged:
            record.excluded, record.exclusion_reason = True, "nonlinear"
            report.exclusions.append(
                ExclusionRecord(
                    key,
                    "nonlinear",
                    f"rms_score={screen.rms_score:.3g} skew_score={screen.skew_score:.3g}",
                )
            )
        elif trace.power_dbm is not None:
            record.nbar = float(
                photon_number(
                    trace.power_dbm,
                    result.params,
                    _attenuation_for(config, trace.resonator_id),
                )
            )
        report.trace_fits.append(record)

    good = [r.result for r in report.trace_fits if r.result is not None and not r.excluded]
    if len(good) >= 3:
        qc = qc_constancy(good, cv_threshold=config.qc_cv_threshold)
        report.qc_report = {
            "mean_qc": qc.mean_qc,
            "cv": qc.cv,
            "passed": qc.passed,
            "n_traces": qc.n_traces,
            "threshold": qc.threshold,
        }


def _assemble_sweep(device_id: str, report: DeviceReport) -> Optional[SweepDataset]:
    rows = [
        r
        for r in report.trace_fits
        if not r.excluded
        and r.result is not None
        and r.nbar is not None
        and r.temperature_k is not None
    ]
    if len(rows) < 6:
        return None
    f0s = np.array([r.result.params.f0_hz for r in rows])
    omega = 2.0 * np.pi * float(np.median(f0s))
    try:
        return SweepDataset(
            device_id=device_id,
            omega_rad_s=omega,
            nbar=np.array([r.nbar for r in rows]),
            temperature_k=np.array([r.temperature_k for r in rows]),
            q_int=np.array([r.result.q_int for r in rows]),
            q_int_sigma=np.array(
                [max(r.result.sigmas.get("q_int", 0.0), 1e-9 * r.result.q_int) for r in rows]
            ),
        )
    except InsufficientGridError:
        return None


def _process_device_job(args) -> DeviceReport:
    inputs, config = args
    try:
        return process_device(inputs, config)
    except Exception as exc:  # defensive: one device must never sink the batch
        return DeviceReport(device_id=inputs.device_id, error=f"unexpected: {exc}")


# ---------------------------------------------------------------------------
# Serialization of results
# ---------------------------------------------------------------------------


def _measured_dict(m: Optional[Measured]) -> Optional[dict]:
    return None if m is None else {"value": m.value, "sigma": m.sigma}


def lineshape_record_dict(record: TraceFitRecord) -> dict:
    out = {
        "key": record.key,
        "power_dbm": record.power_dbm,
        "temperature_k": record.temperature_k,
        "nbar": record.nbar,
        "excluded": record.excluded,
        "exclusion_reason": record.exclusion_reason,
    }
    if record.result is not None:
        p = record.result.params
        out.update(
            {
                "f0_hz": p.f0_hz,
                "q_tot": p.q_tot,
                "q_int": record.result.q_int,
                "q_c": p.q_c,
                "asymmetry": p.asymmetry,
                "baseline": p.baseline,
                "sigmas": dict(record.result.sigmas),
                "reduced_chisq": record.result.reduced_chisq,
            }
        )
    return out


def loss_fit_dict(result: LossFitResult) -> dict:
    diag = result.diagnostics
    return {
        "device_id": result.device_id,
        "omega_rad_s": result.omega_rad_s,
        "params": {
            "q_tls0": result.q_tls0,
            "sat_scale": result.sat_scale,
            "temp_exp": result.temp_exp,
            "photon_exp": result.photon_exp,
            "q_qp0": result.q_qp0,
            "tc_k": result.tc_k,
            "q_other": result.q_other,
        },
        "sigmas": dict(result.sigmas),
        "param_names": list(result.param_names),
        "covariance": result.covariance,
        "reduced_chisq": result.reduced_chisq,
        "chisq": result.chisq,
        "converged": result.converged,
        "diagnostics": None
        if diag is None
        else {
            "q_other_identifiable": diag.q_other_identifiable,
            "delta_chisq_q_other": diag.delta_chisq_q_other,
            "qp_loss_share_max": diag.qp_loss_share_max,
            "qp_identifiable": diag.qp_identifiable,
            "tc_qqp_correlation": diag.tc_qqp_correlation,
            "n_starts": diag.n_starts,
        },
    }


def freq_shift_dict(result: FreqShiftResult) -> dict:
    return {
        "device_id": result.device_id,
        "omega_rad_s": result.omega_rad_s,
        "params": {
            "q_tls0": result.params.q_tls0,
            "tc_k": result.params.tc_k,
            "alpha_kin": result.params.alpha_kin,
            "gamma": result.params.gamma,
        },
        "sigmas": dict(result.sigmas),
        "covariance": result.covariance,
        "reduced_chisq": result.reduced_chisq,
        "t_ref_k": result.t_ref_k,
    }


def spr_result_dict(result: SprScalingResult) -> dict:
    return {
        "surface_tangents": {
            name: _measured_dict(m) for name, m in result.surface_tangents.items()
        },
        "bulk_loss": _measured_dict(result.bulk_loss),
        "tan_delta_bulk": _measured_dict(result.tan_delta_bulk),
        "p_bulk": result.p_bulk,
        "reduced_chisq": result.reduced_chisq,
        "n_devices": result.n_devices,
        "bulk_identified": result.bulk_identified,
    }


def decomposition_dict(result: DecompositionResult) -> dict:
    return {
        "ma_oxide": _measured_dict(result.ma_oxide),
        "sa_ms": _measured_dict(result.sa_ms),
        "hydrocarbon": _measured_dict(result.hydrocarbon),
        "pairs": [
            {
                "pair": list(p.pair),
                "ma_oxide": _measured_dict(p.ma_oxide),
                "sa_ms": _measured_dict(p.sa_ms),
                "degenerate": p.degenerate,
                "low_precision": p.low_precision,
            }
            for p in result.pair_solutions
        ],
        "hydrocarbon_by_pair": [_measured_dict(m) for m in result.hydrocarbon_by_pair],
        "consistency_chisq": dict(result.consistency_chisq),
        "unphysical": result.unphysical,
    }


# ---------------------------------------------------------------------------
# Campaign stage
# ---------------------------------------------------------------------------


def run_decomposition_stage(
    geometries: List[DeviceGeometry],
    fits: List[LossFitResult],
    config: RunConfig,
    surface_table: Optional[SurfaceLossTable] = None,
) -> Tuple[Optional[SprScalingResult], Optional[SprScalingResult], Optional[DecompositionResult], str]:
    """SPR regressions (low-power and working-photon) plus the pair solve.

    Returns (spr, spr_photon, decomposition, notice); unfittable stages come
    back as None with the reason in the notice string.
    """
    by_id = {f.device_id: f for f in fits}
    rows = [(g, by_id[g.device_id]) for g in geometries if g.device_id in by_id]
    if not rows:
        return None, None, None, "no devices with both geometry and a loss fit"
    p_ms = np.array([g.p_ms for g, _ in rows])
    q0 = np.array([f.q_tls0 for _, f in rows])
    sig0 = np.array([max(f.sigmas.get("q_tls0", 0.0), 1e-9 * f.q_tls0) for _, f in rows])
    treatments = [g.treatment for g, _ in rows]
    try:
        spr = fit_spr_scaling(
            p_ms,
            q0,
            sig0,
            treatments,
            p_bulk=config.p_bulk,
            min_devices_per_treatment=config.min_devices_per_treatment,
        )
    except ValueError as exc:
        return None, None, None, f"spr regression skipped: {exc}"

    photon = [
        q_tls_at_photon(f, nbar=config.photon_nbar, temperature_k=config.base_temperature_k)
        for _, f in rows
    ]
    q1 = np.array([m.value for m in photon])
    sig1 = np.array([max(m.sigma, 1e-9 * m.value) for m in photon])
    try:
        spr_photon = fit_spr_scaling(
            p_ms,
            q1,
            sig1,
            treatments,
            p_bulk=config.p_bulk,
            min_devices_per_treatment=config.min_devices_per_treatment,
        )
    except ValueError:
        spr_photon = None

    template = surface_table
    tangents = {name: m for name, m in spr.surface_tangents.items()}
    if template is not None:
        thicknesses = {
            name: (e.thickness_nm.value, e.thickness_nm.sigma)
            for name, e in template.entries.items()
        }
        residue = template.residue_treatments()
        ref = template.reference_thickness_nm
    else:
        thicknesses = None
        residue = ("native",)
        ref = 3.0
    try:
        table = SurfaceLossTable.from_loss_tangents(
            tangents,
            thicknesses=thicknesses,
            hydrocarbon_on=[r for r in residue if r in tangents],
            reference_thickness_nm=ref,
            bulk=spr.tan_delta_bulk,
        )
        decomposition = aggregate_triplets(table)
        notice = ""
    except (ValueError, KeyError) as exc:
        decomposition = None
        notice = f"decomposition skipped: {exc}"
    return spr, spr_photon, decomposition, notice


# ---------------------------------------------------------------------------
# Full run
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    n_devices: int
    n_failed: int
    device_status: Dict[str, str]
    notices: List[str]
    out_dir: str

    @property
    def exit_code(self) -> int:
        return 0 if self.n_failed == 0 else 1


def run_pipeline(config: RunConfig) -> RunSummary:
    config.validate()
    registry = ingest(config.input_dir)
    out = Path(config.out_dir)
    (out / "devices").mkdir(parents=True, exist_ok=True)
    (out / "campaign").mkdir(parents=True, exist_ok=True)

    surface_table = registry.surface_table
    if config.surface_table is not None:
        surface_table = rio.read_surface_table(config.surface_table)

    device_ids = sorted(registry.devices)
    jobs = [(registry.devices[d], config) for d in device_ids]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            reports = list(pool.map(_process_device_job, jobs))
    else:
        reports = [_process_device_job(j) for j in jobs]
    reports.sort(key=lambda r: r.device_id)

    exclusions = [e.as_dict() for e in registry.exclusions]
    notices: List[str] = []
    for report in reports:
        exclusions.extend(e.as_dict() for e in report.exclusions)
        dev_dir = out / "devices" / report.device_id
        dev_dir.mkdir(parents=True, exist_ok=True)
        rio.write_json(
            dev_dir / "lineshape_fits.json",
            {
                "device_id": report.device_id,
                "qc": report.qc_report,
                "traces": sorted(
                    (lineshape_record_dict(r) for r in report.trace_fits),
                    key=lambda d: d["key"],
                ),
            },
        )
        if report.loss_fit is not None:
            rio.write_json(dev_dir / "sweep_fit.json", loss_fit_dict(report.loss_fit))
        if report.freq_shift_fit is not None:
            rio.write_json(
                dev_dir / "freq_shift_fit.json", freq_shift_dict(report.freq_shift_fit)
            )
        rows = sorted(
            (
                (r.temperature_k, r.nbar, r.result.q_int, r.result.sigmas.get("q_int", 0.0))
                for r in report.trace_fits
                if r.result is not None and not r.excluded and r.nbar is not None
            ),
            key=lambda row: (row[0], row[1]),
        )
        if rows:
            rio.write_csv(
                dev_dir / "qint_vs_nbar.csv",
                ["temperature_k", "nbar", "q_int", "q_int_sigma"],
                rows,
            )

    geometries = [
        inp.geometry for inp in registry.devices.values() if inp.geometry is not None
    ]
    fits = [r.loss_fit for r in reports if r.loss_fit is not None]
    if geometries and fits:
        spr, spr_photon, decomposition, notice = run_decomposition_stage(
            sorted(geometries, key=lambda g: g.device_id), fits, config, surface_table
        )
        if notice:
            notices.append(notice)
        fit_by_id = {f.device_id: f for f in fits}
        geo_rows = [
            (g, fit_by_id[g.device_id])
            for g in sorted(geometries, key=lambda g: g.device_id)
            if g.device_id in fit_by_id
        ]
        if geo_rows:
            rio.write_csv(
                out / "campaign" / "spr_points.csv",
                ["device_id", "p_ms", "q_tls0", "q_tls0_sigma", "treatment"],
                [
                    (g.device_id, g.p_ms, f.q_tls0, f.sigmas.get("q_tls0", 0.0), g.treatment)
                    for g, f in geo_rows
                ],
            )
            photon_rows = [
                (
                    g.device_id,
                    g.p_ms,
                    q_tls_at_photon(
                        f, nbar=config.photon_nbar, temperature_k=config.base_temperature_k
                    ),
                    g.treatment,
                )
                for g, f in geo_rows
            ]
            rio.write_csv(
                out / "campaign" / "spr_points_photon.csv",
                ["device_id", "p_ms", "q_tls_photon", "q_tls_photon_sigma", "treatment"],
                [(d, p, m.value, m.sigma, t) for d, p, m, t in photon_rows],
            )
        if spr is not None:
            rio.write_json(out / "campaign" / "spr_regression.json", spr_result_dict(spr))
            rows = [
                (name, m.value, m.sigma)
                for name, m in sorted(spr.surface_tangents.items())
            ]
            rows.append(("bulk", spr.tan_delta_bulk.value, spr.tan_delta_bulk.sigma))
            rio.write_csv(
                out / "campaign" / "decomposition.csv",
                ["treatment", "tan_delta", "sigma"],
                rows,
            )
        if spr_photon is not None:
            rio.write_json(
                out / "campaign" / "spr_regression_photon.json",
                spr_result_dict(spr_photon),
            )
        if decomposition is not None:
            rio.write_json(
                out / "campaign" / "decomposition.json",
                decomposition_dict(decomposition),
            )
        if len(fits) >= 5:
            corr = correlation_report(sorted(fits, key=lambda f: f.device_id))
            rio.write_json(
                out / "campaign" / "parameter_correlations.json",
                {
                    "names": list(corr.names),
                    "matrix": corr.matrix,
                    "flagged_pairs": [[a, b, r] for a, b, r in corr.flagged_pairs],
                    "zero_variance": list(corr.zero_variance),
                    "threshold": corr.threshold,
                    "n_fits": corr.n_fits,
                },
            )
    else:
        notices.append("decomposition stage skipped: no geometry registry")

    rio.write_json(
        out / "exclusions.json",
        sorted(exclusions, key=lambda e: (e["key"], e["reason"])),
    )
    row_errors = sorted(
        ({"path": e.path, "line": e.line, "message": e.message} for e in registry.row_errors),
        key=lambda d: (d["path"], d["line"]),
    )
    if row_errors:
        rio.write_json(out / "row_errors.json", row_errors)

    status = {r.device_id: ("ok" if r.ok else r.error) for r in reports}
    summary = RunSummary(
        n_devices=len(reports),
        n_failed=sum(0 if r.ok else 1 for r in reports),
        device_status=status,
        notices=sorted(notices),
        out_dir=str(out),
    )
    rio.write_json(
        out / "run_summary.json",
        {
            "n_devices": summary.n_devices,
            "n_failed": summary.n_failed,
            "device_status": status,
            "notices": summary.notices,
        },
    )
    return summary
