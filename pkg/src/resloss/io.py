"""File formats and deterministic serialization.

Formats:

* trace: ``<name>.csv`` with header ``freq_hz,s21_mag[,s21_sigma]`` plus a
  sidecar ``<name>.json`` holding ``{power_dbm, temperature_k, resonator_id}``;
  or a single ``<name>.json`` bundling both.
* sweep table: ``<name>.csv`` with header
  ``nbar,temperature_k,q_int[,q_int_sigma]`` plus sidecar metadata
  ``{device_id, omega_rad_s}`` (or ``f0_hz``).
* frequency shift: ``<name>.csv`` with header
  ``temperature_k,df_over_f[,sigma]`` plus sidecar ``{f0_hz, device_id}``.
* device registry and surface table: JSON.

All JSON written here is canonical: sorted keys, floats at 17 significant
digits, no locale dependence, newline-terminated. Reports rendered twice from
the same inputs are byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .decomposition import (
    DeviceGeometry,
    Measured,
    SurfaceEntry,
    SurfaceLossTable,
)
from .freqshift import FreqShiftDataset
from .lineshape import ResonatorTrace
from .lossmodel import SweepDataset


class ParseError(ValueError):
    def __init__(self, path, line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        loc = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{loc}: {message}")


@dataclass
class RowError:
    path: str
    line: int
    message: str


# ---------------------------------------------------------------------------
# Canonical JSON
# ---------------------------------------------------------------------------


def _canonical(obj):
    """Render one value; floats via repr17, non-finite as sentinel strings."""
    if obj is None or isinstance(obj, (bool, str, int)):
        return json.dumps(obj)
    if isinstance(obj, (np.bool_,)):
        return json.dumps(bool(obj))
    if isinstance(obj, (np.integer,)):
        return json.dumps(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return '"NaN"'
        if math.isinf(x):
            return '"Infinity"' if x > 0 else '"-Infinity"'
        return format(x, ".17g")
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_canonical(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        return (
            "{"
            + ", ".join(json.dumps(str(k)) + ": " + _canonical(v) for k, v in items)
            + "}"
        )
    raise TypeError(f"cannot serialize {type(obj)!r}")


def canonical_json_dumps(obj) -> str:
    return _canonical(obj) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json_dumps(obj), encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON: {exc.msg}") from exc


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: List[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(format_float(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_numeric_csv(path, required: List[str], optional: List[str]):
    """Parse a headered numeric CSV; collect malformed rows instead of dying."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise ParseError(path, None, "empty file")
    header = [h.strip() for h in lines[0].split(",")]
    for col in required:
        if col not in header:
            raise ParseError(path, 1, f"missing column {col!r} in header {header}")
    idx = {col: header.index(col) for col in required}
    for col in optional:
        if col in header:
            idx[col] = header.index(col)
    columns: Dict[str, List[float]] = {col: [] for col in idx}
    errors: List[RowError] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            parsed = {col: float(cells[i]) for col, i in idx.items()}
        except (ValueError, IndexError) as exc:
            errors.append(RowError(str(path), line_no, f"malformed row: {exc}"))
            continue
        for col, val in parsed.items():
            columns[col].append(val)
    return columns, errors


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


def _trace_meta(trace: ResonatorTrace) -> dict:
    return {
        "power_dbm": trace.power_dbm,
        "temperature_k": trace.temperature_k,
        "resonator_id": trace.resonator_id,
    }


def write_trace_csv(csv_path, trace: ResonatorTrace) -> None:
    csv_path = Path(csv_path)
    header = ["freq_hz", "s21_mag"] + (["s21_sigma"] if trace.sigma is not None else [])
    if trace.sigma is not None:
        rows = zip(trace.freq_hz, trace.s21_mag, trace.sigma)
    else:
        rows = zip(trace.freq_hz, trace.s21_mag)
    write_csv(csv_path, header, rows)
    write_json(csv_path.with_suffix(".json"), _trace_meta(trace))


def read_trace_csv(csv_path) -> Tuple[ResonatorTrace, List[RowError]]:
    csv_path = Path(csv_path)
    sidecar = csv_path.with_suffix(".json")
    if not sidecar.exists():
        raise ParseError(sidecar, None, "missing trace metadata sidecar")
    meta = read_json(sidecar)
    cols, errors = _read_numeric_csv(csv_path, ["freq_hz", "s21_mag"], ["s21_sigma"])
    trace = ResonatorTrace(
        freq_hz=np.asarray(cols["freq_hz"]),
        s21_mag=np.asarray(cols["s21_mag"]),
        sigma=np.asarray(cols["s21_sigma"]) if "s21_sigma" in cols else None,
        power_dbm=meta.get("power_dbm"),
        temperature_k=meta.get("temperature_k"),
        resonator_id=str(meta.get("resonator_id", "")),
    )
    return trace, errors


def write_trace_json(path, trace: ResonatorTrace) -> None:
    payload = dict(_trace_meta(trace))
    payload["freq_hz"] = trace.freq_hz
    payload["s21_mag"] = trace.s21_mag
    if trace.sigma is not None:
        payload["s21_sigma"] = trace.sigma
    write_json(path, payload)


def read_trace_json(path) -> ResonatorTrace:
    data = read_json(path)
    for col in ("freq_hz", "s21_mag"):
        if col not in data:
            raise ParseError(path, None, f"missing field {col!r}")
    return ResonatorTrace(
        freq_hz=np.asarray(data["freq_hz"], dtype=float),
        s21_mag=np.asarray(data["s21_mag"], dtype=float),
        sigma=np.asarray(data["s21_sigma"], dtype=float) if "s21_sigma" in data else None,
        power_dbm=data.get("power_dbm"),
        temperature_k=data.get("temperature_k"),
        resonator_id=str(data.get("resonator_id", "")),
    )


# ---------------------------------------------------------------------------
# Sweep tables
# ---------------------------------------------------------------------------


def write_sweep_csv(csv_path, dataset: SweepDataset) -> None:
    csv_path = Path(csv_path)
    header = ["nbar", "temperature_k", "q_int"] + (
        ["q_int_sigma"] if dataset.q_int_sigma is not None else []
    )
    if dataset.q_int_sigma is not None:
        rows = zip(dataset.nbar, dataset.temperature_k, dataset.q_int, dataset.q_int_sigma)
    else:
        rows = zip(dataset.nbar, dataset.temperature_k, dataset.q_int)
    write_csv(csv_path, header, rows)
    write_json(
        csv_path.with_suffix(".json"),
        {"device_id": dataset.device_id, "omega_rad_s": dataset.omega_rad_s},
    )


def write_sweep_json(path, dataset: SweepDataset) -> None:
    payload = {
        "device_id": dataset.device_id,
        "omega_rad_s": dataset.omega_rad_s,
        "nbar": dataset.nbar,
        "temperature_k": dataset.temperature_k,
        "q_int": dataset.q_int,
    }
    if dataset.q_int_sigma is not None:
        payload["q_int_sigma"] = dataset.q_int_sigma
    write_json(path, payload)


def read_sweep_json(path) -> SweepDataset:
    data = read_json(path)
    for col in ("nbar", "temperature_k", "q_int"):
        if col not in data:
            raise ParseError(path, None, f"missing field {col!r}")
    if "omega_rad_s" in data:
        omega = float(data["omega_rad_s"])
    elif "f0_hz" in data:
        omega = 2.0 * np.pi * float(data["f0_hz"])
    else:
        raise ParseError(path, None, "need omega_rad_s or f0_hz")
    return SweepDataset(
        device_id=str(data.get("device_id", Path(path).stem)),
        omega_rad_s=omega,
        nbar=np.asarray(data["nbar"], dtype=float),
        temperature_k=np.asarray(data["temperature_k"], dtype=float),
        q_int=np.asarray(data["q_int"], dtype=float),
        q_int_sigma=np.asarray(data["q_int_sigma"], dtype=float)
        if "q_int_sigma" in data
        else None,
    )


def read_sweep_csv(csv_path) -> Tuple[SweepDataset, List[RowError]]:
    csv_path = Path(csv_path)
    sidecar = csv_path.with_suffix(".json")
    if not sidecar.exists():
        raise ParseError(sidecar, None, "missing sweep metadata sidecar")
    meta = read_json(sidecar)
    if "omega_rad_s" in meta:
        omega = float(meta["omega_rad_s"])
    elif "f0_hz" in meta:
        omega = 2.0 * np.pi * float(meta["f0_hz"])
    else:
        raise ParseError(sidecar, None, "need omega_rad_s or f0_hz in metadata")
    cols, errors = _read_numeric_csv(
        csv_path, ["nbar", "temperature_k", "q_int"], ["q_int_sigma"]
    )
    dataset = SweepDataset(
        device_id=str(meta.get("device_id", csv_path.stem)),
        omega_rad_s=omega,
        nbar=np.asarray(cols["nbar"]),
        temperature_k=np.asarray(cols["temperature_k"]),
        q_int=np.asarray(cols["q_int"]),
        q_int_sigma=np.asarray(cols["q_int_sigma"]) if "q_int_sigma" in cols else None,
    )
    return dataset, errors


# ---------------------------------------------------------------------------
# Frequency-shift tables
# ---------------------------------------------------------------------------


def write_freq_shift_csv(csv_path, dataset: FreqShiftDataset) -> None:
    csv_path = Path(csv_path)
    header = ["temperature_k", "df_over_f"] + (["sigma"] if dataset.sigma is not None else [])
    if dataset.sigma is not None:
        rows = zip(dataset.temperature_k, dataset.df_over_f, dataset.sigma)
    else:
        rows = zip(dataset.temperature_k, dataset.df_over_f)
    write_csv(csv_path, header, rows)
    write_json(
        csv_path.with_suffix(".json"),
        {
            "device_id": dataset.device_id,
            "f0_hz": dataset.omega_rad_s / (2.0 * np.pi),
        },
    )


def read_freq_shift_csv(csv_path) -> Tuple[FreqShiftDataset, List[RowError]]:
    csv_path = Path(csv_path)
    sidecar = csv_path.with_suffix(".json")
    if not sidecar.exists():
        raise ParseError(sidecar, None, "missing frequency-shift metadata sidecar")
    meta = read_json(sidecar)
    if "omega_rad_s" in meta:
        omega = float(meta["omega_rad_s"])
    elif "f0_hz" in meta:
        omega = 2.0 * np.pi * float(meta["f0_hz"])
    else:
        raise ParseError(sidecar, None, "need omega_rad_s or f0_hz in metadata")
    cols, errors = _read_numeric_csv(
        csv_path, ["temperature_k", "df_over_f"], ["sigma"]
    )
    dataset = FreqShiftDataset(
        device_id=str(meta.get("device_id", csv_path.stem)),
        omega_rad_s=omega,
        temperature_k=np.asarray(cols["temperature_k"]),
        df_over_f=np.asarray(cols["df_over_f"]),
        sigma=np.asarray(cols["sigma"]) if "sigma" in cols else None,
    )
    return dataset, errors


# ---------------------------------------------------------------------------
# Device registry and surface table
# ---------------------------------------------------------------------------


def write_device_registry(path, devices: List[dict]) -> None:
    write_json(path, {"devices": sorted(devices, key=lambda d: str(d.get("device_id")))})


def read_device_registry(path) -> List[dict]:
    data = read_json(path)
    if not isinstance(data, dict) or "devices" not in data:
        raise ParseError(path, None, "registry must be an object with a 'devices' list")
    out = []
    for i, entry in enumerate(data["devices"]):
        if "device_id" not in entry:
            raise ParseError(path, None, f"registry entry {i} missing device_id")
        out.append(entry)
    return out


def geometry_from_registry_entry(entry: dict) -> DeviceGeometry:
    return DeviceGeometry(
        device_id=str(entry["device_id"]),
        p_ms=float(entry["p_ms"]),
        treatment=str(entry["treatment"]),
        device_type=str(entry.get("device_type", "CPW")),
        p_ma=entry.get("p_ma"),
        p_sa=entry.get("p_sa"),
        etch=str(entry.get("etch", "")),
        packaging=str(entry.get("packaging", "")),
    )


def write_surface_table(path, table: SurfaceLossTable) -> None:
    payload = {
        "reference_thickness_nm": table.reference_thickness_nm,
        "treatments": {
            name: {
                "loss_tangent": entry.loss_tangent.value,
                "loss_sigma": entry.loss_tangent.sigma,
                "thickness_nm": entry.thickness_nm.value,
                "thickness_sigma_nm": entry.thickness_nm.sigma,
                "hydrocarbon": entry.hydrocarbon,
            }
            for name, entry in table.entries.items()
        },
    }
    if table.bulk is not None:
        payload["bulk_loss_tangent"] = table.bulk.value
        payload["bulk_loss_sigma"] = table.bulk.sigma
    write_json(path, payload)


def read_surface_table(path) -> SurfaceLossTable:
    data = read_json(path)
    if "treatments" not in data:
        raise ParseError(path, None, "surface table must contain 'treatments'")
    entries = {}
    for name, raw in data["treatments"].items():
        entries[name] = SurfaceEntry(
            loss_tangent=Measured(
                float(raw["loss_tangent"]), float(raw.get("loss_sigma", 0.0))
            ),
            thickness_nm=Measured(
                float(raw["thickness_nm"]), float(raw.get("thickness_sigma_nm", 0.0))
            ),
            hydrocarbon=bool(raw.get("hydrocarbon", False)),
        )
    bulk = None
    if "bulk_loss_tangent" in data:
        bulk = Measured(
            float(data["bulk_loss_tangent"]), float(data.get("bulk_loss_sigma", 0.0))
        )
    return SurfaceLossTable(
        entries,
        reference_thickness_nm=float(
            data.get("reference_thickness_nm", 3.0)
        ),
        bulk=bulk,
    )
