"""Command-line interface.

Subcommands: fit-trace, fit-sweep, fit-fshift, decompose, design, synth,
run, report. Shared flags: --config, --out, --seed, --gamma, --jobs.
Exit codes: 0 success, 1 partial failures, 2 config/parse fatal.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as rio
from .config import RunConfig, load_config, parse_gamma
from .decomposition import aggregate_triplets, fit_spr_scaling, solve_alternate_placement
from .design import CpwDesign, coupling_capacitance, cpw_f0, extract_lumped
from .freqshift import fit_freq_shift
from .lineshape import fit_trace
from .lossmodel import fit_sweep
from .pipeline import (
    decomposition_dict,
    freq_shift_dict,
    loss_fit_dict,
    run_pipeline,
    spr_result_dict,
)
from .synth import CampaignSpec, DeviceSpec, LossTruth, default_campaign, write_campaign


def _emit(payload, out_path):
    text = rio.canonical_json_dumps(payload)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _build_config(args) -> RunConfig:
    overrides = {}
    for attr, key in (
        ("input", "input_dir"),
        ("out", "out_dir"),
        ("seed", "seed"),
        ("jobs", "jobs"),
        ("gamma", "gamma"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return load_config(getattr(args, "config", None), overrides=overrides)


def cmd_fit_trace(args) -> int:
    path = Path(args.path)
    if path.suffix == ".json":
        trace = rio.read_trace_json(path)
    else:
        trace, errors = rio.read_trace_csv(path)
        for err in errors:
            print(f"warning: {err.path}:{err.line}: {err.message}", file=sys.stderr)
    result = fit_trace(trace)
    p = result.params
    _emit(
        {
            "f0_hz": p.f0_hz,
            "q_tot": p.q_tot,
            "q_int": result.q_int,
            "q_c": p.q_c,
            "asymmetry": p.asymmetry,
            "baseline": p.baseline,
            "sigmas": dict(result.sigmas),
            "reduced_chisq": result.reduced_chisq,
        },
        args.out,
    )
    return 0


def cmd_fit_sweep(args) -> int:
    dataset, errors = rio.read_sweep_csv(args.path)
    for err in errors:
        print(f"warning: {err.path}:{err.line}: {err.message}", file=sys.stderr)
    config = _build_config(args)
    result = fit_sweep(dataset, seed=config.seed, n_starts=config.n_starts)
    _emit(loss_fit_dict(result), args.out)
    return 0


def cmd_fit_fshift(args) -> int:
    dataset, errors = rio.read_freq_shift_csv(args.path)
    for err in errors:
        print(f"warning: {err.path}:{err.line}: {err.message}", file=sys.stderr)
    config = _build_config(args)
    result = fit_freq_shift(dataset, gamma=config.gamma)
    _emit(freq_shift_dict(result), args.out)
    return 0


def cmd_decompose(args) -> int:
    entries = rio.read_device_registry(args.registry)
    config = _build_config(args)
    p_ms, q0, sig, treatments = [], [], [], []
    for entry in entries:
        if "q_tls0" not in entry:
            raise rio.ParseError(args.registry, None, f"{entry['device_id']}: missing q_tls0")
        p_ms.append(float(entry["p_ms"]))
        q0.append(float(entry["q_tls0"]))
        sig.append(float(entry.get("q_tls0_sigma", 0.0)) or 1e-4 * float(entry["q_tls0"]))
        treatments.append(str(entry["treatment"]))
    spr = fit_spr_scaling(
        np.array(p_ms),
        np.array(q0),
        np.array(sig),
        treatments,
        p_bulk=config.p_bulk,
        min_devices_per_treatment=config.min_devices_per_treatment,
    )
    table_path = args.surface_table or config.surface_table
    template = rio.read_surface_table(table_path) if table_path else None
    from .decomposition import SurfaceLossTable

    if template is not None:
        thicknesses = {
            name: (e.thickness_nm.value, e.thickness_nm.sigma)
            for name, e in template.entries.items()
        }
        residue = [r for r in template.residue_treatments() if r in spr.surface_tangents]
        ref = template.reference_thickness_nm
    else:
        thicknesses, residue, ref = None, ["native"], 3.0
    table = SurfaceLossTable.from_loss_tangents(
        dict(spr.surface_tangents),
        thicknesses=thicknesses,
        hydrocarbon_on=[r for r in residue if r in spr.surface_tangents],
        reference_thickness_nm=ref,
        bulk=spr.tan_delta_bulk,
    )
    decomposition = aggregate_triplets(table)
    payload = {
        "spr_regression": spr_result_dict(spr),
        "decomposition": decomposition_dict(decomposition),
    }
    if args.check_alternate_placement:
        payload["alternate_placement"] = [
            {
                "triplet": list(s.triplet),
                "ma_oxide": {"value": s.ma_oxide.value, "sigma": s.ma_oxide.sigma},
                "sa_ms": {"value": s.sa_ms.value, "sigma": s.sa_ms.sigma},
                "hydrocarbon": {"value": s.hydrocarbon.value, "sigma": s.hydrocarbon.sigma},
                "unphysical": s.unphysical,
            }
            for s in solve_alternate_placement(table)
        ]
    out_dir = Path(args.out or "decomposition_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    rio.write_json(out_dir / "decomposition.json", payload)
    rows = [(n, m.value, m.sigma) for n, m in sorted(spr.surface_tangents.items())]
    rows.append(("bulk", spr.tan_delta_bulk.value, spr.tan_delta_bulk.sigma))
    rio.write_csv(out_dir / "decomposition.csv", ["treatment", "tan_delta", "sigma"], rows)
    rio.write_csv(
        out_dir / "spr_points.csv",
        ["device_id", "p_ms", "q_tls0", "q_tls0_sigma", "treatment"],
        [
            (str(e["device_id"]), float(e["p_ms"]), float(e["q_tls0"]),
             float(e.get("q_tls0_sigma", 0.0)), str(e["treatment"]))
            for e in entries
        ],
    )
    print(f"wrote {out_dir}/decomposition.json")
    return 0


def cmd_design(args) -> int:
    spec = rio.read_json(args.path)
    report = {}
    if "cpw" in spec:
        c = spec["cpw"]
        design = CpwDesign(
            length_m=float(c["length_m"]),
            eps_eff=float(c["eps_eff"]),
            velocity_m_s=float(c.get("velocity_m_s", CpwDesign.velocity_m_s)),
        )
        report["cpw"] = {"f0_hz": float(cpw_f0(design))}
    if "coupling" in spec:
        c = spec["coupling"]
        report["coupling"] = {
            "c_c_f": float(
                coupling_capacitance(float(c["q_c"]), float(c["f0_hz"]), float(c["z0_ohm"]))
            )
        }
    if "lumped" in spec:
        c = spec["lumped"]
        ext = extract_lumped(
            float(c["c_load_f"]),
            float(c["f_meander_hz"]),
            float(c["f_resonator_hz"]),
            angular_literal=bool(c.get("angular_literal", False)),
        )
        report["lumped"] = {
            "c_stray_f": ext.c_stray_f,
            "inductance_h": ext.inductance_h,
            "z0_ohm": ext.z0_ohm,
            "f0_hz": ext.f0_hz,
            "angular_literal": ext.angular_literal,
        }
    if not report:
        raise ValueError("design spec must contain 'cpw', 'coupling' or 'lumped'")
    _emit(report, args.out)
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.spec:
        raw = rio.read_json(args.spec)
        devices = [
            DeviceSpec(
                device_id=str(d["device_id"]),
                p_ms=float(d["p_ms"]),
                treatment=str(d["treatment"]),
                f0_hz=float(d["f0_hz"]),
                q_c=float(d["q_c"]),
                truth=LossTruth(
                    q_tls0=float(d["q_tls0"]),
                    sat_scale=float(d["sat_scale"]),
                    temp_exp=float(d["temp_exp"]),
                    photon_exp=float(d["photon_exp"]),
                    q_qp0=float(d["q_qp0"]),
                    tc_k=float(d["tc_k"]),
                    q_other=d.get("q_other"),
                ),
                device_type=str(d.get("device_type", "CPW")),
            )
            for d in raw["devices"]
        ]
        spec = CampaignSpec(
            devices=devices,
            powers_dbm=raw.get("powers_dbm", CampaignSpec.powers_dbm),
            attenuation_db=float(raw.get("attenuation_db", 100.0)),
            temperatures_k=raw.get(
                "temperatures_k", tuple(np.geomspace(0.017, 1.0, 12))
            ),
            snr_db=float(raw.get("snr_db", 40.0)),
            seed=seed,
        )
    else:
        spec = default_campaign(seed=seed)
    out = args.out or "synth_out"
    write_campaign(spec, out)
    print(f"wrote campaign to {out} ({len(spec.devices)} devices)")
    return 0


def cmd_run(args) -> int:
    config = _build_config(args)
    summary = run_pipeline(config)
    for device, status in sorted(summary.device_status.items()):
        print(f"{device}: {status}")
    for notice in summary.notices:
        print(f"notice: {notice}")
    print(f"{summary.n_devices - summary.n_failed}/{summary.n_devices} devices ok")
    return summary.exit_code


def cmd_report(args) -> int:
    out = Path(args.out or "out")
    summary_path = out / "run_summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"no run summary at {summary_path}")
    summary = rio.read_json(summary_path)
    print(f"devices: {summary['n_devices']} ({summary['n_failed']} failed)")
    for device, status in sorted(summary["device_status"].items()):
        print(f"  {device}: {status}")
    dec_path = out / "campaign" / "decomposition.json"
    if dec_path.exists():
        dec = rio.read_json(dec_path)
        for name in ("ma_oxide", "sa_ms", "hydrocarbon"):
            entry = dec.get(name)
            if entry:
                print(f"  {name}: {entry['value']:.3e} +/- {entry['sigma']:.3e}")
    exclusions = out / "exclusions.json"
    if exclusions.exists():
        print(f"  exclusions: {len(rio.read_json(exclusions))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resloss",
        description="Loss-channel extraction for superconducting microwave resonators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_input=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument(
            "--gamma",
            type=parse_gamma,
            default=None,
            help="surface-impedance regime: -1, -1/2 or -1/3",
        )
        p.add_argument("--jobs", type=int, default=None)
        if with_input:
            p.add_argument("--input", help="input data directory")

    p = sub.add_parser("fit-trace", help="fit one |S21| trace")
    p.add_argument("path")
    common(p)
    p.set_defaults(func=cmd_fit_trace)

    p = sub.add_parser("fit-sweep", help="fit a (nbar, T, Q_int) sweep table")
    p.add_argument("path")
    common(p)
    p.set_defaults(func=cmd_fit_sweep)

    p = sub.add_parser("fit-fshift", help="fit a frequency-shift-vs-T table")
    p.add_argument("path")
    common(p)
    p.set_defaults(func=cmd_fit_fshift)

    p = sub.add_parser("decompose", help="SPR regression + surface-chemistry solve")
    p.add_argument("--registry", required=True, help="device registry JSON with fitted q_tls0")
    p.add_argument("--surface-table", help="surface table JSON (thicknesses, residue flags)")
    p.add_argument(
        "--check-alternate-placement",
        action="store_true",
        help="also solve the residue-on-acid-cleaned-surfaces arrangement",
    )
    common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("design", help="resonator design calculators")
    p.add_argument("path", help="design spec JSON")
    common(p)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("synth", help="write a synthetic campaign")
    p.add_argument("--spec", help="campaign spec JSON (default: built-in 12-device campaign)")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="full pipeline: ingest, fit, decompose, report")
    common(p, with_input=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize an existing output directory")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (rio.ParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
