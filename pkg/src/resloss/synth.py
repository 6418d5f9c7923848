"""Forward-model synthetic data: traces, sweeps, frequency-shift curves and
multi-device campaigns with controlled, seeded noise.

These generators are the independent oracle for the fit-recovery tests: run
noiselessly they reproduce the forward models exactly, and the campaign
writer emits the same on-disk formats the ingestion layer reads.

Noise conventions: trace noise is additive Gaussian on |S21| with
sigma = 10^(-snr_db/20) (full scale is the unit background); sweep noise is
additive Gaussian on Q_int with sigma = noise_frac * Q_int. Both are
mean-unbiased by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import io as rio
from .freqshift import FreqShiftDataset, FreqShiftParams, freq_shift_model
from .lineshape import LineshapeParams, ResonatorTrace, s21_model
from .lossmodel import SweepDataset, photon_number, q_int_model
from .validation import check_positive


def _noise_sigma(snr_db: Optional[float]) -> float:
    return 0.0 if snr_db is None else 10.0 ** (-snr_db / 20.0)


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


def trace_frequencies(params: LineshapeParams, span_linewidths: float = 5.0, n_points: int = 201):
    half_span = 0.5 * span_linewidths * params.linewidth_hz
    return np.linspace(params.f0_hz - half_span, params.f0_hz + half_span, n_points)


def generate_trace(
    params: LineshapeParams,
    span_linewidths: float = 5.0,
    n_points: int = 201,
    snr_db: Optional[float] = None,
    seed: int = 0,
    power_dbm: Optional[float] = None,
    temperature_k: Optional[float] = None,
    resonator_id: str = "",
) -> ResonatorTrace:
    """Sample the dip model on a centered grid; noiseless when snr_db is None."""
    f = trace_frequencies(params, span_linewidths, n_points)
    mag = s21_model(params, f)
    sigma = _noise_sigma(snr_db)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        mag = np.clip(mag + rng.normal(0.0, sigma, size=mag.shape), 0.0, None)
    return ResonatorTrace(
        freq_hz=f,
        s21_mag=mag,
        sigma=np.full_like(f, sigma) if sigma > 0 else None,
        power_dbm=power_dbm,
        temperature_k=temperature_k,
        resonator_id=resonator_id,
    )


def generate_pulled_trace(
    params: LineshapeParams,
    pull_linewidths: float = 0.5,
    span_linewidths: float = 5.0,
    n_points: int = 201,
    snr_db: Optional[float] = None,
    seed: int = 0,
) -> ResonatorTrace:
    """A drive-distorted ("shark fin") trace: the upper half of the dip is
    evaluated with the center pulled up by a fraction of a linewidth, the kind
    of bent lineshape seen at the highest powers. Exists to exercise the
    nonlinearity screen; the distortion shape is a test construction."""
    f = trace_frequencies(params, span_linewidths, n_points)
    pulled = LineshapeParams(
        f0_hz=params.f0_hz + pull_linewidths * params.linewidth_hz,
        q_tot=params.q_tot,
        q_c=params.q_c,
        asymmetry=params.asymmetry,
        baseline=params.baseline,
    )
    mag = np.where(f <= params.f0_hz, s21_model(params, f), s21_model(pulled, f))
    sigma = _noise_sigma(snr_db)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        mag = np.clip(mag + rng.normal(0.0, sigma, size=mag.shape), 0.0, None)
    return ResonatorTrace(freq_hz=f, s21_mag=mag, sigma=None)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class LossTruth:
    """Generating loss-channel parameters for one synthetic device."""

    q_tls0: float
    sat_scale: float
    temp_exp: float
    photon_exp: float
    q_qp0: float
    tc_k: float
    q_other: Optional[float] = None

    def as_tuple(self):
        return (
            self.q_tls0,
            self.sat_scale,
            self.temp_exp,
            self.photon_exp,
            self.q_qp0,
            self.tc_k,
            self.q_other,
        )


def generate_sweep(
    truth: LossTruth,
    omega_rad_s: float,
    nbar_grid: Sequence[float],
    temperatures_k: Sequence[float],
    noise_frac: float = 0.0,
    seed: int = 0,
    device_id: str = "synthetic",
) -> SweepDataset:
    """Direct (nbar, T) grid of Q_int values; noiseless equals the model."""
    nbar_grid = np.asarray(nbar_grid, dtype=float)
    temperatures_k = np.asarray(temperatures_k, dtype=float)
    check_positive(nbar_grid, "nbar_grid")
    check_positive(temperatures_k, "temperatures_k")
    nn, tt = np.meshgrid(nbar_grid, temperatures_k, indexing="ij")
    nn, tt = nn.ravel(), tt.ravel()
    q = q_int_model(nn, tt, omega_rad_s, *truth.as_tuple())
    sigma = None
    if noise_frac > 0:
        rng = np.random.default_rng(seed)
        sigma = noise_frac * q
        q = q + rng.normal(0.0, 1.0, size=q.shape) * sigma
        q = np.maximum(q, 1e-3 * sigma)
    return SweepDataset(
        device_id=device_id,
        omega_rad_s=omega_rad_s,
        nbar=nn,
        temperature_k=tt,
        q_int=q,
        q_int_sigma=sigma,
    )


def _self_consistent_nbar(
    power_dbm: float,
    attenuation_db: float,
    truth: LossTruth,
    lineshape_q_c: float,
    f0_hz: float,
    temperature_k: float,
) -> Tuple[float, LineshapeParams]:
    """Photon number and dip parameters at one (power, T) grid point.

    nbar depends on Q_tot which depends on Q_int(nbar, T); iterate the
    closed loop to a fixed point (strongly contracting in practice).
    """
    omega = 2.0 * np.pi * f0_hz
    nbar = 1.0
    params = None
    for _ in range(60):
        q_int = float(q_int_model(nbar, temperature_k, omega, *truth.as_tuple()))
        params = LineshapeParams.from_q_int(f0_hz, q_int, lineshape_q_c)
        new = float(photon_number(power_dbm, params, attenuation_db))
        if abs(new - nbar) <= 1e-12 * max(nbar, 1e-30):
            nbar = new
            break
        nbar = new
    return nbar, params


# ---------------------------------------------------------------------------
# Frequency-shift curves
# ---------------------------------------------------------------------------


def generate_freq_shift(
    params: FreqShiftParams,
    omega_rad_s: float,
    temperatures_k: Sequence[float],
    noise_sigma: float = 0.0,
    seed: int = 0,
    device_id: str = "synthetic",
) -> FreqShiftDataset:
    t = np.sort(np.asarray(temperatures_k, dtype=float))
    y = freq_shift_model(params, t, omega_rad_s, t_ref=float(t[0]))
    sigma = None
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, noise_sigma, size=y.shape)
        sigma = np.full_like(t, noise_sigma)
    return FreqShiftDataset(
        device_id=device_id,
        omega_rad_s=omega_rad_s,
        temperature_k=t,
        df_over_f=y,
        sigma=sigma,
    )


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


@dataclass
class DeviceSpec:
    device_id: str
    p_ms: float
    treatment: str
    f0_hz: float
    q_c: float
    truth: LossTruth
    device_type: str = "CPW"


@dataclass
class CampaignSpec:
    devices: List[DeviceSpec]
    powers_dbm: Sequence[float] = tuple(range(-60, -9, 10))
    attenuation_db: float = 100.0
    temperatures_k: Sequence[float] = field(
        default_factory=lambda: tuple(np.geomspace(0.017, 1.0, 12))
    )
    snr_db: float = 40.0
    seed: int = 0
    span_linewidths: float = 5.0
    n_points: int = 201

    def __post_init__(self):
        if not self.devices:
            raise ValueError("campaign needs at least one device")
        if len(tuple(self.powers_dbm)) == 0 or len(tuple(self.temperatures_k)) == 0:
            raise ValueError("power and temperature grids must be non-empty")


def surface_loss_q_tls0(p_ms: float, tan_delta_surface: float, bulk_loss: float) -> float:
    """Invert the SPR scaling law for a device's generating q_tls0."""
    return 1.0 / (p_ms * tan_delta_surface + bulk_loss)


def default_campaign(seed: int = 0) -> CampaignSpec:
    """A 12-device, 4-treatment campaign shaped like a real characterization
    run: three SPR values per treatment spanning the linear-to-plateau range."""
    tangents = {"native": 13.6e-4, "BOE": 7.2e-4, "longBOE": 7.0e-4, "triacid": 14e-4}
    bulk_loss = 1.5e-7
    p_values = (1e-4, 8e-4, 3e-3)
    devices = []
    f0 = 4.5e9
    for t_idx, (treatment, tangent) in enumerate(sorted(tangents.items())):
        for p_idx, p_ms in enumerate(p_values):
            q_tls0 = surface_loss_q_tls0(p_ms, tangent, bulk_loss)
            devices.append(
                DeviceSpec(
                    device_id=f"dev{t_idx * len(p_values) + p_idx:02d}_{treatment}",
                    p_ms=p_ms,
                    treatment=treatment,
                    f0_hz=f0 + 50e6 * (t_idx * len(p_values) + p_idx),
                    q_c=2e5,
                    truth=LossTruth(
                        q_tls0=q_tls0,
                        sat_scale=600.0,
                        temp_exp=1.2,
                        photon_exp=0.65,
                        q_qp0=23.0,
                        tc_k=4.0,
                        q_other=max(4.0 * q_tls0, 3e6),
                    ),
                )
            )
    return CampaignSpec(devices=devices, seed=seed)


def write_campaign(spec: CampaignSpec, out_dir) -> dict:
    """Generate and write a full campaign in the ingestion layout.

    Produces ``devices.json``, per-device trace files under ``traces/``, and
    a ``truth.json`` record of the generating parameters (read back only by
    tests, never by the pipeline).
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    registry = []
    truth_payload = {}
    rng_root = np.random.default_rng(spec.seed)

    for device in sorted(spec.devices, key=lambda d: d.device_id):
        dev_dir = out / "traces" / device.device_id
        dev_dir.mkdir(parents=True, exist_ok=True)
        registry.append(
            {
                "device_id": device.device_id,
                "resonator_id": device.device_id,
                "p_ms": device.p_ms,
                "treatment": device.treatment,
                "device_type": device.device_type,
            }
        )
        truth_payload[device.device_id] = {
            "q_tls0": device.truth.q_tls0,
            "sat_scale": device.truth.sat_scale,
            "temp_exp": device.truth.temp_exp,
            "photon_exp": device.truth.photon_exp,
            "q_qp0": device.truth.q_qp0,
            "tc_k": device.truth.tc_k,
            "q_other": device.truth.q_other,
            "f0_hz": device.f0_hz,
            "q_c": device.q_c,
            "p_ms": device.p_ms,
            "treatment": device.treatment,
        }
        for power in spec.powers_dbm:
            for temperature in spec.temperatures_k:
                nbar, params = _self_consistent_nbar(
                    power,
                    spec.attenuation_db,
                    device.truth,
                    device.q_c,
                    device.f0_hz,
                    temperature,
                )
                trace = generate_trace(
                    params,
                    span_linewidths=spec.span_linewidths,
                    n_points=spec.n_points,
                    snr_db=spec.snr_db,
                    seed=int(rng_root.integers(0, 2**63 - 1)),
                    power_dbm=float(power),
                    temperature_k=float(temperature),
                    resonator_id=device.device_id,
                )
                name = f"p{power:+08.2f}dBm_T{temperature * 1e3:09.3f}mK"
                rio.write_trace_csv(dev_dir / f"{name}.csv", trace)
                _ = nbar  # recorded implicitly via power + attenuation
    rio.write_device_registry(out / "devices.json", registry)
    rio.write_json(out / "truth.json", truth_payload)
    return truth_payload
