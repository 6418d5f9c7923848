import numpy as np
import pytest

from resloss.lineshape import LineshapeParams, s21_model
from resloss.lossmodel import q_int_model, q_tls
from resloss.synth import (
    CampaignSpec,
    LossTruth,
    default_campaign,
    generate_freq_shift,
    generate_sweep,
    generate_trace,
    write_campaign,
)

OMEGA = 2 * np.pi * 5e9


class TestTraceGenerator:
    params = LineshapeParams.from_q_int(5e9, 1e6, 3e5, asymmetry=0.05, baseline=0.02)

    def test_noiseless_equals_model(self):
        trace = generate_trace(self.params)
        assert np.max(np.abs(trace.s21_mag - s21_model(self.params, trace.freq_hz))) == 0.0

    def test_seeded_determinism(self):
        a = generate_trace(self.params, snr_db=40.0, seed=123)
        b = generate_trace(self.params, snr_db=40.0, seed=123)
        assert np.array_equal(a.s21_mag, b.s21_mag)
        c = generate_trace(self.params, snr_db=40.0, seed=124)
        assert not np.array_equal(a.s21_mag, c.s21_mag)

    def test_snr_calibration(self):
        # 40 dB -> sigma = 1e-2 of the unit background
        rms = []
        for seed in range(100):
            trace = generate_trace(self.params, snr_db=40.0, seed=seed)
            resid = trace.s21_mag - s21_model(self.params, trace.freq_hz)
            rms.append(np.sqrt(np.mean(resid**2)))
        assert np.mean(rms) == pytest.approx(1e-2, rel=0.10)

    def test_noise_is_unbiased(self):
        f_center = self.params.f0_hz
        truth = s21_model(self.params, f_center)
        sigma = 10 ** (-30.0 / 20.0)
        values = []
        for seed in range(1000):
            trace = generate_trace(self.params, n_points=9, snr_db=30.0, seed=seed)
            values.append(trace.s21_mag[4])
        standard_error = sigma / np.sqrt(len(values))
        assert abs(np.mean(values) - truth) < 3 * standard_error


class TestSweepGenerator:
    def test_noiseless_matches_model(self):
        truth = LossTruth(6.97e5, 600.0, 1.2, 0.65, 23.0, 4.0, 3e6)
        ds = generate_sweep(truth, OMEGA, [1.0, 1e3], [0.02, 0.1, 0.5])
        expected = q_int_model(ds.nbar, ds.temperature_k, OMEGA, *truth.as_tuple())
        assert np.array_equal(ds.q_int, expected)

    def test_tls_only_low_power_grid(self):
        truth = LossTruth(8e5, 600.0, 1.2, 0.65, 1e12, 6.0, None)
        temps = np.geomspace(0.017, 1.0, 12)
        ds = generate_sweep(truth, OMEGA, [1e-12, 1e-11], temps)
        expected = q_tls(0.0, ds.temperature_k, OMEGA, 8e5, 600.0, 1.2, 0.65)
        assert np.allclose(ds.q_int, expected, rtol=1e-6)

    def test_characteristic_sweep_shape(self):
        # fan-out at base temperature, collapse in the quasiparticle regime
        truth = LossTruth(6.97e5, 600.0, 1.2, 0.65, 23.0, 4.0, 3e6)
        nbar = np.geomspace(1.0, 1e5, 6)
        q_cold = q_int_model(nbar, 0.017, OMEGA, *truth.as_tuple())
        q_hot = q_int_model(nbar, 1.0, OMEGA, *truth.as_tuple())
        assert np.max(q_cold) / np.min(q_cold) > 3.0
        assert np.max(q_hot) / np.min(q_hot) < 1.05

    def test_seeded_noise_reproducible(self):
        truth = LossTruth(6.97e5, 600.0, 1.2, 0.65, 23.0, 4.0, 3e6)
        a = generate_sweep(truth, OMEGA, [1.0, 1e3], [0.02, 0.1, 0.5], noise_frac=0.03, seed=9)
        b = generate_sweep(truth, OMEGA, [1.0, 1e3], [0.02, 0.1, 0.5], noise_frac=0.03, seed=9)
        assert np.array_equal(a.q_int, b.q_int)


class TestFreqShiftGenerator:
    def test_referenced_to_base_temperature(self):
        from resloss.freqshift import FreqShiftParams

        params = FreqShiftParams(7e5, 3.5, 5e-4, -1.0)
        ds = generate_freq_shift(params, OMEGA, np.geomspace(0.05, 1.0, 10))
        assert ds.df_over_f[0] == 0.0


class TestCampaignWriter:
    def small_spec(self, seed=0):
        campaign = default_campaign(seed=seed)
        return CampaignSpec(
            devices=campaign.devices[:2],
            powers_dbm=(-40.0, -30.0, -20.0),
            temperatures_k=tuple(np.geomspace(0.017, 1.0, 5)),
            snr_db=45.0,
            seed=seed,
        )

    def test_layout_and_determinism(self, tmp_path):
        spec = self.small_spec()
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        truth_a = write_campaign(spec, out_a)
        truth_b = write_campaign(self.small_spec(), out_b)
        assert truth_a == truth_b
        assert (out_a / "devices.json").exists()
        assert (out_a / "truth.json").exists()
        files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes()

    def test_trace_count(self, tmp_path):
        spec = self.small_spec()
        write_campaign(spec, tmp_path)
        csvs = list((tmp_path / "traces").rglob("*.csv"))
        assert len(csvs) == len(spec.devices) * 3 * 5

    def test_default_campaign_composition(self):
        spec = default_campaign()
        assert len(spec.devices) == 12
        treatments = {d.treatment for d in spec.devices}
        assert treatments == {"native", "BOE", "longBOE", "triacid"}

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            CampaignSpec(devices=default_campaign().devices, powers_dbm=())
