import numpy as np
import pytest
import scipy.constants as sc

from resloss.lineshape import LineshapeParams
from resloss.lossmodel import (
    InsufficientGridError,
    LossFitResult,
    SweepDataset,
    SweepLossFit,
    correlation_report,
    fit_sweep,
    photon_number,
    q_int_model,
    q_qp,
    q_tls,
    qp_loss,
    tls_loss,
)
from resloss.synth import LossTruth, generate_sweep

from oracles import qp_loss_highprec

OMEGA = 2 * np.pi * 5e9
TRUTH = LossTruth(
    q_tls0=6.97e5,
    sat_scale=600.0,
    temp_exp=1.2,
    photon_exp=0.65,
    q_qp0=23.0,
    tc_k=4.0,
    q_other=3e6,
)


def temperature_for_ratio(ratio, omega=OMEGA):
    """T such that hbar*omega/(2 kB T) equals ratio."""
    return sc.hbar * omega / (2.0 * sc.k * ratio)


class TestTlsChannel:
    def test_unsaturated_low_temperature_limit(self):
        t = temperature_for_ratio(10.0)
        value = q_tls(0.0, t, OMEGA, 1e6, 600.0, 1.2, 0.65)
        assert value == pytest.approx(1e6 / np.tanh(10.0), rel=1e-12)
        assert value == pytest.approx(1e6, rel=1e-8)

    def test_saturation_factor_of_two(self):
        # tanh -> 1 and nbar^b2 / (D T^b1) = 3 gives sqrt(4) = 2
        t = temperature_for_ratio(20.0)
        sat_scale = 3.0 ** (-1) / t**0.0  # b1 = 0: D = 1/3 with nbar = 1
        value = q_tls(1.0, t, OMEGA, 1e6, 1.0 / 3.0, 0.0, 1.0)
        assert sat_scale  # documents the construction
        assert value == pytest.approx(2e6, rel=1e-12)

    def test_monotone_in_photon_number(self):
        nbar = np.geomspace(1e-3, 1e7, 1000)
        values = q_tls(nbar, 0.05, OMEGA, 1e6, 600.0, 1.2, 0.65)
        assert np.all(np.diff(values) > 0)

    def test_zero_photon_limit(self):
        t = 0.08
        expected = 1e6 / np.tanh(sc.hbar * OMEGA / (2 * sc.k * t))
        assert q_tls(0.0, t, OMEGA, 1e6, 600.0, 1.2, 0.65) == pytest.approx(
            expected, rel=1e-12
        )


class TestQpChannel:
    def test_low_temperature_divergence_bound(self):
        # log-space check: the loss collapses by at least the Boltzmann factor
        gap_ratio = 1.764 * 4.0  # Tc = 4 K
        bound = gap_ratio * (1.0 / 0.05 - 1.0 / 0.5) * 0.9
        log_ratio = np.log(qp_loss(0.5, OMEGA, 1.0, 4.0)) - np.log(
            qp_loss(0.05, OMEGA, 1.0, 4.0)
        )
        assert log_ratio >= bound

    def test_ratio_matches_high_precision_oracle(self):
        ratio = qp_loss(0.5, OMEGA, 1.0, 4.3) / qp_loss(1.0, OMEGA, 1.0, 4.3)
        oracle = qp_loss_highprec(0.5, 4.3, 5e9) / qp_loss_highprec(1.0, 4.3, 5e9)
        assert ratio == pytest.approx(oracle, rel=1e-9)

    def test_loss_monotone_in_temperature(self):
        t = np.linspace(0.05, 2.0, 400)  # up to Tc/2 for Tc = 4
        losses = qp_loss(t, OMEGA, 1.0, 4.0)
        assert np.all(np.diff(losses) > 0)

    def test_overflow_safety(self):
        for f in (4e9, 8e9):
            omega = 2 * np.pi * f
            t = np.geomspace(0.01, 1.0, 50)
            loss = qp_loss(t, omega, 1e-3, 5.0)
            assert np.all(np.isfinite(loss))
            q = q_qp(t, omega, 1e-3, 5.0)
            assert not np.any(np.isnan(q))

    def test_high_temperature_collapse(self):
        # quasiparticle-dominated regime: traces 60 dB apart in power converge
        truth = LossTruth(1e6, 600.0, 1.2, 0.65, 10.0, 3.0, None)
        for t in np.linspace(0.8, 1.0, 5):
            q_low = q_int_model(1.0, t, OMEGA, *truth.as_tuple())
            q_high = q_int_model(1e6, t, OMEGA, *truth.as_tuple())
            assert abs(q_high - q_low) / q_low < 0.05


class TestQintModel:
    def test_equal_parallel_channels(self):
        t = temperature_for_ratio(8.0)
        # pick parameters that make each channel exactly 3e6 at (nbar, t)
        q_tls_val = q_tls(1.0, t, OMEGA, 1e6, 600.0, 1.2, 0.65)
        tls0 = 1e6 * (3e6 / q_tls_val)
        qp_val = 1.0 / qp_loss(t, OMEGA, 1.0, 4.0)
        qp0 = 3e6 / qp_val
        total = q_int_model(1.0, t, OMEGA, tls0, 600.0, 1.2, 0.65, qp0, 4.0, 3e6)
        assert total == pytest.approx(1e6, rel=1e-10)

    def test_absent_other_channel(self):
        t = 0.2
        with_other = q_int_model(10.0, t, OMEGA, 1e6, 600.0, 1.2, 0.65, 23.0, 4.0, None)
        manual = 1.0 / (
            tls_loss(10.0, t, OMEGA, 1e6, 600.0, 1.2, 0.65)
            + qp_loss(t, OMEGA, 23.0, 4.0)
        )
        assert with_other == pytest.approx(manual, rel=1e-14)

    def test_bounded_by_every_channel(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            nbar = 10 ** rng.uniform(-2, 6)
            t = 10 ** rng.uniform(np.log10(0.017), 0.0)
            args = (
                10 ** rng.uniform(5, 7),
                10 ** rng.uniform(1, 4),
                rng.uniform(0, 2),
                rng.uniform(0.1, 1.5),
                10 ** rng.uniform(0, 4),
                rng.uniform(1, 5),
                10 ** rng.uniform(6, 8),
            )
            total = q_int_model(nbar, t, OMEGA, *args)
            channels = (
                q_tls(nbar, t, OMEGA, *args[:4]),
                1.0 / qp_loss(t, OMEGA, *args[4:6]),
                args[6],
            )
            assert total <= min(channels) * (1 + 1e-12)


class TestPhotonNumber:
    def lineshape(self):
        return LineshapeParams.from_q_int(5e9, 1e6, 1e6)  # q_tot = 5e5 = q_c/2

    def test_hand_evaluation(self):
        params = self.lineshape()
        n = photon_number(-30.0, params, attenuation_db=100.0)
        p_in = 1e-3 * 10 ** (-130.0 / 10.0)
        expected = 2.0 * params.q_tot**2 * p_in / (params.q_c * sc.hbar * (2 * np.pi * 5e9) ** 2)
        assert n == pytest.approx(expected, rel=1e-13)
        assert n == pytest.approx(480.4, rel=1e-3)

    def test_linear_in_power(self):
        params = self.lineshape()
        n1 = photon_number(-130.0, params, attenuation_db=0.0)
        n2 = photon_number(-130.0 + 10 * np.log10(2), params, attenuation_db=0.0)
        assert n2 == pytest.approx(2 * n1, rel=1e-12)

    def test_decoupled_limit(self):
        weak = LineshapeParams.from_q_int(5e9, 1e6, 1e12)
        strong = LineshapeParams.from_q_int(5e9, 1e6, 1e6)
        assert photon_number(-100.0, weak, 0.0) < 1e-5 * photon_number(-100.0, strong, 0.0)

    def test_requires_attenuation(self):
        with pytest.raises(ValueError):
            photon_number(-100.0, self.lineshape(), None)


class TestSweepFit:
    nbar_grid = np.geomspace(1.0, 1e5, 6)
    temps = np.geomspace(0.017, 1.0, 12)

    def test_noiseless_recovery(self):
        ds = generate_sweep(TRUTH, OMEGA, self.nbar_grid, self.temps)
        res = fit_sweep(ds, seed=0)
        assert res.chisq < 1e-8
        assert res.q_tls0 == pytest.approx(TRUTH.q_tls0, rel=1e-6)
        assert res.tc_k == pytest.approx(TRUTH.tc_k, rel=1e-6)
        assert res.q_other == pytest.approx(TRUTH.q_other, rel=1e-5)

    def test_roundtrip_from_perturbed_start(self):
        ds = generate_sweep(TRUTH, OMEGA, self.nbar_grid, self.temps)
        rng = np.random.default_rng(21)
        guess = {
            "q_tls0": TRUTH.q_tls0 * (1 + rng.uniform(-0.3, 0.3)),
            "sat_scale": TRUTH.sat_scale * (1 + rng.uniform(-0.3, 0.3)),
            "temp_exp": TRUTH.temp_exp * (1 + rng.uniform(-0.3, 0.3)),
            "photon_exp": TRUTH.photon_exp * (1 + rng.uniform(-0.3, 0.3)),
            "q_qp0": TRUTH.q_qp0 * (1 + rng.uniform(-0.3, 0.3)),
            "tc_k": TRUTH.tc_k * (1 + rng.uniform(-0.3, 0.3)),
            "q_other": TRUTH.q_other * (1 + rng.uniform(-0.3, 0.3)),
        }
        res = fit_sweep(ds, seed=0, initial_guess=guess, n_starts=2)
        for name, true in zip(
            ("q_tls0", "sat_scale", "temp_exp", "photon_exp", "q_qp0", "tc_k", "q_other"),
            TRUTH.as_tuple(),
        ):
            assert getattr(res, name) == pytest.approx(true, rel=1e-4), name

    def test_noisy_recovery(self):
        ds = generate_sweep(TRUTH, OMEGA, self.nbar_grid, self.temps, noise_frac=0.03, seed=3)
        res = fit_sweep(ds, seed=0)
        assert res.q_tls0 == pytest.approx(TRUTH.q_tls0, rel=0.10)
        assert res.diagnostics.q_other_identifiable

    def test_truncated_sweep_flags_qp_channel(self):
        temps = np.geomspace(0.017, 0.29, 12)
        ds = generate_sweep(TRUTH, OMEGA, self.nbar_grid, temps, noise_frac=0.03, seed=3)
        res = fit_sweep(ds, seed=0)
        assert not res.diagnostics.qp_identifiable
        assert res.q_tls0 == pytest.approx(TRUTH.q_tls0, rel=0.10)

    def test_truncated_sweep_profile_is_flat_in_tc(self):
        # independent profile-likelihood scan confirming the flag above
        temps = np.geomspace(0.017, 0.29, 12)
        ds = generate_sweep(TRUTH, OMEGA, self.nbar_grid, temps, noise_frac=0.03, seed=3)
        costs = []
        for tc in (1.0, 2.0, 3.0, 4.0, 5.0):
            est = SweepLossFit(
                seed=0, n_starts=2, tc_bounds=(tc - 1e-6, tc + 1e-6), fit_q_other=True
            ).fit(ds.nbar, ds.temperature_k, ds.q_int, ds.q_int_sigma, omega_rad_s=OMEGA)
            costs.append(est.result_.chisq)
        assert max(costs) - min(costs) < 1.0

    def test_no_plateau_drops_constant_channel(self):
        truth = LossTruth(*TRUTH.as_tuple()[:6], None)
        ds = generate_sweep(truth, OMEGA, self.nbar_grid, self.temps, noise_frac=0.03, seed=5)
        res = fit_sweep(ds, seed=0)
        assert res.q_other is None
        assert not res.diagnostics.q_other_identifiable
        assert "q_other" not in res.param_names

    def test_gap_energy_derived_from_tc(self):
        res = LossFitResult("d", OMEGA, 1e6, 600.0, 1.2, 0.65, 23.0, 4.0, None)
        assert res.gap_energy_j == pytest.approx(1.764 * sc.k * 4.0, rel=1e-12)

    def test_grid_requirements(self):
        with pytest.raises(InsufficientGridError):
            SweepDataset("d", OMEGA, [1.0] * 6, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [1e6] * 6)
        with pytest.raises(InsufficientGridError):
            SweepDataset("d", OMEGA, [1, 10, 100, 1, 10, 100], [0.1] * 6, [1e6] * 6)


class TestCorrelationReport:
    def make_result(self, **kw):
        base = dict(
            device_id="d",
            omega_rad_s=OMEGA,
            q_tls0=1e6,
            sat_scale=100.0,
            temp_exp=1.0,
            photon_exp=0.7,
            q_qp0=10.0,
            tc_k=3.0,
            q_other=1e7,
        )
        base.update(kw)
        return LossFitResult(**base)

    def test_zero_variance_reported_as_nan(self):
        results = [self.make_result() for _ in range(6)]
        report = correlation_report(results)
        assert "tc_k" in report.zero_variance
        i = report.names.index("tc_k")
        j = report.names.index("log10_q_tls0")
        assert np.isnan(report.matrix[i, j])
        assert not report.flagged_pairs

    def test_saturation_ridge_flagged_and_root_column_clean(self):
        rng = np.random.default_rng(4)
        results = []
        for _ in range(30):
            photon_exp = rng.uniform(0.3, 1.2)
            root = 50.0 * np.exp(rng.normal(0, 0.05))
            results.append(
                self.make_result(
                    photon_exp=photon_exp,
                    sat_scale=root**photon_exp,
                    q_tls0=10 ** rng.uniform(5.5, 6.5),
                    tc_k=rng.uniform(2, 4),
                    q_qp0=10 ** rng.uniform(0.5, 2),
                )
            )
        report = correlation_report(results)
        flagged = {frozenset(pair[:2]) for pair in report.flagged_pairs}
        assert frozenset(("log10_sat_scale", "photon_exp")) in flagged
        assert frozenset(("log10_sat_scale_root", "photon_exp")) not in flagged

    def test_independent_parameters_rarely_flag(self):
        clean_seeds = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            results = [
                self.make_result(
                    q_tls0=10 ** rng.uniform(5, 7),
                    sat_scale=10 ** rng.uniform(1, 4),
                    temp_exp=rng.uniform(0.2, 2.0),
                    photon_exp=rng.uniform(0.2, 1.5),
                    q_qp0=10 ** rng.uniform(0, 3),
                    tc_k=rng.uniform(1, 5),
                    q_other=10 ** rng.uniform(6, 8),
                )
                for _ in range(20)
            ]
            report = correlation_report(results)
            real_flags = [
                pair
                for pair in report.flagged_pairs
                if "log10_sat_scale_root" not in pair[:2]
            ]
            if not real_flags:
                clean_seeds += 1
        assert clean_seeds >= 95

    def test_needs_five_fits(self):
        with pytest.raises(ValueError):
            correlation_report([self.make_result()] * 4)
