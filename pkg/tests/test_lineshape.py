import numpy as np
import pytest

from resloss.lineshape import (
    LineshapeFit,
    LineshapeParams,
    NoDipFoundError,
    ResonatorTrace,
    _model_and_jacobian,
    detect_nonlinearity,
    fit_trace,
    qc_constancy,
    s21_model,
)
from resloss.synth import generate_pulled_trace, generate_trace


def make_params(f0=5e9, q_int=1e6, q_c=2e5, asym=0.0, baseline=0.0):
    return LineshapeParams.from_q_int(f0, q_int, q_c, asym, baseline)


class TestS21Model:
    def test_on_resonance_dip(self):
        p = make_params()
        assert s21_model(p, p.f0_hz) == pytest.approx(1.0 - p.q_tot / p.q_c, abs=1e-15)

    def test_critical_coupling(self):
        p = make_params(q_int=3e5, q_c=3e5)  # q_tot/q_c = 1/2
        assert s21_model(p, p.f0_hz) == pytest.approx(0.5, abs=1e-15)

    def test_off_resonance_approaches_background(self):
        p = make_params()
        f = p.f0_hz + 100.0 * p.linewidth_hz
        assert s21_model(p, f) == pytest.approx(1.0, abs=1e-3)

    def test_symmetric_at_zero_asymmetry(self):
        p = make_params(q_int=8e5, q_c=4e5)
        delta = np.linspace(0.1, 4.0, 37) * p.linewidth_hz
        left = s21_model(p, p.f0_hz - delta)
        right = s21_model(p, p.f0_hz + delta)
        assert np.allclose(left, right, rtol=0, atol=1e-12)

    def test_baseline_is_additive(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            p0 = make_params(
                q_int=10 ** rng.uniform(5, 7),
                q_c=10 ** rng.uniform(5, 6),
                asym=rng.uniform(-0.3, 0.3),
                baseline=0.0,
            )
            b = rng.uniform(-0.2, 0.5)
            pb = LineshapeParams(p0.f0_hz, p0.q_tot, p0.q_c, p0.asymmetry, b)
            f = p0.f0_hz + np.linspace(-3, 3, 11) * p0.linewidth_hz
            assert np.allclose(s21_model(pb, f), s21_model(p0, f) + b, atol=1e-14)

    def test_asymmetry_breaks_symmetry(self):
        p = make_params(asym=0.2)
        d = 0.7 * p.linewidth_hz
        assert abs(s21_model(p, p.f0_hz - d) - s21_model(p, p.f0_hz + d)) > 1e-3


class TestAnalyticJacobian:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(7)
        f = np.linspace(4.9995e9, 5.0005e9, 101)
        for _ in range(10):
            x = np.array(
                [
                    5e9 + rng.uniform(-1e5, 1e5),
                    np.log(10 ** rng.uniform(4.5, 7)),
                    np.log(10 ** rng.uniform(4.5, 6.5)),
                    rng.uniform(-0.5, 0.5),
                    rng.uniform(-0.2, 0.5),
                ]
            )
            _, jac = _model_and_jacobian(f, *x)
            q_tot = 1.0 / (np.exp(-x[1]) + np.exp(-x[2]))
            linewidth = x[0] / q_tot
            steps = np.array([linewidth * 1e-4, 1e-7, 1e-7, 1e-7, 1e-7])
            for j in range(5):
                h = np.zeros(5)
                h[j] = steps[j]
                up, _ = _model_and_jacobian(f, *(x + h))
                dn, _ = _model_and_jacobian(f, *(x - h))
                fd = (up - dn) / (2 * h[j])
                atol = 1e-6 * np.max(np.abs(jac[:, j]))
                assert np.allclose(jac[:, j], fd, rtol=1e-6, atol=atol)


class TestFitTrace:
    def test_noiseless_exact_recovery(self):
        p = make_params(q_int=1.5e6, q_c=5e5, asym=0.08, baseline=0.03)
        trace = generate_trace(p)
        res = fit_trace(trace)
        assert res.params.f0_hz == pytest.approx(p.f0_hz, rel=1e-10)
        assert res.q_int == pytest.approx(p.q_int, rel=1e-8)
        assert res.params.q_c == pytest.approx(p.q_c, rel=1e-8)
        assert res.params.asymmetry == pytest.approx(p.asymmetry, abs=1e-8)
        assert res.params.baseline == pytest.approx(p.baseline, abs=1e-8)

    def test_center_frequency_recovery_with_noise(self):
        p = make_params(f0=4.484501e9, q_int=1e6, q_c=3e5)
        trace = generate_trace(p, snr_db=40.0, seed=11)
        res = fit_trace(trace)
        assert abs(res.params.f0_hz - p.f0_hz) < p.linewidth_hz / 100.0

    def test_q_int_recovery_statistics(self):
        # undercoupled-side case: q_int / q_c = 3
        p = make_params(q_int=9e5, q_c=3e5)
        hits = 0
        for seed in range(40):
            trace = generate_trace(p, snr_db=40.0, seed=seed)
            res = fit_trace(trace)
            if abs(res.q_int - p.q_int) / p.q_int < 0.05:
                hits += 1
        assert hits >= 36

    def test_frequency_shift_equivariance(self):
        # the dip model ties linewidth to f0 through the fractional detuning,
        # so exact parameter invariance needs a shift << f0 * 1e-8
        p = make_params(q_int=1.2e6, q_c=4e5, asym=0.05, baseline=0.01)
        trace = generate_trace(p, snr_db=45.0, seed=2)
        shift = 10.0
        shifted = ResonatorTrace(
            freq_hz=trace.freq_hz + shift,
            s21_mag=trace.s21_mag,
            sigma=trace.sigma,
        )
        res_a = fit_trace(trace)
        res_b = fit_trace(shifted)
        assert res_b.params.f0_hz - res_a.params.f0_hz == pytest.approx(shift, abs=1e-3)
        assert res_b.q_int == pytest.approx(res_a.q_int, rel=1e-8)
        assert res_b.params.q_c == pytest.approx(res_a.params.q_c, rel=1e-8)
        assert res_b.params.asymmetry == pytest.approx(res_a.params.asymmetry, abs=1e-8)

    def test_q_tot_never_exceeds_q_c(self):
        rng = np.random.default_rng(5)
        for seed in range(15):
            p = make_params(
                q_int=10 ** rng.uniform(5, 7),
                q_c=10 ** rng.uniform(5, 6),
                asym=rng.uniform(-0.2, 0.2),
            )
            res = fit_trace(generate_trace(p, snr_db=35.0, seed=seed))
            assert res.params.q_tot <= res.params.q_c * (1 + 1e-12)

    def test_no_dip_raises(self):
        f = np.linspace(5e9 - 1e6, 5e9 + 1e6, 64)
        flat = ResonatorTrace(freq_hz=f, s21_mag=np.ones_like(f))
        with pytest.raises(NoDipFoundError):
            fit_trace(flat)

    def test_estimator_api(self):
        p = make_params()
        trace = generate_trace(p, snr_db=40.0, seed=1)
        est = LineshapeFit().fit(trace.freq_hz, trace.s21_mag)
        assert est.get_params()["min_dip_snr"] == 4.0
        pred = est.predict(trace.freq_hz)
        assert pred.shape == trace.freq_hz.shape
        assert est.q_int_sigma_ > 0


class TestTraceValidation:
    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            ResonatorTrace(freq_hz=np.arange(5.0) + 1, s21_mag=np.ones(5))

    def test_non_monotone_frequency(self):
        f = np.array([1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        with pytest.raises(ValueError):
            ResonatorTrace(freq_hz=f, s21_mag=np.ones(8))

    def test_negative_magnitude(self):
        f = np.linspace(1.0, 2.0, 8)
        mag = np.ones(8)
        mag[3] = -0.1
        with pytest.raises(ValueError):
            ResonatorTrace(freq_hz=f, s21_mag=mag)


class TestNonlinearityScreen:
    def test_clean_model_trace_not_flagged(self):
        p = make_params()
        trace = generate_trace(p)
        report = detect_nonlinearity(trace, p)
        assert not report.flagged

    def test_pulled_dip_flagged(self):
        p = make_params(q_int=1e6, q_c=3e5)
        trace = generate_pulled_trace(p, pull_linewidths=0.5)
        fitted = fit_trace(trace).params
        report = detect_nonlinearity(trace, fitted)
        assert report.flagged
        assert report.rms_score > 5.0 or report.skew_score > 0.3

    def test_false_positive_rate_with_noise(self):
        p = make_params(q_int=9e5, q_c=3e5)
        flags = 0
        for seed in range(100):
            trace = generate_trace(p, snr_db=30.0, seed=seed)
            fitted = fit_trace(trace).params
            if detect_nonlinearity(trace, fitted).flagged:
                flags += 1
        assert flags < 5


class TestQcConstancy:
    def test_identical_qc_passes(self):
        report = qc_constancy([2e5, 2e5, 2e5, 2e5])
        assert report.cv == 0.0
        assert report.passed

    def test_spread_warns(self):
        report = qc_constancy([1e5, 1e5, 3e5])
        assert report.cv == pytest.approx(0.5657, rel=1e-3)
        assert not report.passed

    def test_small_scatter_passes(self):
        rng = np.random.default_rng(9)
        values = 2e5 * (1 + 0.05 * rng.standard_normal(12))
        assert qc_constancy(values).passed

    def test_needs_three(self):
        with pytest.raises(ValueError):
            qc_constancy([1e5, 2e5])
