import itertools

import numpy as np
import pytest
import scipy.constants as sc

from resloss.freqshift import (
    FreqShiftFit,
    FreqShiftParams,
    InsufficientDataError,
    fit_freq_shift,
    freq_shift_model,
    qp_freq_shift,
    sigma_thermal,
    sigma_zero,
    tls_freq_shift,
)
from resloss.synth import generate_freq_shift

from oracles import sigma_thermal_highprec

OMEGA = 2 * np.pi * 5e9
GAMMAS = (-1.0, -0.5, -1.0 / 3.0)


class TestThermalConductivity:
    def test_zero_temperature_limits(self):
        tc = 4.3
        ref = sigma_zero(OMEGA, tc)
        st = sigma_thermal(1e-3, OMEGA, tc)
        assert st.sigma1 == pytest.approx(0.0, abs=1e-300)
        assert st.sigma2 == pytest.approx(ref.sigma2, rel=1e-14)
        assert st.phase == pytest.approx(np.pi / 2.0, abs=1e-15)
        assert ref.sigma2 == pytest.approx(
            np.pi * 1.764 * sc.k * tc / (sc.hbar * OMEGA), rel=1e-14
        )

    def test_matches_high_precision_oracle(self):
        for t, tc, f in ((1.0, 4.3, 5e9), (0.3, 4.3, 5e9), (0.5, 2.0, 4e9), (1.9, 2.0, 8e9)):
            s1o, s2o = sigma_thermal_highprec(t, tc, f)
            st = sigma_thermal(t, 2 * np.pi * f, tc)
            assert st.sigma1 == pytest.approx(s1o, rel=1e-10)
            assert st.sigma2 == pytest.approx(s2o, rel=1e-10)

    def test_sigma1_increasing_in_temperature(self):
        tc = 4.3
        values = [sigma_thermal(t, OMEGA, tc).sigma1 for t in np.linspace(0.3, tc / 2, 60)]
        assert np.all(np.diff(values) > 0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            sigma_thermal(4.3, OMEGA, 4.3)
        with pytest.raises(ValueError):
            sigma_thermal(0.0, OMEGA, 4.3)


class TestQpShift:
    def test_zero_at_base_temperature_every_regime(self):
        for gamma in GAMMAS:
            params = FreqShiftParams(1e6, 4.0, 5e-4, gamma)
            assert qp_freq_shift(params, 0.04, OMEGA) == pytest.approx(0.0, abs=1e-15)

    def test_zero_kinetic_inductance(self):
        params = FreqShiftParams(1e6, 4.0, 0.0, -1.0)
        for t in np.linspace(0.1, 1.9, 7):
            assert qp_freq_shift(params, t, OMEGA) == 0.0

    def test_monotone_decreasing(self):
        for gamma in GAMMAS:
            params = FreqShiftParams(1e6, 4.0, 5e-4, gamma)
            t = np.linspace(0.5, 2.0, 40)
            shifts = qp_freq_shift(params, t, OMEGA)
            assert np.all(np.diff(shifts) < 0)
            assert np.all(shifts <= 0)

    def test_thin_film_regime_equals_direct_expression(self):
        # at the default regime the general form reduces to
        # -(alpha/2) * (1 - sin(phi) * sqrt((s1^2+s2^2)/(s1_0^2+s2_0^2)))
        tc, alpha = 4.3, 5e-4
        params = FreqShiftParams(1e6, tc, alpha, -1.0)
        ref = sigma_zero(OMEGA, tc)
        for t in np.linspace(0.1, 0.99 * tc, 100):
            st = sigma_thermal(t, OMEGA, tc)
            direct = -(alpha / 2.0) * (
                1.0
                - np.sin(st.phase)
                * np.sqrt((st.sigma1**2 + st.sigma2**2) / (ref.sigma1**2 + ref.sigma2**2))
            )
            assert qp_freq_shift(params, t, OMEGA) == pytest.approx(direct, abs=1e-12 * alpha)

    def test_gamma_validation(self):
        with pytest.raises(ValueError):
            FreqShiftParams(1e6, 4.0, 5e-4, gamma=-0.7)


class TestTlsShift:
    def test_vanishes_at_low_temperature(self):
        assert tls_freq_shift(1e6, 1e-4, OMEGA) == pytest.approx(0.0, abs=1e-12)

    def test_shape_against_digamma_oracle(self):
        # grid scan against the high-precision oracle: the shift dips to a
        # shallow minimum near hbar*omega/(2 kB) and is monotone above it
        from oracles import digamma_half_real

        t = np.linspace(0.02, 1.0, 80)
        shifts = tls_freq_shift(1e6, t, OMEGA)
        y = sc.hbar * OMEGA / (2 * np.pi * sc.k * t)
        oracle = np.array([(digamma_half_real(v) - np.log(v)) / (np.pi * 1e6) for v in y])
        assert np.allclose(shifts, oracle, rtol=1e-9, atol=1e-18)
        rising = t >= 0.15
        assert np.all(np.diff(shifts[rising]) > 0)
        assert np.min(shifts) < 0 < shifts[-1]

    def test_inverse_scaling_in_q(self):
        t = np.array([0.1, 0.4, 0.9])
        a = tls_freq_shift(1e6, t, OMEGA) * 1e6
        b = tls_freq_shift(3e7, t, OMEGA) * 3e7
        assert np.allclose(a, b, rtol=1e-14)


class TestFreqShiftFit:
    params = FreqShiftParams(q_tls0=6.97e5, tc_k=3.5, alpha_kin=5e-4, gamma=-1.0)
    temps = np.geomspace(0.05, 1.0, 20)

    def test_model_zero_at_reference(self):
        value = freq_shift_model(self.params, 0.05, OMEGA, t_ref=0.05)
        assert value == 0.0

    def test_noiseless_exact_recovery(self):
        data = generate_freq_shift(self.params, OMEGA, self.temps)
        res = fit_freq_shift(data)
        assert res.params.q_tls0 == pytest.approx(self.params.q_tls0, rel=1e-6)
        assert res.params.tc_k == pytest.approx(self.params.tc_k, rel=1e-6)
        assert res.params.alpha_kin == pytest.approx(self.params.alpha_kin, rel=1e-6)

    def test_fitted_curve_passes_through_zero_at_base(self):
        data = generate_freq_shift(self.params, OMEGA, self.temps, noise_sigma=1e-8, seed=0)
        est = FreqShiftFit().fit(
            data.temperature_k, data.df_over_f, data.sigma, omega_rad_s=OMEGA
        )
        assert est.predict(float(np.min(data.temperature_k))) == 0.0

    def test_two_sigma_coverage(self):
        scale = float(np.max(np.abs(
            freq_shift_model(self.params, self.temps, OMEGA, t_ref=self.temps[0])
        )))
        hits = 0
        for seed in range(100):
            data = generate_freq_shift(
                self.params, OMEGA, self.temps, noise_sigma=0.05 * scale, seed=seed
            )
            res = fit_freq_shift(data)
            if abs(res.params.q_tls0 - self.params.q_tls0) <= 2 * res.sigmas["q_tls0"]:
                hits += 1
        assert hits >= 90

    def test_regime_choice_does_not_move_tc(self):
        data = generate_freq_shift(self.params, OMEGA, self.temps, noise_sigma=1.5e-8, seed=7)
        results = {g: fit_freq_shift(data, gamma=g) for g in GAMMAS}
        for a, b in itertools.combinations(GAMMAS, 2):
            diff = abs(results[a].params.tc_k - results[b].params.tc_k)
            combined = np.hypot(results[a].sigmas["tc_k"], results[b].sigmas["tc_k"])
            assert diff <= combined

    def test_needs_six_points(self):
        with pytest.raises(InsufficientDataError):
            FreqShiftFit().fit(
                [0.05, 0.1, 0.2, 0.4, 0.8],
                [0.0, 1e-8, 2e-8, 3e-8, 4e-8],
                omega_rad_s=OMEGA,
            )
