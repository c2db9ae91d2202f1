"""Tests for the simulation scenario generator."""

import numpy as np
import pytest
import scipy.stats

from kinkqr import ScenarioSpec, UsageError, generate, predict_quantile, true_theta_at


class TestScenarioSpec:
    def test_case_params(self):
        for case, betas, deltas in [
            (1, [-3.0], [0.5]),
            (2, [-3.0, 4.0], [-1.0, 2.0]),
            (3, [-3.0, 4.0, -4.0], [-3.0, 0.0, 3.0]),
        ]:
            pars = ScenarioSpec(case=case).base_params()
            assert pars.betas == pytest.approx(betas)
            assert pars.deltas == pytest.approx(deltas)
            assert (pars.alpha0, pars.alpha1) == (1.0, 1.0)
            assert pars.gamma == pytest.approx([1.0])

    def test_power_design_scales_beta(self):
        spec = ScenarioSpec(case=1, n=900, power_c=6.0)
        pars = spec.base_params()
        assert pars.betas[0] == pytest.approx(6.0 / 30.0)
        assert pars.deltas[0] == 0.5

    def test_invalid_case(self):
        with pytest.raises(UsageError):
            ScenarioSpec(case=7)

    def test_invalid_error_kind(self):
        with pytest.raises(UsageError):
            ScenarioSpec(error="cauchy")

    def test_config_round_trip(self):
        spec = ScenarioSpec(case=2, n=750, error="t3", heteroscedastic=True, seed=99)
        back = ScenarioSpec.from_config(spec.to_config())
        assert back == spec


class TestGenerate:
    def test_x_support(self):
        data, _ = generate(ScenarioSpec(case=1, n=2000, seed=1))
        assert data.x.min() >= -5.0
        assert data.x.max() <= 5.0

    def test_fixed_seed_is_byte_identical(self):
        a, _ = generate(ScenarioSpec(case=2, n=500, seed=42))
        b, _ = generate(ScenarioSpec(case=2, n=500, seed=42))
        assert a.y.tobytes() == b.y.tobytes()
        assert a.x.tobytes() == b.x.tobytes()
        assert a.z.tobytes() == b.z.tobytes()

    def test_different_seeds_differ(self):
        a, _ = generate(ScenarioSpec(case=2, n=500, seed=42))
        b, _ = generate(ScenarioSpec(case=2, n=500, seed=43))
        assert not np.array_equal(a.y, b.y)

    def test_median_truth_returned(self):
        _, truth = generate(ScenarioSpec(case=3, n=200, seed=0))
        assert truth.tau == 0.5
        assert truth.params.deltas == pytest.approx([-3.0, 0.0, 3.0])

    def test_t3_heavier_tails_than_normal(self):
        n = 100_000
        normal, _ = generate(ScenarioSpec(case=1, n=n, error="normal", seed=5))
        heavy, _ = generate(ScenarioSpec(case=1, n=n, error="t3", seed=5))
        assert scipy.stats.kurtosis(heavy.y) > scipy.stats.kurtosis(normal.y)


class TestTrueTheta:
    @pytest.mark.parametrize("error", ["normal", "t3"])
    def test_median_equals_generator_params(self, error):
        spec = ScenarioSpec(case=2, error=error, heteroscedastic=True)
        truth = true_theta_at(spec, 0.5)
        assert truth.params.theta() == pytest.approx(spec.base_params().theta(), abs=1e-12)

    def test_homoscedastic_shifts_intercept_only(self):
        spec = ScenarioSpec(case=1, error="normal")
        truth = true_theta_at(spec, 0.7)
        q = scipy.stats.norm.ppf(0.7)
        assert truth.params.alpha0 == pytest.approx(1.0 + q)
        assert truth.params.alpha1 == pytest.approx(1.0)

    def test_heteroscedastic_tilts_slope(self):
        spec = ScenarioSpec(case=1, error="normal", heteroscedastic=True)
        truth = true_theta_at(spec, 0.7)
        q = scipy.stats.norm.ppf(0.7)
        assert truth.params.alpha0 == pytest.approx(1.0 + q)
        assert truth.params.alpha1 == pytest.approx(1.0 + 0.2 * q)

    @pytest.mark.parametrize("tau", [0.2, 0.5, 0.8])
    @pytest.mark.parametrize("hetero", [False, True])
    def test_kinks_never_shift(self, tau, hetero):
        spec = ScenarioSpec(case=3, error="t3", heteroscedastic=hetero)
        truth = true_theta_at(spec, tau)
        assert truth.params.deltas == pytest.approx([-3.0, 0.0, 3.0], abs=0)
        assert truth.params.betas == pytest.approx([-3.0, 4.0, -4.0], abs=0)

    @pytest.mark.parametrize("tau", [0.3, 0.7])
    def test_monte_carlo_quantile_check(self, tau):
        # With the covariate effect removed (its coefficient is one by
        # construction), the empirical tau-quantile of y - z inside narrow x
        # windows must match the quantile-adjusted truth at z = 0.
        spec = ScenarioSpec(case=1, n=100_000, error="normal", heteroscedastic=True, seed=11)
        data, _ = generate(spec)
        truth = true_theta_at(spec, tau).params
        centered = data.y - data.z[:, 0]
        for x0 in (-3.0, 1.5, 4.0):
            mask = np.abs(data.x - x0) < 0.2
            emp = np.quantile(centered[mask], tau)
            expected = predict_quantile(truth, x0, np.zeros(1))
            assert emp == pytest.approx(expected, abs=0.06)
