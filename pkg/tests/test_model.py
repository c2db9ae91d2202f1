"""Tests for the kink-model representation."""

import numpy as np
import pytest

from kinkqr import (
    Dataset,
    MkqrParams,
    UsageError,
    build_design,
    fit_linear_qr,
    from_segment_form,
    objective,
    predict_quantile,
    to_segment_form,
)

CASE1 = MkqrParams(1.0, 1.0, betas=[-3.0], gamma=[1.0], deltas=[0.5])
CASE2 = MkqrParams(1.0, 1.0, betas=[-3.0, 4.0], gamma=[1.0], deltas=[-1.0, 2.0])


def random_params(rng, k, p):
    deltas = np.sort(rng.uniform(-4, 4, k))
    while k > 1 and np.min(np.diff(deltas)) < 1e-3:
        deltas = np.sort(rng.uniform(-4, 4, k))
    return MkqrParams(
        alpha0=rng.normal(),
        alpha1=rng.normal(),
        betas=rng.normal(size=k),
        gamma=rng.normal(size=p),
        deltas=deltas,
    )


class TestParams:
    def test_rejects_unsorted_deltas(self):
        with pytest.raises(UsageError):
            MkqrParams(0, 1, betas=[1, 1], gamma=[], deltas=[2.0, 1.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(UsageError):
            MkqrParams(0, 1, betas=[1.0], gamma=[], deltas=[1.0, 2.0])

    def test_k_zero_is_plain_linear(self):
        p = MkqrParams(2.0, -1.0)
        assert p.k == 0
        assert predict_quantile(p, 3.0) == pytest.approx(-1.0)


class TestBuildDesign:
    def test_hinge_arithmetic(self):
        x = np.array([2.0, -1.0, 4.0, 0.5])
        d = build_design(x, np.empty((4, 0)), [0.0, 3.0])
        assert d.values[0] == pytest.approx([1.0, 2.0, 2.0, 0.0])
        assert d.values[1] == pytest.approx([1.0, -1.0, 0.0, 0.0])
        assert d.values[2] == pytest.approx([1.0, 4.0, 4.0, 1.0])

    def test_no_kinks_degenerates_to_linear(self):
        x = np.arange(12.0)
        z = np.ones((12, 1))
        d = build_design(x, z, [])
        assert d.cols == 3
        assert d.labels == ["intercept", "x", "z1"]

    def test_hinge_zero_at_kink(self):
        x = np.array([1.5, 1.5, 0.0, 3.0])
        d = build_design(x, np.empty((4, 0)), [1.5])
        assert d.values[0, 2] == 0.0
        assert d.values[1, 2] == 0.0
        assert d.values[3, 2] == pytest.approx(1.5)

    def test_unsorted_deltas_rejected(self):
        with pytest.raises(UsageError):
            build_design(np.arange(10.0), np.empty((10, 0)), [2.0, 1.0])


class TestPredict:
    def test_value_at_kink(self):
        assert predict_quantile(CASE1, 0.5, np.array([0.0])) == pytest.approx(1.5)

    def test_value_beyond_kink(self):
        assert predict_quantile(CASE1, 1.5, np.array([0.0])) == pytest.approx(-0.5)

    def test_continuity_at_every_kink(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            pars = random_params(rng, int(rng.integers(1, 4)), 0)
            for d in pars.deltas:
                eps = 1e-9
                left = predict_quantile(pars, d - eps)
                right = predict_quantile(pars, d + eps)
                assert right == pytest.approx(left, abs=1e-6)

    def test_covariate_dimension_checked(self):
        with pytest.raises(UsageError):
            predict_quantile(CASE1, 1.0)


class TestObjective:
    def test_zero_for_noiseless_data(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(-5, 5, 60)
        z = rng.normal(size=(60, 1))
        y = predict_quantile(CASE2, x, z)
        data = Dataset(y=y, x=x, z=z)
        assert objective(data, CASE2, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_matches_linear_fit_for_k0(self, case1_data):
        sol = fit_linear_qr(
            build_design(case1_data.x, case1_data.z, []), case1_data.y, 0.3
        )
        pars = MkqrParams(sol.coefficients[0], sol.coefficients[1], gamma=sol.coefficients[2:])
        assert objective(case1_data, pars, 0.3) == pytest.approx(sol.objective, abs=1e-10)

    def test_nonnegative(self, case2_data):
        rng = np.random.default_rng(1)
        for _ in range(10):
            pars = random_params(rng, 2, 1)
            assert objective(case2_data, pars, 0.5) >= 0.0

    def test_permutation_invariant(self, case2_data):
        rng = np.random.default_rng(2)
        perm = rng.permutation(case2_data.n)
        shuffled = Dataset(y=case2_data.y[perm], x=case2_data.x[perm], z=case2_data.z[perm])
        assert objective(shuffled, CASE2, 0.4) == pytest.approx(objective(case2_data, CASE2, 0.4), abs=1e-12)

    def test_dimension_mismatch(self, case2_data):
        with pytest.raises(UsageError):
            objective(case2_data, MkqrParams(0, 1), 0.5)


class TestSegmentForm:
    def test_k0_single_segment(self):
        seg = to_segment_form(MkqrParams(2.0, 3.0))
        assert seg.intercepts == pytest.approx([2.0])
        assert seg.slopes == pytest.approx([3.0])

    def test_case2_cumulative_slopes(self):
        seg = to_segment_form(CASE2)
        assert seg.slopes == pytest.approx([1.0, -2.0, 2.0])

    def test_continuity_invariant_holds(self):
        seg = to_segment_form(CASE2)
        for k, d in enumerate(seg.deltas):
            left = seg.intercepts[k] + seg.slopes[k] * d
            right = seg.intercepts[k + 1] + seg.slopes[k + 1] * d
            assert right == pytest.approx(left, abs=1e-12)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            pars = random_params(rng, int(rng.integers(0, 4)), int(rng.integers(0, 3)))
            back = from_segment_form(to_segment_form(pars))
            assert back.theta() == pytest.approx(pars.theta(), abs=1e-10)

    def test_segment_matches_prediction(self):
        seg = to_segment_form(CASE2)
        x = 3.1  # beyond the last kink
        expected = seg.intercepts[2] + seg.slopes[2] * x
        assert predict_quantile(CASE2, x, np.zeros(1)) == pytest.approx(expected)


class TestLocationEquivariance:
    def test_shifting_x_and_kinks_preserves_predictions(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pars = random_params(rng, 2, 1)
            a = float(rng.normal()) * 2
            shifted = MkqrParams(
                alpha0=pars.alpha0 - a * pars.alpha1,
                alpha1=pars.alpha1,
                betas=pars.betas,
                gamma=pars.gamma,
                deltas=pars.deltas + a,
            )
            x = rng.uniform(-6, 6, 50)
            z = rng.normal(size=(50, 1))
            np.testing.assert_allclose(
                predict_quantile(shifted, x + a, z),
                predict_quantile(pars, x, z),
                atol=1e-9,
            )


class TestDataset:
    def test_too_small_rejected(self):
        with pytest.raises(UsageError):
            Dataset(y=np.arange(5.0), x=np.arange(5.0), z=np.empty((5, 0)))

    def test_constant_x_rejected(self):
        with pytest.raises(UsageError):
            Dataset(y=np.arange(20.0), x=np.ones(20), z=np.empty((20, 0)))

    def test_non_finite_rejected(self):
        y = np.arange(20.0)
        y[3] = np.nan
        with pytest.raises(UsageError):
            Dataset(y=y, x=np.arange(20.0), z=np.empty((20, 0)))

    def test_needs_p_plus_4(self):
        n = 12
        with pytest.raises(UsageError):
            Dataset(y=np.arange(float(n)), x=np.arange(float(n)), z=np.ones((n, 9)))
