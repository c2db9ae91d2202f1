"""Tests for the iterated-linearization estimator and its restart stage."""

import numpy as np
import pytest

from kinkqr import (
    BrisqSettings,
    Dataset,
    MkqrParams,
    RankError,
    UsageError,
    brisq_fit,
    build_design,
    fit_linear_qr,
    init_kinks,
    iterate_segmented,
    linearized_step,
    predict_quantile,
)
from kinkqr.errors import ConvergenceError

from conftest import make_case, make_null


def noiseless_case1(n=400, seed=33):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5, 5, n)
    z = rng.normal(1, 1, (n, 1))
    pars = MkqrParams(1.0, 1.0, betas=[-3.0], gamma=[1.0], deltas=[0.5])
    return Dataset(y=predict_quantile(pars, x, z), x=x, z=z), pars


def profile_oracle(data, tau=0.5, points=500):
    """Exhaustive single-kink grid search with an exact refit per candidate."""
    xs = np.sort(data.x)
    lo, hi = xs[10], xs[-11]
    best = np.inf
    best_delta = None
    for d in np.linspace(lo, hi, points):
        try:
            sol = fit_linear_qr(build_design(data.x, data.z, [d]), data.y, tau)
        except (RankError, ConvergenceError):
            continue
        if sol.objective < best:
            best, best_delta = sol.objective, d
    return best_delta, best


class TestInitKinks:
    def test_single_kink_near_median(self):
        x = np.arange(1.0, 101.0)
        got = init_kinks(x, 1)
        assert got[0] == pytest.approx(np.median(x), abs=1.0)

    def test_three_kinks_on_uniform(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-5, 5, 5000)
        got = init_kinks(x, 3)
        assert got == pytest.approx([-2.5, 0.0, 2.5], abs=0.2)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(1)
        x = np.round(rng.uniform(0, 3, 300), 1)  # heavy ties
        got = init_kinks(x, 5)
        assert np.all(np.diff(got) > 0)

    def test_oversized_k_rejected(self):
        x = np.arange(40.0)
        with pytest.raises(UsageError):
            init_kinks(x, 12, min_segment_obs=10)


class TestLinearizedStep:
    def test_fixed_point_for_noiseless_truth(self):
        data, pars = noiseless_case1()
        step = linearized_step(data, 0.5, pars.deltas, min_segment_obs=10, beta_floor=1e-8)
        assert step.deltas_next.size == 1
        assert step.deltas_next[0] == pytest.approx(0.5, abs=1e-5)

    def test_converges_near_profile_oracle(self):
        data = make_case(1, 500, seed=707)
        settings = BrisqSettings(seed=0)
        est = iterate_segmented(data, 0.5, np.array([0.0]), settings)
        oracle_delta, _ = profile_oracle(data)
        assert est.k == 1
        assert abs(est.params.deltas[0] - oracle_delta) < 0.1

    def test_beta_degenerate_is_dropped(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-5, 5, 200)
        z = rng.normal(size=(200, 1))
        data = Dataset(y=1 + x + z[:, 0], x=x, z=z)  # no kink, no noise
        step = linearized_step(data, 0.5, np.array([0.0]), min_segment_obs=10, beta_floor=1e-6)
        assert step.deltas_next.size == 0
        assert any(d.reason == "beta-degenerate" for d in step.report.dropped)

    def test_requires_sorted_deltas(self, case2_data):
        with pytest.raises(UsageError):
            linearized_step(case2_data, 0.5, np.array([2.0, -1.0]))


class TestIterateSegmented:
    def test_already_converged_start_is_kept(self):
        data, pars = noiseless_case1()
        est = iterate_segmented(data, 0.5, pars.deltas, BrisqSettings(seed=0))
        assert est.converged
        assert est.params.deltas[0] == pytest.approx(0.5, abs=1e-4)

    def test_null_data_frequently_drops_to_k0(self):
        # Regression baseline: of 20 no-kink datasets, most single-kink
        # iterations collapse to the linear model.
        drops = 0
        for s in range(20):
            data = make_null(500, 900 + s)
            est = iterate_segmented(data, 0.5, init_kinks(data.x, 1), BrisqSettings(seed=s))
            drops += est.k == 0
        assert drops >= 10

    def test_output_admissible(self):
        for s in range(5):
            data = make_case(2, 500, seed=40 + s)
            est = iterate_segmented(data, 0.5, init_kinks(data.x, 6), BrisqSettings(seed=s))
            d = est.params.deltas
            if d.size > 1:
                assert np.all(np.diff(d) > 0)
            for kink in d:
                assert data.x.min() < kink < data.x.max()
            edges = np.concatenate([[-np.inf], d, [np.inf]])
            counts = [np.sum((data.x > a) & (data.x <= b)) for a, b in zip(edges[:-1], edges[1:])]
            if d.size:
                assert min(counts) >= 10

    def test_empty_start_returns_linear_fit(self, case1_data):
        est = iterate_segmented(case1_data, 0.5, np.empty(0), BrisqSettings(seed=0))
        assert est.k == 0
        assert est.converged


class TestBrisqFit:
    def test_noiseless_case1_exact(self):
        data, pars = noiseless_case1()
        est = brisq_fit(data, 0.5, 1, BrisqSettings(seed=7))
        assert est.params.deltas[0] == pytest.approx(0.5, abs=1e-6)
        assert est.params.alpha0 == pytest.approx(1.0, abs=1e-6)
        assert est.params.alpha1 == pytest.approx(1.0, abs=1e-6)
        assert est.params.betas[0] == pytest.approx(-3.0, abs=1e-6)
        assert est.params.gamma[0] == pytest.approx(1.0, abs=1e-6)
        assert est.objective <= 1e-10

    def test_accepted_objective_trajectory_monotone(self):
        data = make_case(1, 500, seed=15)
        est = brisq_fit(data, 0.5, 1, BrisqSettings(seed=3))
        traj = est.restart_objectives
        assert len(traj) == 20
        assert all(b <= a + 1e-15 for a, b in zip(traj, traj[1:]))
        for accepted, before, after in zip(est.restart_accepted[1:], traj, traj[1:]):
            if accepted:
                assert after < before

    def test_restart_improves_or_keeps_stage_one(self):
        data = make_case(2, 500, seed=88)
        cfg = BrisqSettings(seed=5)
        stage1 = iterate_segmented(data, 0.5, init_kinks(data.x, 2), cfg.resolved(data))
        est = brisq_fit(data, 0.5, 2, cfg)
        assert est.objective <= stage1.objective * (1.0 + cfg.epsilon) + 1e-12

    def test_deterministic_given_seed(self):
        data = make_case(2, 400, seed=21)
        a = brisq_fit(data, 0.5, 2, BrisqSettings(seed=9))
        b = brisq_fit(data, 0.5, 2, BrisqSettings(seed=9))
        assert np.array_equal(a.params.theta(), b.params.theta())
        assert a.objective == b.objective
        assert a.restart_objectives == b.restart_objectives

    def test_oracle_dominance_few_seeds(self):
        for s in range(3):
            data = make_case(1, 200, seed=1000 + s)
            est = brisq_fit(data, 0.5, 1, BrisqSettings(seed=s))
            _, oracle_obj = profile_oracle(data)
            assert est.objective <= oracle_obj * (1 + 1e-3)

    def test_k_zero_rejected(self, case1_data):
        with pytest.raises(UsageError):
            brisq_fit(case1_data, 0.5, 0)

    def test_settings_validation(self):
        with pytest.raises(UsageError):
            BrisqSettings(epsilon=1.5)
        with pytest.raises(UsageError):
            BrisqSettings(restart_count=-1)
