"""Monte Carlo studies over the synthetic scenarios.

Each study maps independent replicates (seeded by master seed and replicate
index, so results do not depend on worker count or scheduling) and reduces
them into the summary tables the command-line ``simulate`` command emits:
kink-count selection rates, estimation bias/SD/SE/MSE, confidence-interval
coverage and length, and rejection-rate curves for the kink-existence test.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .brisq import BrisqSettings, brisq_fit
from .errors import ConvergenceError, DegenerateBootstrapError, RankError
from .infer import bootstrap_ci, covariance, srs_invert_ci, wald_ci, wild_bootstrap_pvalue
from .kselect import backward_eliminate
from .simgen import ScenarioSpec, generate, true_theta_at

PARAM_ORDER = ("alpha0", "alpha1", "betas", "gamma", "deltas")


def _map_replicates(fn, args_list, jobs):
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args_list, chunksize=max(1, len(args_list) // (4 * jobs))))


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None or jobs < 1:
        return max(1, os.cpu_count() or 1)
    return jobs


@dataclass
class SelectionSummary:
    spec: ScenarioSpec
    tau: float
    cn_rule: str
    k_true: int
    reps: int
    k_hats: list[int]
    seconds: float

    @property
    def rate(self) -> float:
        return float(np.mean([k == self.k_true for k in self.k_hats]))

    def to_dict(self) -> dict:
        ks, counts = np.unique(self.k_hats, return_counts=True)
        return {
            "study": "selection",
            "case": self.spec.case,
            "n": self.spec.n,
            "error": self.spec.error,
            "heteroscedastic": self.spec.heteroscedastic,
            "tau": self.tau,
            "cn": self.cn_rule,
            "reps": self.reps,
            "k_true": self.k_true,
            "selection_rate": self.rate,
            "k_hat_counts": {int(k): int(c) for k, c in zip(ks, counts)},
            "seconds": self.seconds,
        }


def _selection_rep(args):
    spec, tau, cn_rule, kmax, rep = args
    data, _ = generate(replace(spec, seed=_rep_seed(spec.seed, rep)))
    settings = BrisqSettings(seed=_rep_seed(spec.seed, rep))
    report, _ = backward_eliminate(data, tau, kmax, cn_rule, settings, with_covariance=False)
    return report.k_hat


def _rep_seed(master: int, rep: int) -> int:
    return (int(master) * 1_000_003 + rep) % (2**63)


def run_selection_study(
    spec: ScenarioSpec,
    tau: float = 0.5,
    cn_rule: str = "log_n",
    reps: int = 200,
    kmax: int = 10,
    jobs: int = 1,
) -> SelectionSummary:
    """Fraction of replicates whose backward elimination recovers the true kink count."""
    t0 = time.perf_counter()
    args = [(spec, tau, cn_rule, kmax, r) for r in range(reps)]
    k_hats = _map_replicates(_selection_rep, args, jobs)
    return SelectionSummary(
        spec=spec,
        tau=tau,
        cn_rule=cn_rule,
        k_true=spec.base_params().k,
        reps=reps,
        k_hats=list(map(int, k_hats)),
        seconds=time.perf_counter() - t0,
    )


@dataclass
class EstimationSummary:
    spec: ScenarioSpec
    tau: float
    reps: int
    labels: list[str]
    estimates: np.ndarray
    standard_errors: np.ndarray
    truth: np.ndarray
    seconds: float
    failed: int = 0

    def table(self) -> dict:
        bias = self.estimates.mean(axis=0) - self.truth
        sd = self.estimates.std(axis=0, ddof=1)
        se = self.standard_errors.mean(axis=0)
        mse = np.mean((self.estimates - self.truth) ** 2, axis=0)
        return {
            label: {"bias": float(b), "sd": float(s), "se": float(a), "mse": float(m)}
            for label, b, s, a, m in zip(self.labels, bias, sd, se, mse)
        }

    def to_dict(self) -> dict:
        return {
            "study": "estimation",
            "case": self.spec.case,
            "n": self.spec.n,
            "error": self.spec.error,
            "heteroscedastic": self.spec.heteroscedastic,
            "tau": self.tau,
            "reps": self.reps,
            "failed": self.failed,
            "parameters": self.table(),
            "seconds": self.seconds,
        }


def _estimation_rep(args):
    spec, tau, rep = args
    data, _ = generate(replace(spec, seed=_rep_seed(spec.seed, rep)))
    k = spec.base_params().k
    settings = BrisqSettings(seed=_rep_seed(spec.seed, rep))
    try:
        est = brisq_fit(data, tau, k, settings)
        if est.k != k:
            return None
        cov = covariance(data, est, tau)
    except (ConvergenceError, RankError):
        return None
    return est.params.theta(), cov.standard_errors


def run_estimation_study(
    spec: ScenarioSpec,
    tau: float = 0.5,
    reps: int = 500,
    jobs: int = 1,
) -> EstimationSummary:
    """Bias, Monte Carlo SD, average plug-in SE and MSE of every parameter."""
    t0 = time.perf_counter()
    truth = true_theta_at(spec, tau).params
    args = [(spec, tau, r) for r in range(reps)]
    rows = _map_replicates(_estimation_rep, args, jobs)
    kept = [r for r in rows if r is not None]
    estimates = np.array([r[0] for r in kept])
    ses = np.array([r[1] for r in kept])
    k, p = truth.k, truth.p
    labels = (
        ["alpha0", "alpha1"]
        + [f"beta{j + 1}" for j in range(k)]
        + [f"gamma{j + 1}" for j in range(p)]
        + [f"delta{j + 1}" for j in range(k)]
    )
    return EstimationSummary(
        spec=spec,
        tau=tau,
        reps=reps,
        labels=labels,
        estimates=estimates,
        standard_errors=ses,
        truth=truth.theta(),
        seconds=time.perf_counter() - t0,
        failed=reps - len(kept),
    )


@dataclass
class PowerSummary:
    n: int
    tau: float
    error: str
    heteroscedastic: bool
    b: int
    reps: int
    level: float
    c_values: list[float]
    rejection_rates: list[float]
    seconds: float

    def to_dict(self) -> dict:
        return {
            "study": "power",
            "n": self.n,
            "error": self.error,
            "heteroscedastic": self.heteroscedastic,
            "tau": self.tau,
            "bootstrap": self.b,
            "reps": self.reps,
            "level": self.level,
            "curve": [
                {"c": c, "rejection_rate": r} for c, r in zip(self.c_values, self.rejection_rates)
            ],
            "seconds": self.seconds,
        }


def _power_rep(args):
    spec, tau, b, level, rep = args
    data, _ = generate(replace(spec, seed=_rep_seed(spec.seed, rep)))
    res = wild_bootstrap_pvalue(data, tau, b=b, seed=_rep_seed(spec.seed, rep))
    return res.p_value < (1.0 - level)


def run_power_study(
    c_values,
    n: int = 1000,
    tau: float = 0.5,
    error: str = "normal",
    heteroscedastic: bool = False,
    b: int = 300,
    reps: int = 200,
    level: float = 0.95,
    seed: int = 0,
    jobs: int = 1,
) -> PowerSummary:
    """Rejection rate of the kink-existence test along a signal-strength grid."""
    t0 = time.perf_counter()
    rates = []
    for ci, c in enumerate(c_values):
        spec = ScenarioSpec(
            case=1, n=n, error=error, heteroscedastic=heteroscedastic,
            power_c=float(c), seed=_rep_seed(seed, 90_000 + ci),
        )
        args = [(spec, tau, b, level, r) for r in range(reps)]
        flags = _map_replicates(_power_rep, args, jobs)
        rates.append(float(np.mean(flags)))
    return PowerSummary(
        n=n, tau=tau, error=error, heteroscedastic=heteroscedastic,
        b=b, reps=reps, level=level,
        c_values=[float(c) for c in c_values], rejection_rates=rates,
        seconds=time.perf_counter() - t0,
    )


@dataclass
class CoverageSummary:
    spec: ScenarioSpec
    tau: float
    level: float
    methods: list[str]
    reps: int
    used: int
    coverage: dict
    mean_length: dict
    mean_seconds: dict
    seconds: float

    def to_dict(self) -> dict:
        return {
            "study": "coverage",
            "case": self.spec.case,
            "n": self.spec.n,
            "error": self.spec.error,
            "heteroscedastic": self.spec.heteroscedastic,
            "tau": self.tau,
            "level": self.level,
            "reps": self.reps,
            "used": self.used,
            "methods": {
                m: {
                    "coverage": self.coverage[m],
                    "mean_length": self.mean_length[m],
                    "mean_seconds": self.mean_seconds[m],
                }
                for m in self.methods
            },
            "seconds": self.seconds,
        }


def _coverage_rep(args):
    spec, tau, level, methods, boot_b, rep = args
    data, _ = generate(replace(spec, seed=_rep_seed(spec.seed, rep)))
    k = spec.base_params().k
    settings = BrisqSettings(seed=_rep_seed(spec.seed, rep))
    try:
        est = brisq_fit(data, tau, k, settings)
    except (ConvergenceError, RankError):
        return None
    if est.k != k:
        return None
    out = {}
    for method in methods:
        t0 = time.perf_counter()
        try:
            if method == "wald":
                ivs = wald_ci(est, covariance(data, est, tau), level)
            elif method == "score":
                ivs = srs_invert_ci(data, tau, est, level)
            elif method == "boot":
                ivs = bootstrap_ci(
                    data, tau, k, b=boot_b, level=level,
                    seed=_rep_seed(spec.seed, rep), settings=settings, theta=est,
                )
            else:
                continue
        except (ConvergenceError, RankError, DegenerateBootstrapError):
            out[method] = None
            continue
        out[method] = (
            [(iv.lower, iv.upper) for iv in ivs.intervals],
            time.perf_counter() - t0,
        )
    return out


def run_coverage_study(
    spec: ScenarioSpec,
    tau: float = 0.5,
    level: float = 0.95,
    methods=("wald", "score"),
    reps: int = 200,
    boot_b: int = 200,
    jobs: int = 1,
) -> CoverageSummary:
    """Empirical coverage and mean length of kink-location intervals per method."""
    t0 = time.perf_counter()
    methods = list(methods)
    truth = spec.base_params().deltas
    args = [(spec, tau, level, methods, boot_b, r) for r in range(reps)]
    rows = [r for r in _map_replicates(_coverage_rep, args, jobs) if r is not None]
    coverage, length, secs = {}, {}, {}
    for m in methods:
        entries = [r[m] for r in rows if r.get(m) is not None]
        if not entries:
            coverage[m], length[m], secs[m] = [], [], 0.0
            continue
        cov_hits = np.array(
            [[lo <= d <= hi for (lo, hi), d in zip(iv, truth)] for iv, _ in entries], dtype=float
        )
        lens = np.array([[hi - lo for lo, hi in iv] for iv, _ in entries])
        coverage[m] = [float(v) for v in cov_hits.mean(axis=0)]
        length[m] = [float(v) for v in lens.mean(axis=0)]
        secs[m] = float(np.mean([s for _, s in entries]))
    return CoverageSummary(
        spec=spec, tau=tau, level=level, methods=methods,
        reps=reps, used=len(rows),
        coverage=coverage, mean_length=length, mean_seconds=secs,
        seconds=time.perf_counter() - t0,
    )
