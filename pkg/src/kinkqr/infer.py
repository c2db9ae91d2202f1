"""Inference for kink models.

Covers the kink-existence score test with wild-bootstrap p-values, the
sandwich covariance of the fitted parameters, and three confidence-interval
constructions for the kink locations: Wald, paired-bootstrap percentile, and
inversion of a smoothed rank-score test.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from ._rng import stream
from .brisq import BrisqSettings, ThetaEstimate, _brisq_from, brisq_fit
from .errors import ConvergenceError, DegenerateBootstrapError, RankError, UsageError
from .linqr import as_tau, density_weights, fit_linear_qr, psi
from .model import Dataset, MkqrParams, build_design, predict_quantile

CI_METHODS = ("wald", "boot", "score")


@dataclass
class ScoreGrid:
    """Candidate kink locations for the sup-score statistic."""

    values: np.ndarray
    trim: tuple[float, float] = (0.10, 0.90)

    def __post_init__(self):
        self.values = np.unique(np.asarray(self.values, dtype=float).ravel())
        if self.values.size < 10:
            raise UsageError(f"score grid needs at least 10 points, got {self.values.size}")

    @classmethod
    def from_data(cls, x, lower: float = 0.10, upper: float = 0.90) -> "ScoreGrid":
        """All sample x values between the ``lower`` and ``upper`` quantiles."""
        x = np.asarray(x, dtype=float).ravel()
        lo, hi = np.quantile(x, [lower, upper])
        vals = np.unique(x[(x >= lo) & (x <= hi)])
        return cls(values=vals, trim=(lower, upper))


@dataclass
class CovarianceEstimate:
    """Sandwich covariance of (alpha0, alpha1, betas, gamma, deltas)."""

    sigma: np.ndarray
    c_hat: np.ndarray
    d_hat: np.ndarray
    n: int
    bandwidth_rule: str
    labels: list[str]

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.sigma), 0.0) / self.n)


@dataclass
class KinkTestResult:
    """Sup-score statistic with its wild-bootstrap p-value."""

    statistic: float
    p_value: float
    b: int
    seed: int
    argmax_delta: float
    replicate_statistics: np.ndarray | None = None
    replicate_process: np.ndarray | None = None  # grid x replicates, when kept


@dataclass
class KinkInterval:
    index: int
    lower: float
    upper: float
    method: str
    level: float
    truncated_lower: bool = False
    truncated_upper: bool = False


@dataclass
class IntervalSet:
    intervals: list[KinkInterval] = field(default_factory=list)
    method: str = ""
    level: float = 0.95
    tau: float = 0.5
    time_seconds: float | None = None
    discarded_replicates: int = 0


def _null_design(data: Dataset) -> np.ndarray:
    return np.column_stack([np.ones(data.n), data.x, data.z])


def _cumulative_score_pieces(x, weights):
    """Prefix sums of ``weights`` and ``weights * x`` over x sorted ascending.

    For any threshold d, sums of w_t (x_t - d) over {x_t <= d} follow from the
    two prefix sums at the insertion point of d.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ws = weights[order]
    cw = np.concatenate([[0.0], np.cumsum(ws)])
    cwx = np.concatenate([[0.0], np.cumsum(ws * xs)])
    return xs, cw, cwx


def _score_process(x, weights, grid_values):
    """sum_t w_t (x_t - d) 1[x_t <= d] for every d in the grid, via prefix sums."""
    xs, cw, cwx = _cumulative_score_pieces(x, weights)
    pos = np.searchsorted(xs, grid_values, side="right")
    return cwx[pos] - grid_values * cw[pos]


def score_statistic(data: Dataset, tau, grid: ScoreGrid | None = None, *, qr_tol: float = 1e-8):
    """Sup of the weighted-CUSUM kink score over candidate locations.

    Fits the no-kink linear quantile regression, forms the subgradient-weighted
    partial sums sum_t psi(resid_t) (x_t - d) 1[x_t <= d] / sqrt(n) over the
    grid, and returns ``(T_n, argmax location, per-grid values)``.  Large
    values indicate a kink somewhere in the grid range.
    """
    t = as_tau(tau)
    if grid is None:
        grid = ScoreGrid.from_data(data.x)
    sol = fit_linear_qr(_null_design(data), data.y, t, tol=qr_tol)
    scores = psi(sol.residuals, t)
    r_values = _score_process(data.x, scores, grid.values) / np.sqrt(data.n)
    j = int(np.argmax(np.abs(r_values)))
    return float(np.abs(r_values[j])), float(grid.values[j]), r_values


def wild_bootstrap_pvalue(
    data: Dataset,
    tau,
    b: int = 300,
    grid: ScoreGrid | None = None,
    seed: int = 0,
    *,
    bandwidth_rule: str = "hall-sheather",
    keep_replicates: bool = False,
    keep_process: bool = False,
    qr_tol: float = 1e-8,
) -> KinkTestResult:
    """Wild-bootstrap p-value for the kink-existence score test.

    Each replicate rebuilds the score process from sign-randomized pseudo
    scores, centered by the density-weighted projection of the null design,
    and the p-value is the proportion of replicate suprema reaching the
    observed statistic.
    """
    t = as_tau(tau)
    if b < 1:
        raise UsageError("need at least one bootstrap replicate")
    if grid is None:
        grid = ScoreGrid.from_data(data.x)
    V = _null_design(data)
    sol = fit_linear_qr(V, data.y, t, tol=qr_tol)
    t_n, argmax_delta, _ = score_statistic(data, t, grid, qr_tol=qr_tol)

    f = density_weights(sol.residuals, V, t, bandwidth_rule, qr_tol=qr_tol).values
    n = data.n
    h_n = (V * f[:, None]).T @ V / n
    try:
        h_fac = scipy.linalg.cho_factor(h_n, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise RankError("density-weighted design moment matrix is singular")
    # h1[j] = n^-1 sum_t f_t V_t (x_t - d_j) 1[x_t <= d_j], one row per grid point.
    h1 = np.column_stack(
        [_score_process(data.x, f * V[:, col], grid.values) for col in range(V.shape[1])]
    ) / n
    correction = h1 @ scipy.linalg.cho_solve(h_fac, np.eye(V.shape[1]), check_finite=False)

    rng = stream(seed)
    m = grid.values.size
    t_star = np.zeros(b)
    block = max(1, int(2_000_000 // max(n, 1)))
    v_draw = rng.standard_normal((b, n)) - scipy.stats.norm.ppf(t)
    w_draw = rng.integers(0, 2, size=(b, n)) * 2.0 - 1.0
    u = (w_draw * psi(v_draw, t)).T  # n x b
    process = np.empty((m, b)) if keep_process else None
    for start in range(0, m, block):
        stop = min(start + block, m)
        gv = grid.values[start:stop]
        hinge = (data.x[None, :] - gv[:, None]) * (data.x[None, :] <= gv[:, None])
        g_block = hinge - correction[start:stop] @ V.T
        r_star = g_block @ u / np.sqrt(n)
        if keep_process:
            process[start:stop] = r_star
        np.maximum(t_star, np.max(np.abs(r_star), axis=0), out=t_star)
    p = float(np.mean(t_star >= t_n))
    return KinkTestResult(
        statistic=t_n,
        p_value=p,
        b=b,
        seed=seed,
        argmax_delta=argmax_delta,
        replicate_statistics=t_star if keep_replicates else None,
        replicate_process=process,
    )


def _h_vector(params: MkqrParams, x, z) -> np.ndarray:
    """Gradient columns (1, x, hinges, z, -beta_k 1[x > d_k]) of the quantile map."""
    n = x.size
    cols = [np.ones(n), x]
    for d in params.deltas:
        cols.append(np.maximum(x - d, 0.0))
    for j in range(params.p):
        cols.append(z[:, j])
    for bcoef, d in zip(params.betas, params.deltas):
        cols.append(-bcoef * (x > d).astype(float))
    return np.column_stack(cols)


def covariance(
    data: Dataset,
    theta: ThetaEstimate | MkqrParams,
    tau,
    bandwidth_rule: str = "hall-sheather",
    *,
    qr_tol: float = 1e-8,
) -> CovarianceEstimate:
    """Plug-in sandwich covariance D^-1 C D^-1 of the fitted parameter vector.

    C is the tau(1-tau)-scaled outer-product moment of the gradient columns;
    D adds difference-quotient density weights at the fitted residuals.
    Standard errors are sqrt(diag(Sigma) / n).
    """
    t = as_tau(tau)
    params = theta.params if isinstance(theta, ThetaEstimate) else theta
    if params.p != data.p:
        raise UsageError("parameter dimension does not match dataset")
    h = _h_vector(params, data.x, data.z)
    resid = data.y - predict_quantile(params, data.x, data.z if data.p else None)
    design = build_design(data.x, data.z, params.deltas)
    f = density_weights(resid, design, t, bandwidth_rule, qr_tol=qr_tol).values
    n = data.n
    c_hat = t * (1.0 - t) * (h.T @ h) / n
    d_hat = (h * f[:, None]).T @ h / n
    try:
        d_inv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(d_hat, check_finite=False), np.eye(h.shape[1]))
    except scipy.linalg.LinAlgError:
        raise RankError(
            "density-weighted Hessian plug-in is singular; "
            "too little data near a kink or degenerate density weights"
        )
    sigma = d_inv @ c_hat @ d_inv
    sigma = 0.5 * (sigma + sigma.T)
    k = params.k
    labels = (
        ["alpha0", "alpha1"]
        + [f"beta{j + 1}" for j in range(k)]
        + [f"gamma{j + 1}" for j in range(params.p)]
        + [f"delta{j + 1}" for j in range(k)]
    )
    return CovarianceEstimate(
        sigma=sigma, c_hat=c_hat, d_hat=d_hat, n=n, bandwidth_rule=bandwidth_rule, labels=labels
    )


def wald_ci(
    theta: ThetaEstimate | MkqrParams,
    cov: CovarianceEstimate,
    level: float = 0.95,
) -> IntervalSet:
    """Symmetric normal intervals delta_k +/- z_(alpha/2) SE(delta_k)."""
    if not (0.0 < level < 1.0):
        raise UsageError("confidence level must lie in (0, 1)")
    params = theta.params if isinstance(theta, ThetaEstimate) else theta
    k = params.k
    if k == 0:
        return IntervalSet(intervals=[], method="wald", level=level)
    ses = cov.standard_errors[-k:]
    zcrit = scipy.stats.norm.ppf(0.5 + level / 2.0)
    out = IntervalSet(method="wald", level=level)
    for j in range(k):
        half = zcrit * float(ses[j])
        out.intervals.append(
            KinkInterval(index=j, lower=float(params.deltas[j] - half), upper=float(params.deltas[j] + half),
                         method="wald", level=level)
        )
    return out


def bootstrap_ci(
    data: Dataset,
    tau,
    k: int,
    b: int = 200,
    level: float = 0.95,
    seed: int = 0,
    settings: BrisqSettings | None = None,
    theta: ThetaEstimate | None = None,
) -> IntervalSet:
    """Percentile intervals from paired-bootstrap refits warm-started at the fit.

    Replicates whose refit does not retain ``k`` kinks are discarded and
    counted; fewer than ``b / 2`` usable replicates raises
    :class:`DegenerateBootstrapError`.
    """
    t = as_tau(tau)
    if not (0.0 < level < 1.0):
        raise UsageError("confidence level must lie in (0, 1)")
    cfg = (settings or BrisqSettings(seed=seed)).resolved(data)
    start = time.perf_counter()
    if theta is None:
        theta = brisq_fit(data, t, k, cfg)
    draws = np.full((b, k), np.nan)
    discarded = 0
    for rep in range(b):
        rng = stream(seed, 77_000 , rep)
        idx = rng.integers(0, data.n, data.n)
        try:
            boot = Dataset(y=data.y[idx], x=data.x[idx], z=data.z[idx])
            est = _brisq_from(boot, t, theta.params.deltas, cfg)
        except (ConvergenceError, RankError, UsageError):
            discarded += 1
            continue
        if est.k != k:
            discarded += 1
            continue
        draws[rep] = est.params.deltas
    usable = draws[~np.isnan(draws[:, 0])]
    if usable.shape[0] < b / 2:
        raise DegenerateBootstrapError(
            f"only {usable.shape[0]} of {b} bootstrap replicates kept {k} kinks"
        )
    alpha = 1.0 - level
    lo = np.quantile(usable, alpha / 2.0, axis=0)
    hi = np.quantile(usable, 1.0 - alpha / 2.0, axis=0)
    out = IntervalSet(method="boot", level=level, tau=t, discarded_replicates=discarded)
    for j in range(k):
        out.intervals.append(
            KinkInterval(index=j, lower=float(lo[j]), upper=float(hi[j]), method="boot", level=level)
        )
    out.time_seconds = time.perf_counter() - start
    return out


def srs_statistic(
    data: Dataset,
    tau,
    deltas_tilde,
    h=None,
    *,
    components=None,
    bandwidth_rule: str = "hall-sheather",
    qr_tol: float = 1e-8,
) -> float:
    """Smoothed rank-score statistic for testing fixed kink locations.

    Fits the restricted model at ``deltas_tilde``, forms the smoothed partial
    scores with Gaussian kernel bandwidths ``h`` (default sd(x) * n^(-1/5)),
    projects them off the restricted design with density weighting, and
    returns the quadratic form, asymptotically chi-square with one degree of
    freedom per tested component under the null.

    ``components`` selects which kink coordinates enter the quadratic form
    (all by default); the single-coordinate version drives the test-inversion
    confidence intervals.
    """
    t = as_tau(tau)
    deltas = np.asarray(deltas_tilde, dtype=float).ravel()
    if deltas.size == 0:
        raise UsageError("need at least one kink location to test")
    if deltas.size > 1 and not np.all(np.diff(deltas) > 0):
        raise UsageError("kink locations must be strictly increasing")
    k = deltas.size
    n = data.n
    if h is None:
        h = np.full(k, float(np.std(data.x)) * n ** (-0.2))
    else:
        h = np.broadcast_to(np.asarray(h, dtype=float).ravel(), (k,)).copy()
    if np.any(h <= 0):
        raise UsageError("smoothing bandwidths must be positive")
    if components is None:
        components = list(range(k))
    components = [int(c) for c in components]
    if any(c < 0 or c >= k for c in components):
        raise UsageError("component index out of range")

    design = build_design(data.x, data.z, deltas)
    sol = fit_linear_qr(design, data.y, t, tol=qr_tol)
    betas = sol.coefficients[2 : 2 + k]
    resid = sol.residuals

    u = (data.x[:, None] - deltas[None, :]) / h[None, :]
    p_cols = -betas[None, :] * (scipy.stats.norm.cdf(u) + u * scipy.stats.norm.pdf(u))
    p_cols = p_cols[:, components]

    f = density_weights(resid, design, t, bandwidth_rule, qr_tol=qr_tol).values
    m = design.values
    mtf = m * f[:, None]
    try:
        gram = scipy.linalg.cho_factor(mtf.T @ m, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise RankError("restricted design with density weights is singular")
    p_star = p_cols - m @ scipy.linalg.cho_solve(gram, mtf.T @ p_cols, check_finite=False)

    s_star = p_star.T @ psi(resid, t) / np.sqrt(n)
    v_n = t * (1.0 - t) * (p_star.T @ p_star) / n
    try:
        stat = float(s_star @ scipy.linalg.solve(v_n, s_star, assume_a="pos"))
    except (scipy.linalg.LinAlgError, ValueError):
        raise RankError("rank-score variance matrix is singular (vanishing slope change)")
    return max(stat, 0.0)


def srs_invert_ci(
    data: Dataset,
    tau,
    theta: ThetaEstimate,
    level: float = 0.95,
    rho_step: float | None = None,
    h=None,
    *,
    bandwidth_rule: str = "hall-sheather",
    qr_tol: float = 1e-8,
) -> IntervalSet:
    """Kink-location intervals by inverting the single-coordinate rank-score test.

    Scans each kink away from its estimate in steps of ``rho_step`` (default
    range(x)/200) holding the other kinks fixed, and bounds the interval at
    the first location where the statistic crosses the chi-square(1) critical
    value.  A scan that reaches the support edge (or a neighbouring kink)
    without rejecting is truncated there and flagged.
    """
    t = as_tau(tau)
    if not (0.0 < level < 1.0):
        raise UsageError("confidence level must lie in (0, 1)")
    params = theta.params if isinstance(theta, ThetaEstimate) else theta
    k = params.k
    if k == 0:
        raise UsageError("model has no kinks to build intervals for")
    rho = float(np.ptp(data.x)) / 200.0 if rho_step is None else float(rho_step)
    if rho <= 0:
        raise UsageError("rho_step must be positive")
    crit = scipy.stats.chi2.ppf(level, 1)
    start = time.perf_counter()

    out = IntervalSet(method="score", level=level, tau=t)
    x_lo, x_hi = float(data.x.min()), float(data.x.max())
    for j in range(k):
        bounds = []
        for direction in (+1.0, -1.0):
            if direction > 0:
                edge = params.deltas[j + 1] - rho if j + 1 < k else x_hi
            else:
                edge = params.deltas[j - 1] + rho if j > 0 else x_lo
            bound = None
            m = 1
            while True:
                cand = params.deltas[j] + direction * m * rho
                if (direction > 0 and cand >= edge) or (direction < 0 and cand <= edge):
                    bound = (edge, True)
                    break
                trial = params.deltas.copy()
                trial[j] = cand
                try:
                    stat = srs_statistic(
                        data, t, trial, h, components=[j],
                        bandwidth_rule=bandwidth_rule, qr_tol=qr_tol,
                    )
                except (RankError, ConvergenceError):
                    stat = 0.0  # no information against the null here; keep scanning
                if stat > crit:
                    bound = (cand, False)
                    break
                m += 1
            bounds.append(bound)
        (upper, trunc_up), (lower, trunc_lo) = bounds
        out.intervals.append(
            KinkInterval(
                index=j,
                lower=float(lower),
                upper=float(upper),
                method="score",
                level=level,
                truncated_lower=trunc_lo,
                truncated_upper=trunc_up,
            )
        )
    out.time_seconds = time.perf_counter() - start
    return out
