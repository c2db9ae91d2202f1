"""Kink-location estimation by iterated local linearization with bootstrap restarts.

The non-convex objective is attacked in two stages: an inner loop that fits a
working linear quantile regression around the current kink locations and moves
each kink by the ratio of its shift coefficient to its slope-change
coefficient, and an outer loop of bootstrap restarts that re-seeds the inner
loop from perturbed data, accepting a candidate only when the original-sample
objective strictly decreases.  Kinks that leave the support, crowd a
neighbour, or lose their slope change are dropped along the way.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import stream
from .errors import ConvergenceError, RankError, UsageError
from .linqr import DesignMatrix, as_tau, fit_linear_qr
from .model import Dataset, MkqrParams, build_design, objective

DROP_REASONS = ("out-of-support", "too-close", "beta-degenerate")


@dataclass
class BrisqSettings:
    """Tuning constants for the segmented fit and its restart stage.

    ``None`` for the data-dependent fields means: resolve at fit time to
    ``1e-4 * range(x)`` (delta_tolerance), ``max(10, p + 3)``
    (min_segment_obs) and ``1e-4 * sd(y) / sd(x)`` (beta_floor).
    """

    max_inner_iterations: int = 50
    delta_tolerance: float | None = None
    restart_count: int = 20
    epsilon: float = 0.02
    min_segment_obs: int | None = None
    beta_floor: float | None = None
    seed: int = 0
    qr_tol: float = 1e-8

    def __post_init__(self):
        if self.max_inner_iterations < 1 or self.restart_count < 0:
            raise UsageError("iteration and restart counts must be positive")
        if not (0.0 < self.epsilon < 1.0):
            raise UsageError("epsilon must lie in (0, 1)")
        for name in ("delta_tolerance", "beta_floor"):
            v = getattr(self, name)
            if v is not None and v <= 0.0:
                raise UsageError(f"{name} must be positive")
        if self.min_segment_obs is not None and self.min_segment_obs < 1:
            raise UsageError("min_segment_obs must be positive")

    def resolved(self, data: Dataset) -> "BrisqSettings":
        """Fill the data-dependent defaults for ``data``."""
        return replace(
            self,
            delta_tolerance=self.delta_tolerance
            if self.delta_tolerance is not None
            else 1e-4 * float(np.ptp(data.x)),
            min_segment_obs=self.min_segment_obs
            if self.min_segment_obs is not None
            else max(10, data.p + 3),
            beta_floor=self.beta_floor
            if self.beta_floor is not None
            else 1e-4 * float(np.std(data.y)) / max(float(np.std(data.x)), 1e-12),
        )


@dataclass
class DroppedKink:
    index: int
    delta: float
    reason: str

    def __post_init__(self):
        if self.reason not in DROP_REASONS:
            raise UsageError(f"unknown drop reason {self.reason!r}")


@dataclass
class InadmissibleReport:
    """Kinks removed during one linearized update, with the reason for each."""

    dropped: list[DroppedKink] = field(default_factory=list)

    def __bool__(self):
        return bool(self.dropped)


@dataclass
class LinearizedStep:
    """Output of one working-model fit: coefficients, shifts, updated kinks."""

    eta: np.ndarray
    betas: np.ndarray
    phis: np.ndarray
    deltas_next: np.ndarray
    report: InadmissibleReport


@dataclass
class ThetaEstimate:
    """A fitted kink model with its objective value and diagnostics."""

    params: MkqrParams
    tau: float
    objective: float
    iterations: int
    converged: bool
    dropped: list[DroppedKink] = field(default_factory=list)
    restart_objectives: list[float] = field(default_factory=list)
    restart_accepted: list[bool] = field(default_factory=list)
    averaged_over: int = 0

    @property
    def k(self) -> int:
        return self.params.k


def init_kinks(x, k: int, min_segment_obs: int = 10) -> np.ndarray:
    """Evenly dispersed starting kinks: the j/(k+1) sample quantiles of x.

    Ties are separated by a deterministic jitter.  Raises
    :class:`UsageError` when ``k`` is so large that some segment would hold
    fewer than ``min_segment_obs`` observations.
    """
    x = np.asarray(x, dtype=float).ravel()
    if k < 1:
        raise UsageError("need at least one kink to initialize")
    if np.ptp(x) == 0.0:
        raise UsageError("threshold covariate x is constant")
    probs = np.arange(1, k + 1) / (k + 1)
    deltas = np.quantile(x, probs)
    if np.any(np.diff(deltas) <= 0):
        spacing = 1e-8 * np.ptp(x)
        deltas = deltas + spacing * np.arange(k)
        deltas = np.maximum.accumulate(deltas + spacing)
    counts = _segment_counts(x, deltas)
    if counts.min() < min_segment_obs:
        raise UsageError(
            f"{k} kinks leave a segment with {int(counts.min())} < {min_segment_obs} observations"
        )
    return deltas


def _segment_counts(x, deltas):
    edges = np.concatenate([[-np.inf], deltas, [np.inf]])
    return np.array([np.sum((x > lo) & (x <= hi)) for lo, hi in zip(edges[:-1], edges[1:])])


def _working_design(data: Dataset, deltas: np.ndarray) -> DesignMatrix:
    x = data.x
    u = np.maximum(x[:, None] - deltas[None, :], 0.0)
    v = -(x[:, None] > deltas[None, :]).astype(float)
    values = np.column_stack([np.ones(data.n), x, u, v, data.z])
    k = deltas.size
    labels = (
        ["intercept", "x"]
        + [f"hinge{j + 1}" for j in range(k)]
        + [f"shift{j + 1}" for j in range(k)]
        + [f"z{j + 1}" for j in range(data.p)]
    )
    return DesignMatrix(values=values, labels=labels)


def _filter_admissible(x, deltas, min_segment_obs, report, indices=None):
    """Drop kinks outside the usable support or crowding a kept neighbour."""
    if indices is None:
        indices = list(range(len(deltas)))
    kept = []
    kept_idx = []
    for pos, d in zip(indices, deltas):
        n_left = int(np.sum(x <= d))
        n_right = int(np.sum(x > d))
        if n_left < min_segment_obs or n_right < min_segment_obs:
            report.dropped.append(DroppedKink(pos, float(d), "out-of-support"))
            continue
        if kept and int(np.sum((x > kept[-1]) & (x <= d))) < min_segment_obs:
            report.dropped.append(DroppedKink(pos, float(d), "too-close"))
            continue
        kept.append(float(d))
        kept_idx.append(pos)
    return np.asarray(kept), kept_idx


def linearized_step(
    data: Dataset,
    tau,
    deltas_current,
    *,
    min_segment_obs: int = 10,
    beta_floor: float = 0.0,
    qr_tol: float = 1e-8,
) -> LinearizedStep:
    """One working-model fit and kink update around ``deltas_current``.

    Adds a hinge column (x - d)_+ and a shift column -1[x > d] per kink to
    the linear design, fits a linear quantile regression, and moves each kink
    by the fitted shift over the fitted slope change.  A kink whose slope
    change falls below ``beta_floor`` in magnitude is reported as
    beta-degenerate; updated kinks that leave the usable support or end up
    with fewer than ``min_segment_obs`` observations between themselves and a
    neighbour are reported and removed.
    """
    t = as_tau(tau)
    deltas = np.asarray(deltas_current, dtype=float).ravel()
    if deltas.size == 0:
        raise UsageError("linearized step needs at least one current kink")
    if deltas.size > 1 and not np.all(np.diff(deltas) > 0):
        raise UsageError("current kinks must be strictly increasing")
    k = deltas.size
    design = _working_design(data, deltas)
    sol = fit_linear_qr(design, data.y, t, tol=qr_tol)
    coef = sol.coefficients
    betas = coef[2 : 2 + k]
    phis = coef[2 + k : 2 + 2 * k]

    report = InadmissibleReport()
    updated = []
    indices = []
    for j in range(k):
        if abs(betas[j]) < beta_floor:
            report.dropped.append(DroppedKink(j, float(deltas[j]), "beta-degenerate"))
            continue
        updated.append(deltas[j] + phis[j] / betas[j])
        indices.append(j)
    if updated:
        order = np.argsort(updated)
        updated = np.asarray(updated)[order]
        indices = [indices[i] for i in order]
        deltas_next, _ = _filter_admissible(data.x, updated, min_segment_obs, report, indices)
    else:
        deltas_next = np.empty(0)
    return LinearizedStep(eta=coef, betas=betas, phis=phis, deltas_next=deltas_next, report=report)


def _exact_fit(data: Dataset, tau, deltas, qr_tol) -> tuple[MkqrParams, float]:
    design = build_design(data.x, data.z, deltas)
    sol = fit_linear_qr(design, data.y, tau, tol=qr_tol)
    k = len(deltas)
    params = MkqrParams(
        alpha0=sol.coefficients[0],
        alpha1=sol.coefficients[1],
        betas=sol.coefficients[2 : 2 + k],
        gamma=sol.coefficients[2 + k :],
        deltas=np.asarray(deltas, dtype=float),
    )
    return params, sol.objective


def iterate_segmented(data: Dataset, tau, deltas0, settings: BrisqSettings | None = None) -> ThetaEstimate:
    """Repeat :func:`linearized_step` until the kinks stop moving.

    Inadmissible kinks are dropped as they arise, so the returned model may
    have fewer kinks than ``deltas0``; with every kink dropped the result is
    the plain linear quantile fit (``k = 0``), not an error.  The returned
    objective is the exact mean check loss after refitting the hinge design
    at the final kink locations.
    """
    t = as_tau(tau)
    cfg = (settings or BrisqSettings()).resolved(data)
    report = InadmissibleReport()
    deltas, _ = _filter_admissible(
        data.x, np.sort(np.asarray(deltas0, dtype=float).ravel()), cfg.min_segment_obs, report
    )

    iterations = 0
    converged = deltas.size == 0
    history: list[np.ndarray] = [deltas.copy()] if deltas.size else []
    cycle_states: list[np.ndarray] | None = None
    while deltas.size and iterations < cfg.max_inner_iterations:
        step = linearized_step(
            data,
            t,
            deltas,
            min_segment_obs=cfg.min_segment_obs,
            beta_floor=cfg.beta_floor,
            qr_tol=cfg.qr_tol,
        )
        iterations += 1
        report.dropped.extend(step.report.dropped)
        nxt = step.deltas_next
        if nxt.size == deltas.size:
            if float(np.max(np.abs(nxt - deltas))) < cfg.delta_tolerance:
                deltas = nxt
                converged = True
                break
            # The update map is piecewise constant between data points, so it
            # can enter short cycles around an optimum instead of settling.
            # Detect a revisit of a recent state and resolve the cycle below
            # by exact refits over its states.
            for back in range(2, len(history) + 1):
                past = history[-back]
                if float(np.max(np.abs(nxt - past))) < cfg.delta_tolerance:
                    cycle_states = [h.copy() for h in history[-back:]]
                    converged = True
                    break
            deltas = nxt
            if cycle_states is not None:
                break
            history.append(deltas.copy())
            if len(history) > 8:
                history.pop(0)
        else:
            deltas = nxt
            history = [deltas.copy()] if deltas.size else []
            if deltas.size == 0:
                converged = True
                break

    params, obj = _exact_fit(data, t, deltas, cfg.qr_tol)
    if cycle_states:
        params, obj = _resolve_cycle(data, t, [deltas] + cycle_states, params, obj, cfg.qr_tol)
    return ThetaEstimate(
        params=params,
        tau=t,
        objective=obj,
        iterations=iterations,
        converged=converged,
        dropped=report.dropped,
    )


def _resolve_cycle(data, tau, states, params, obj, qr_tol, max_knots=24):
    """Pick the best kink vector spanned by a detected update cycle.

    A cycle straddles a flat stretch of the profile objective, so the
    minimizer usually lies strictly between the cycle states.  The profile's
    breakpoints sit at the sample x values, so scanning the in-bracket data
    knots coordinate-wise (plus the states themselves) recovers the bracket
    minimum with a bounded number of exact refits.
    """
    arr = np.asarray(states)
    best_params, best_obj = params, obj
    best_deltas = np.asarray(states[0], dtype=float).copy()
    for state in states:
        alt_params, alt_obj = _exact_fit(data, tau, state, qr_tol)
        if alt_obj < best_obj:
            best_params, best_obj = alt_params, alt_obj
            best_deltas = np.asarray(state, dtype=float).copy()
    xs = np.unique(data.x)
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    for kk in range(arr.shape[1]):
        if hi[kk] - lo[kk] <= 0.0:
            continue
        inside = xs[(xs > lo[kk]) & (xs < hi[kk])]
        if inside.size == 0:
            continue
        knots = np.unique(np.concatenate([inside, 0.5 * (inside[:-1] + inside[1:])]))
        if knots.size > max_knots:
            knots = knots[np.linspace(0, knots.size - 1, max_knots).astype(int)]
        for cand in knots:
            trial = best_deltas.copy()
            trial[kk] = cand
            if trial.size > 1 and not np.all(np.diff(trial) > 0):
                continue
            alt_params, alt_obj = _exact_fit(data, tau, trial, qr_tol)
            if alt_obj < best_obj:
                best_params, best_obj = alt_params, alt_obj
                best_deltas = trial
    return best_params, best_obj


def _brisq_from(data: Dataset, tau, deltas0, settings: BrisqSettings) -> ThetaEstimate:
    """Inner-loop fit from ``deltas0`` followed by bootstrap restarts and averaging."""
    t = as_tau(tau)
    cfg = settings.resolved(data)

    current: ThetaEstimate | None = None
    stage1_error: Exception | None = None
    try:
        current = iterate_segmented(data, t, deltas0, cfg)
    except (ConvergenceError, RankError) as exc:
        stage1_error = exc

    k_requested = int(np.atleast_1d(np.asarray(deltas0)).size)
    trajectory: list[ThetaEstimate] = []
    accepted_flags: list[bool] = []
    for b in range(1, cfg.restart_count + 1):
        rng = stream(cfg.seed, b)
        idx = rng.integers(0, data.n, data.n)
        accepted = False
        try:
            boot = Dataset(y=data.y[idx], x=data.x[idx], z=data.z[idx])
            if current is not None and current.k:
                start = current.params.deltas
            else:
                # Re-seed from even dispersal when there is nothing to warm-start.
                start = init_kinks(boot.x, k_requested, cfg.min_segment_obs)
            boot_est = iterate_segmented(boot, t, start, cfg)
            candidate = iterate_segmented(data, t, boot_est.params.deltas, cfg)
            if current is None or candidate.objective < current.objective:
                current = candidate
                accepted = True
        except (ConvergenceError, RankError, UsageError):
            pass
        if current is not None:
            trajectory.append(current)
            accepted_flags.append(accepted)

    if current is None:
        raise ConvergenceError(
            "segmented fit failed on the original sample and on every bootstrap restart"
        ) from stage1_error

    final = _average_trajectory(data, t, current, trajectory, cfg) if trajectory else current
    final.restart_objectives = [est.objective for est in trajectory]
    final.restart_accepted = accepted_flags
    return final


def _average_trajectory(data, tau, best, trajectory, cfg) -> ThetaEstimate:
    # Average the per-restart estimates whose objective sits within a
    # relative epsilon of the trajectory minimum.  Entries with a different
    # kink count, or with kinks outside the minimizer's basin (further than
    # half the minimizer's smallest segment gap), describe different local
    # solutions and averaging across them would be meaningless.
    s_min = best.objective
    tol = cfg.epsilon * abs(s_min)
    if best.k:
        edges = np.concatenate([[data.x.min()], best.params.deltas, [data.x.max()]])
        radius = 0.5 * float(np.min(np.diff(edges)))
    else:
        radius = 0.0
    pool = [
        est
        for est in trajectory
        if est.k == best.k
        and abs(est.objective - s_min) <= tol
        and (best.k == 0 or float(np.max(np.abs(est.params.deltas - best.params.deltas))) <= radius)
    ]
    if len(pool) <= 1:
        theta = best
        theta.averaged_over = len(pool) if pool else 1
        return theta
    params = MkqrParams(
        alpha0=float(np.mean([e.params.alpha0 for e in pool])),
        alpha1=float(np.mean([e.params.alpha1 for e in pool])),
        betas=np.mean([e.params.betas for e in pool], axis=0) if best.k else np.empty(0),
        gamma=np.mean([e.params.gamma for e in pool], axis=0) if data.p else np.empty(0),
        deltas=np.mean([e.params.deltas for e in pool], axis=0) if best.k else np.empty(0),
    )
    obj = objective(data, params, tau)
    if obj > s_min + tol:
        # Averaging slack exceeded: keep the trajectory minimizer.
        theta = best
        theta.averaged_over = 1
        return theta
    return ThetaEstimate(
        params=params,
        tau=tau,
        objective=obj,
        iterations=best.iterations,
        converged=best.converged,
        dropped=best.dropped,
        averaged_over=len(pool),
    )


def brisq_fit(data: Dataset, tau, k: int, settings: BrisqSettings | None = None) -> ThetaEstimate:
    """Fit a kink model with ``k`` starting kinks, restarts included.

    Starts from evenly dispersed kinks, iterates the linearized update to
    convergence, then runs the configured number of bootstrap restarts; each
    restart refits on a resampled dataset from the current kinks and then on
    the original data from the resampled solution, keeping the candidate only
    when the original-sample objective strictly decreases.  The returned
    estimate averages the trajectory entries within the relative-objective
    window of the trajectory minimum.
    """
    if k < 1:
        raise UsageError("brisq_fit requires k >= 1; fit a linear quantile regression for k = 0")
    cfg = (settings or BrisqSettings()).resolved(data)
    deltas0 = init_kinks(data.x, k, cfg.min_segment_obs)
    return _brisq_from(data, tau, deltas0, cfg)
