"""Kink-count selection: strengthened quantile BIC and backward elimination."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brisq import BrisqSettings, ThetaEstimate, _brisq_from, _exact_fit, init_kinks, iterate_segmented
from .errors import ConvergenceError, RankError, UsageError
from .linqr import as_tau
from .model import Dataset

CN_RULES = ("one", "loglog_n", "log_n")


def _cn(rule: str, n: int) -> float:
    if rule in ("one", "1"):
        return 1.0
    if rule in ("loglog_n", "loglog"):
        return math.log(math.log(n))
    if rule in ("log_n", "logn"):
        return math.log(n)
    raise UsageError(f"unknown penalty rule {rule!r}; expected one of {CN_RULES}")


def sbic(objective_value: float, n: int, p: int, k: int, cn_rule: str = "log_n") -> float:
    """Strengthened quantile BIC: log objective plus (2+p+2K) log(n) C_n / (2n).

    With ``cn_rule='one'`` this is the standard quantile BIC; the other rules
    let the penalty factor grow with n.  A zero objective returns ``-inf`` by
    convention (a perfect fit dominates any penalty).
    """
    if objective_value < 0.0:
        raise UsageError("objective value cannot be negative")
    if n < 2:
        raise UsageError("sbic needs n >= 2")
    cn = _cn(cn_rule, n)
    penalty = (2 + p + 2 * k) * math.log(n) / (2.0 * n) * cn
    if objective_value == 0.0:
        return float("-inf")
    return math.log(objective_value) + penalty


@dataclass
class SbicEntry:
    k: int
    sbic: float
    theta: ThetaEstimate


@dataclass
class SbicTrace:
    """Models evaluated during backward elimination, in evaluation order."""

    entries: list[SbicEntry] = field(default_factory=list)
    selected_k: int = 0

    def best(self) -> SbicEntry:
        return min(self.entries, key=lambda e: e.sbic)


@dataclass
class FitReport:
    """Selected model with its uncertainty summary and the selection trace."""

    theta: ThetaEstimate
    k_hat: int
    tau: float
    sbic_trace: SbicTrace
    covariance: "CovarianceEstimate | None" = None
    standard_errors: np.ndarray | None = None

    @property
    def delta_standard_errors(self) -> np.ndarray | None:
        if self.standard_errors is None or self.k_hat == 0:
            return None
        return self.standard_errors[-self.k_hat :]


def _cheapest_drop(data: Dataset, tau, deltas: np.ndarray, qr_tol: float) -> np.ndarray:
    """Warm start with one fewer kink: remove the kink whose removal costs least."""
    best_obj = np.inf
    best = deltas[1:]
    for j in range(deltas.size):
        reduced = np.delete(deltas, j)
        try:
            _, obj = _exact_fit(data, tau, reduced, qr_tol)
        except (RankError, ConvergenceError):
            continue
        if obj < best_obj:
            best_obj = obj
            best = reduced
    return best


def backward_eliminate(
    data: Dataset,
    tau,
    k_max: int = 10,
    cn_rule: str = "log_n",
    settings: BrisqSettings | None = None,
    *,
    with_covariance: bool = True,
) -> tuple[FitReport, SbicTrace]:
    """Select the number of kinks by backward elimination on the sBIC.

    Runs the restarted segmented fit from ``k_max`` evenly dispersed kinks
    (inadmissible kinks are dropped along the way), then repeatedly refits
    with one fewer kink while the sBIC strictly decreases, stopping at the
    first non-decrease.  ``k_hat = 0`` (no kink) is an allowed outcome.
    """
    t = as_tau(tau)
    if k_max < 1:
        raise UsageError("k_max must be at least 1")
    cfg = (settings or BrisqSettings()).resolved(data)
    _cn(cn_rule, data.n)

    deltas0 = init_kinks(data.x, k_max, cfg.min_segment_obs)
    current = _brisq_from(data, t, deltas0, cfg)
    current_sbic = sbic(current.objective, data.n, data.p, current.k, cn_rule)
    trace = SbicTrace()
    trace.entries.append(SbicEntry(current.k, current_sbic, current))

    while current.k > 0:
        if current.k == 1:
            challenger = iterate_segmented(data, t, np.empty(0), cfg)
        else:
            warm = _cheapest_drop(data, t, current.params.deltas, cfg.qr_tol)
            try:
                challenger = _brisq_from(data, t, warm, cfg)
            except (ConvergenceError, RankError):
                challenger = _brisq_from(data, t, init_kinks(data.x, current.k - 1, cfg.min_segment_obs), cfg)
        value = sbic(challenger.objective, data.n, data.p, challenger.k, cn_rule)
        trace.entries.append(SbicEntry(challenger.k, value, challenger))
        if value >= current_sbic:
            break
        current, current_sbic = challenger, value

    trace.selected_k = current.k
    report = FitReport(theta=current, k_hat=current.k, tau=t, sbic_trace=trace)
    if with_covariance:
        from .infer import covariance

        cov = covariance(data, current, t)
        report.covariance = cov
        report.standard_errors = cov.standard_errors
    return report, trace
