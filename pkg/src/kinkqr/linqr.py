"""Linear quantile regression kernel.

Provides the check loss and its subgradient, an interior-point solver for
check-loss minimization on an arbitrary design matrix, the two classical
bandwidth rules, and difference-quotient residual-density weights.  Every
inference routine in the package is built on these primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import BandwidthError, ConvergenceError, RankError, UsageError

BANDWIDTH_RULES = ("hall-sheather", "bofinger")

_STEP_SHRINK = 0.9995
_RANK_RTOL = 1e-10


def as_tau(tau) -> float:
    """Validate and return a quantile level as a plain float in (0, 1)."""
    if isinstance(tau, QuantileLevel):
        return tau.tau
    t = float(tau)
    if not (0.0 < t < 1.0) or not np.isfinite(t):
        raise UsageError(f"quantile level must lie strictly inside (0, 1), got {tau!r}")
    return t


@dataclass(frozen=True)
class QuantileLevel:
    """A quantile level, restricted to the open interval (0, 1)."""

    tau: float

    def __post_init__(self):
        t = float(self.tau)
        if not (0.0 < t < 1.0) or not np.isfinite(t):
            raise UsageError(f"quantile level must lie strictly inside (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", t)


@dataclass
class DesignMatrix:
    """A dense design matrix with column labels.

    Requires at least as many rows as columns and finite entries throughout.
    """

    values: np.ndarray
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if self.values.ndim != 2:
            raise UsageError("design matrix must be two-dimensional")
        n, d = self.values.shape
        if n < d:
            raise UsageError(f"design matrix needs n >= d, got n={n}, d={d}")
        if not np.all(np.isfinite(self.values)):
            raise UsageError("design matrix contains non-finite entries")
        if not self.labels:
            self.labels = [f"c{j}" for j in range(d)]
        if len(self.labels) != d:
            raise UsageError("number of column labels must match number of columns")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass
class QrSolution:
    """Result of a linear quantile regression fit."""

    coefficients: np.ndarray
    residuals: np.ndarray
    objective: float
    iterations: int
    converged: bool


@dataclass
class DensityWeights:
    """Per-observation conditional density estimates at the fitted quantile."""

    values: np.ndarray
    bandwidth: float
    rule: str
    clamped: int


def check_loss(u, tau):
    """Asymmetric absolute loss u * (tau - 1[u < 0]); vectorized over ``u``."""
    t = as_tau(tau)
    u = np.asarray(u, dtype=float)
    out = u * (t - (u < 0.0))
    return float(out) if out.ndim == 0 else out


def psi(u, tau):
    """Check-loss subgradient tau - 1[u <= 0]; vectorized over ``u``."""
    t = as_tau(tau)
    u = np.asarray(u, dtype=float)
    out = t - (u <= 0.0)
    return float(out) if out.ndim == 0 else out


def _as_design(X) -> np.ndarray:
    if isinstance(X, DesignMatrix):
        return X.values
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise UsageError("design matrix must be two-dimensional")
    return X


def _gram_with_rank_check(X: np.ndarray) -> np.ndarray:
    # Pivoted Cholesky of the Gram matrix; factorization stops once the
    # remaining pivots fall below _RANK_RTOL x the largest pivot.
    G = X.T @ X
    if G.shape[0] == 0:
        raise RankError("design matrix has no columns")
    dmax = float(np.max(np.diag(G)))
    if dmax <= 0.0:
        raise RankError("design matrix is identically zero")
    _, _, rank, info = scipy.linalg.lapack.dpstrf(G, tol=_RANK_RTOL * dmax, lower=1)
    if info < 0:
        raise RankError("rank check factorization failed")
    if rank < G.shape[0]:
        raise RankError(f"design matrix is rank deficient (pivoted rank {rank} < {G.shape[0]} columns)")
    return G


def _max_step(v1, dv1, v2, dv2):
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(dv1 < 0.0, v1 / -dv1, np.inf)
        r2 = np.where(dv2 < 0.0, v2 / -dv2, np.inf)
    step = min(float(r1.min(initial=np.inf)), float(r2.min(initial=np.inf)))
    return min(1.0, _STEP_SHRINK * step)


def fit_linear_qr(X, y, tau, *, tol: float = 1e-8, max_iter: int = 200) -> QrSolution:
    """Minimize the mean check loss of ``y - X @ b`` over ``b``.

    Solves the equivalent bounded-variable linear program with a primal-dual
    interior-point iteration (predictor-corrector steps on the complementarity
    conditions), stopping when the duality gap falls below ``tol`` relative to
    the primal objective.

    Parameters
    ----------
    X : array or DesignMatrix, shape (n, d)
        Full-column-rank design.
    y : array, shape (n,)
        Response vector.
    tau : float or QuantileLevel
        Quantile level in (0, 1).

    Returns
    -------
    QrSolution
        Coefficients, residuals, mean check-loss objective and iteration info.

    Raises
    ------
    RankError
        If the design is rank deficient at the pivoting threshold.
    ConvergenceError
        If the duality gap fails to close within ``max_iter`` iterations; the
        exception carries the last iterate.
    """
    t = as_tau(tau)
    A = _as_design(X)
    y = np.asarray(y, dtype=float).ravel()
    n, d = A.shape
    if y.shape[0] != n:
        raise UsageError(f"length of y ({y.shape[0]}) does not match design rows ({n})")
    if not np.all(np.isfinite(y)):
        raise UsageError("response vector contains non-finite entries")
    G = _gram_with_rank_check(A)

    # Dual box form: min c'a s.t. A'a = (1-tau) A'1, 0 <= a <= 1, with c = -y.
    # The negated equality multiplier is the quantile-regression coefficient
    # vector; complementarity makes a_i = tau on positive residuals and
    # a_i = tau - 1 + 1 = 0 on negative ones.
    c = -y
    a = np.full(n, 1.0 - t)
    s = np.full(n, t)
    beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G, check_finite=False), A.T @ c, check_finite=False)
    r = c - A @ beta
    shift = 1e-4 * max(1.0, float(np.abs(r).max(initial=0.0)))
    z = np.maximum(r, 0.0) + shift
    w = np.maximum(-r, 0.0) + shift

    gap = float(a @ z + s @ w)
    it = 0
    converged = False
    while it < max_iter:
        res = w - z  # exact residuals of the current multiplier iterate
        primal = float(np.sum(res * (t - (res < 0.0))))
        if gap <= tol * (1.0 + abs(primal)):
            converged = True
            break
        it += 1

        za = z / a
        ws = w / s
        q = 1.0 / (za + ws)
        M = A.T @ (A * q[:, None])
        try:
            fac = scipy.linalg.cho_factor(M, check_finite=False)
        except scipy.linalg.LinAlgError:
            try:
                M[np.diag_indices_from(M)] += 1e-12 * (1.0 + np.trace(M))
                fac = scipy.linalg.cho_factor(M, check_finite=False)
            except scipy.linalg.LinAlgError:
                raise RankError("normal equations became singular during interior-point solve")

        def newton(cz, cw):
            # cz, cw: complementarity targets for the (a,z) and (s,w) pairs.
            rhs = z - w - cz / a + cw / s
            db = scipy.linalg.cho_solve(fac, A.T @ (q * rhs), check_finite=False)
            da = q * (A @ db - rhs)
            dz = cz / a - z - za * da
            dw = cw / s - w + ws * da
            return db, da, dz, dw

        # Affine predictor.
        db, da, dz, dw = newton(0.0, 0.0)
        ap = _max_step(a, da, s, -da)
        ad = _max_step(z, dz, w, dw)

        if min(ap, ad) < 1.0:
            # Mehrotra corrector reusing the factorization.
            g = float((a + ap * da) @ (z + ad * dz) + (s - ap * da) @ (w + ad * dw))
            sigmu = gap * (g / gap) ** 3 / (2.0 * n)
            db, da, dz, dw = newton(sigmu - da * dz, sigmu + da * dw)
            ap = _max_step(a, da, s, -da)
            ad = _max_step(z, dz, w, dw)
        a += ap * da
        s -= ap * da
        beta += ad * db
        z += ad * dz
        w += ad * dw
        gap = float(a @ z + s @ w)

    coef = -beta
    residuals = y - A @ coef
    solution = QrSolution(
        coefficients=coef,
        residuals=residuals,
        objective=float(np.mean(check_loss(residuals, t))),
        iterations=it,
        converged=converged,
    )
    if not converged:
        raise ConvergenceError(
            f"interior-point solver did not reach gap {tol:g} in {max_iter} iterations", last=solution
        )
    return solution


def bandwidth(tau, n: int, rule: str = "hall-sheather", *, alpha: float = 0.05) -> float:
    """Quantile-density bandwidth from one of the two classical closed forms.

    ``hall-sheather`` is the Edgeworth-expansion rule with normal-based
    critical value at level ``alpha``; ``bofinger`` minimizes the asymptotic
    mean squared error of the density estimate.  Both decrease in ``n``.
    """
    t = as_tau(tau)
    n = int(n)
    if n < 2:
        raise UsageError("bandwidth requires n >= 2")
    q = scipy.stats.norm.ppf(t)
    dens = scipy.stats.norm.pdf(q)
    if rule == "hall-sheather":
        z = scipy.stats.norm.ppf(1.0 - alpha / 2.0)
        return float(n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * (1.5 * dens**2 / (2.0 * q**2 + 1.0)) ** (1.0 / 3.0))
    if rule == "bofinger":
        return float(n ** (-0.2) * (4.5 * dens**4 / (2.0 * q**2 + 1.0) ** 2) ** 0.2)
    raise UsageError(f"unknown bandwidth rule {rule!r}; expected one of {BANDWIDTH_RULES}")


def density_weights(
    residuals,
    X,
    tau,
    rule: str = "hall-sheather",
    *,
    strict: bool = False,
    qr_tol: float = 1e-8,
) -> DensityWeights:
    """Difference-quotient density estimates at the fitted conditional quantile.

    Fits the design at tau +/- h and estimates the conditional residual
    density as 2h over the spread of the two fitted quantiles at each row.
    The residuals must come from a converged fit on the same design: the fits
    here are run on the residuals themselves, which by shift equivariance
    reproduces the spread of the original fitted quantiles exactly.

    Negative or non-finite quotients are clamped to zero and counted in the
    returned ``clamped`` field.  With ``strict=True`` a bandwidth that leaves
    (0, 1), or any degenerate quotient, raises :class:`BandwidthError`
    instead.
    """
    t = as_tau(tau)
    A = _as_design(X)
    e = np.asarray(residuals, dtype=float).ravel()
    n = A.shape[0]
    if e.shape[0] != n:
        raise UsageError("residual vector length does not match design rows")
    if rule not in BANDWIDTH_RULES:
        raise UsageError(f"unknown bandwidth rule {rule!r}; expected one of {BANDWIDTH_RULES}")

    h = bandwidth(t, n, rule)
    if t + h >= 1.0 or t - h <= 0.0:
        if strict:
            raise BandwidthError(f"bandwidth {h:g} pushes tau={t:g} +/- h outside (0, 1)")
        h = 0.5 * min(t, 1.0 - t)

    hi = fit_linear_qr(A, e, t + h, tol=qr_tol)
    lo = fit_linear_qr(A, e, t - h, tol=qr_tol)
    spread = A @ (hi.coefficients - lo.coefficients)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = 2.0 * h / spread
    # Spreads at solver-noise level are degenerate quotients, not densities.
    floor = np.finfo(float).eps ** (2.0 / 3.0)
    bad = ~np.isfinite(f) | (f < 0.0) | (spread <= floor)
    if strict and bad.any():
        raise BandwidthError(f"{int(bad.sum())} degenerate difference quotients at tau={t:g}, h={h:g}")
    f = np.where(bad, 0.0, f)
    return DensityWeights(values=f, bandwidth=float(h), rule=rule, clamped=int(bad.sum()))
