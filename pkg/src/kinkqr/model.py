"""Piecewise-linear conditional quantile model with continuous kinks.

The working parameterization keeps a global intercept and base slope plus one
slope increment per kink, so continuity at the kink locations is automatic.
``SegmentForm`` exposes the equivalent per-segment intercept/slope view.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .linqr import DesignMatrix, as_tau, check_loss


@dataclass
class MkqrParams:
    """Parameters (alpha0, alpha1, betas, gamma, deltas) of the kink model.

    ``betas[k]`` is the slope change at kink ``deltas[k]``; ``deltas`` must be
    strictly increasing.  ``K = 0`` (no kinks) degenerates to plain linear
    quantile regression.
    """

    alpha0: float
    alpha1: float
    betas: np.ndarray = field(default_factory=lambda: np.empty(0))
    gamma: np.ndarray = field(default_factory=lambda: np.empty(0))
    deltas: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.alpha0 = float(self.alpha0)
        self.alpha1 = float(self.alpha1)
        self.betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float)) if np.size(self.gamma) else np.empty(0)
        self.deltas = np.atleast_1d(np.asarray(self.deltas, dtype=float)) if np.size(self.deltas) else np.empty(0)
        if np.size(self.betas) == 0:
            self.betas = np.empty(0)
        if self.betas.shape != self.deltas.shape:
            raise UsageError("betas and deltas must have equal length")
        if self.deltas.size > 1 and not np.all(np.diff(self.deltas) > 0):
            raise UsageError("kink locations must be strictly increasing")

    @property
    def k(self) -> int:
        return int(self.deltas.size)

    @property
    def p(self) -> int:
        return int(self.gamma.size)

    def eta(self) -> np.ndarray:
        """Coefficient block (alpha0, alpha1, betas, gamma) without kink locations."""
        return np.concatenate([[self.alpha0, self.alpha1], self.betas, self.gamma])

    def theta(self) -> np.ndarray:
        """Full parameter vector (eta, deltas)."""
        return np.concatenate([self.eta(), self.deltas])


@dataclass
class SegmentForm:
    """Per-segment intercepts and slopes of the same kink model.

    Segment ``k`` covers ``deltas[k-1] < x <= deltas[k]``; continuity at every
    kink is an invariant.
    """

    intercepts: np.ndarray
    slopes: np.ndarray
    gamma: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        self.intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        self.slopes = np.atleast_1d(np.asarray(self.slopes, dtype=float))
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        self.deltas = np.asarray(self.deltas, dtype=float).ravel()
        if self.intercepts.size != self.slopes.size or self.intercepts.size != self.deltas.size + 1:
            raise UsageError("need K+1 intercepts and slopes for K kinks")
        for k, d in enumerate(self.deltas):
            left = self.intercepts[k] + self.slopes[k] * d
            right = self.intercepts[k + 1] + self.slopes[k + 1] * d
            if abs(left - right) > 1e-9 * max(1.0, abs(left), abs(right)):
                raise UsageError(f"segments {k} and {k + 1} are discontinuous at {d}")


@dataclass
class Dataset:
    """Response ``y``, scalar threshold covariate ``x`` and covariate matrix ``z``."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.x = np.asarray(self.x, dtype=float).ravel()
        n = self.y.size
        z = np.asarray(self.z, dtype=float)
        if z.size == 0:
            z = np.empty((n, 0))
        if z.ndim == 1:
            z = z[:, None]
        self.z = z
        if self.x.size != n or self.z.shape[0] != n:
            raise UsageError("y, x and z must have matching numbers of rows")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.z))):
            raise UsageError("dataset contains non-finite values")
        if n < max(10, self.p + 4):
            raise UsageError(f"need at least max(10, p+4) observations, got n={n}, p={self.p}")
        if np.ptp(self.x) == 0.0:
            raise UsageError("threshold covariate x is constant")

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def p(self) -> int:
        return int(self.z.shape[1])


def build_design(x, z, deltas) -> DesignMatrix:
    """Design with columns [1, x, (x - d_1)_+, ..., (x - d_K)_+, z].

    The hinge uses the strict indicator 1[x > d], so a row with x exactly at a
    kink contributes zero to that hinge column.
    """
    x = np.asarray(x, dtype=float).ravel()
    deltas = np.asarray(deltas, dtype=float).ravel()
    if deltas.size > 1 and not np.all(np.diff(deltas) > 0):
        raise UsageError("kink locations must be strictly increasing")
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        z = np.empty((x.size, 0))
    if z.ndim == 1:
        z = z[:, None]
    hinges = np.maximum(x[:, None] - deltas[None, :], 0.0) if deltas.size else np.empty((x.size, 0))
    values = np.column_stack([np.ones(x.size), x, hinges, z])
    labels = (
        ["intercept", "x"]
        + [f"hinge{k + 1}" for k in range(deltas.size)]
        + [f"z{j + 1}" for j in range(z.shape[1])]
    )
    return DesignMatrix(values=values, labels=labels)


def predict_quantile(params: MkqrParams, x, z=None):
    """Conditional quantile alpha0 + alpha1*x + sum_k beta_k (x - d_k)_+ + gamma'z."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x)
    out = params.alpha0 + params.alpha1 * xv
    if params.k:
        out = out + np.maximum(xv[:, None] - params.deltas[None, :], 0.0) @ params.betas
    if params.p:
        if z is None:
            raise UsageError(f"model has {params.p} covariates but no z was given")
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[None, :] if scalar else z[:, None]
        if z.shape[1] != params.p:
            raise UsageError(f"z has {z.shape[1]} columns, expected {params.p}")
        out = out + z @ params.gamma
    return float(out[0]) if scalar else out


def objective(data: Dataset, params: MkqrParams, tau) -> float:
    """Mean check loss of the dataset residuals under ``params``."""
    t = as_tau(tau)
    if params.p != data.p:
        raise UsageError(f"params expect p={params.p} covariates, dataset has p={data.p}")
    fitted = predict_quantile(params, data.x, data.z if data.p else None)
    return float(np.mean(check_loss(data.y - fitted, t)))


def to_segment_form(params: MkqrParams) -> SegmentForm:
    """Convert slope-increment parameters to per-segment intercepts and slopes."""
    slopes = params.alpha1 + np.concatenate([[0.0], np.cumsum(params.betas)])
    intercepts = params.alpha0 - np.concatenate([[0.0], np.cumsum(params.betas * params.deltas)])
    return SegmentForm(intercepts=intercepts, slopes=slopes, gamma=params.gamma.copy(), deltas=params.deltas.copy())


def from_segment_form(seg: SegmentForm) -> MkqrParams:
    """Inverse of :func:`to_segment_form`; exact round trip."""
    return MkqrParams(
        alpha0=seg.intercepts[0],
        alpha1=seg.slopes[0],
        betas=np.diff(seg.slopes),
        gamma=seg.gamma.copy(),
        deltas=seg.deltas.copy(),
    )
