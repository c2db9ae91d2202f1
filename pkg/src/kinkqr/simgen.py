"""Synthetic data generators for the Monte Carlo studies.

Three named kink layouts share the design X ~ U(-5, 5), Z ~ N(1, 1),
intercept/base-slope/covariate coefficients all equal to one, and normal or
t(3) errors that are optionally scaled by 1 + 0.2 X for heteroscedasticity.
The layouts differ in their slope changes and kink locations:

    case 1:  one kink,    betas (-3,),        deltas (0.5,)
    case 2:  two kinks,   betas (-3, 4),      deltas (-1, 2)
    case 3:  three kinks, betas (-3, 4, -4),  deltas (-3, 0, 3)

A ``power_c`` value replaces the case-1 slope change by c / sqrt(n) for the
local-alternative power study; c = 0 is the no-kink null.

Draws come from the counter-based Philox generator keyed by the scenario
seed, so a fixed seed reproduces the same dataset bytes everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from ._rng import stream
from .errors import UsageError
from .linqr import as_tau
from .model import Dataset, MkqrParams

ERROR_KINDS = ("normal", "t3")

_CASE_BETAS = {1: (-3.0,), 2: (-3.0, 4.0), 3: (-3.0, 4.0, -4.0)}
_CASE_DELTAS = {1: (0.5,), 2: (-1.0, 2.0), 3: (-3.0, 0.0, 3.0)}

_X_LOW, _X_HIGH = -5.0, 5.0
_HETERO_SLOPE = 0.2


@dataclass
class TrueTheta:
    """Generator truth expressed as model parameters at a given quantile level."""

    params: MkqrParams
    tau: float


@dataclass
class ScenarioSpec:
    """A simulation scenario: which case, sample size, error law, scale, seed."""

    case: int | str = 1
    n: int = 500
    error: str = "normal"
    heteroscedastic: bool = False
    power_c: float | None = None
    seed: int = 0
    params: MkqrParams | None = None  # required for case="custom"

    def __post_init__(self):
        if self.case != "custom":
            self.case = int(self.case)
            if self.case not in _CASE_BETAS:
                raise UsageError(f"case must be 1, 2, 3 or 'custom', got {self.case!r}")
        elif self.params is None:
            raise UsageError("case='custom' requires explicit params")
        if self.error not in ERROR_KINDS:
            raise UsageError(f"error must be one of {ERROR_KINDS}, got {self.error!r}")
        if self.n < 10:
            raise UsageError("scenario needs n >= 10")
        if self.power_c is not None and self.case not in (1, "custom"):
            raise UsageError("the local-alternative design modifies case 1")

    def base_params(self) -> MkqrParams:
        """Generator parameters before any quantile adjustment."""
        if self.case == "custom":
            return self.params
        betas = np.array(_CASE_BETAS[self.case])
        deltas = np.array(_CASE_DELTAS[self.case])
        if self.power_c is not None:
            betas = np.array([self.power_c / math.sqrt(self.n)])
            deltas = np.array(_CASE_DELTAS[1])
        return MkqrParams(alpha0=1.0, alpha1=1.0, betas=betas, gamma=np.array([1.0]), deltas=deltas)

    def to_config(self) -> str:
        """Serialize to the key = value config format used by the CLI."""
        lines = [
            f"case = {self.case}",
            f"n = {self.n}",
            f"error = {self.error}",
            f"heteroscedastic = {'true' if self.heteroscedastic else 'false'}",
            f"seed = {self.seed}",
        ]
        if self.power_c is not None:
            lines.append(f"power_c = {self.power_c!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config(cls, text: str) -> "ScenarioSpec":
        fields = parse_config(text)
        kwargs = {}
        for key, value in fields.items():
            if key == "case":
                kwargs["case"] = value if value == "custom" else int(value)
            elif key == "n":
                kwargs["n"] = int(value)
            elif key == "error":
                kwargs["error"] = value
            elif key == "heteroscedastic":
                kwargs["heteroscedastic"] = value.lower() in ("true", "1", "yes")
            elif key == "power_c":
                kwargs["power_c"] = float(value)
            elif key == "seed":
                kwargs["seed"] = int(value)
        return cls(**kwargs)


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _error_ppf(kind: str, tau: float) -> float:
    if kind == "normal":
        return float(scipy.stats.norm.ppf(tau))
    return float(scipy.stats.t.ppf(tau, df=3))


def generate(spec: ScenarioSpec) -> tuple[Dataset, TrueTheta]:
    """Draw one dataset from the scenario; deterministic given the seed.

    Returns the dataset together with the generator truth at the median,
    which for the symmetric error laws used here equals the raw generator
    parameters.  Use :func:`true_theta_at` for other quantile levels.
    """
    rng = stream(spec.seed)
    n = spec.n
    pars = spec.base_params()
    x = rng.uniform(_X_LOW, _X_HIGH, n)
    z = rng.normal(1.0, 1.0, (n, pars.p))
    e = rng.standard_normal(n) if spec.error == "normal" else rng.standard_t(3, n)
    quantile_part = pars.alpha0 + pars.alpha1 * x + (z @ pars.gamma if pars.p else 0.0)
    for b, d in zip(pars.betas, pars.deltas):
        quantile_part = quantile_part + b * np.maximum(x - d, 0.0)
    scale = 1.0 + _HETERO_SLOPE * x if spec.heteroscedastic else 1.0
    y = quantile_part + scale * e
    return Dataset(y=y, x=x, z=z), TrueTheta(params=pars, tau=0.5)


def true_theta_at(spec: ScenarioSpec, tau) -> TrueTheta:
    """Generator truth at quantile level tau.

    The error enters additively with scale 1 (homoscedastic) or 1 + 0.2x, so
    the tau-quantile shifts the intercept by the error quantile and, in the
    heteroscedastic design, tilts the base slope by 0.2 times that quantile;
    kink locations and slope changes never move.
    """
    t = as_tau(tau)
    pars = spec.base_params()
    q = _error_ppf(spec.error, t)
    alpha0 = pars.alpha0 + q
    alpha1 = pars.alpha1 + (_HETERO_SLOPE * q if spec.heteroscedastic else 0.0)
    return TrueTheta(
        params=MkqrParams(
            alpha0=alpha0,
            alpha1=alpha1,
            betas=pars.betas.copy(),
            gamma=pars.gamma.copy(),
            deltas=pars.deltas.copy(),
        ),
        tau=t,
    )
