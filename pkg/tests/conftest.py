import numpy as np
import pytest

from kinkqr import BrisqSettings, Dataset, ScenarioSpec, generate


def make_case(case, n, seed, *, hetero=False, t3=False, power_c=None):
    """Dataset from one of the named simulation layouts."""
    spec = ScenarioSpec(
        case=case,
        n=n,
        error="t3" if t3 else "normal",
        heteroscedastic=hetero,
        power_c=power_c,
        seed=seed,
    )
    data, _ = generate(spec)
    return data


def make_null(n, seed, *, hetero=False, t3=False):
    """No-kink linear data with the same covariate design as the named cases."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5, 5, n)
    z = rng.normal(1, 1, (n, 1))
    e = rng.standard_t(3, n) if t3 else rng.standard_normal(n)
    sig = 1 + 0.2 * x if hetero else 1.0
    return Dataset(y=1 + x + z[:, 0] + sig * e, x=x, z=z)


@pytest.fixture
def case1_data():
    return make_case(1, 500, seed=101)


@pytest.fixture
def case2_data():
    return make_case(2, 500, seed=202)


@pytest.fixture
def fast_settings():
    """Fewer restarts than the default, for tests that only need a decent fit."""
    return BrisqSettings(restart_count=5, seed=0)
