import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=60,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

CHERNOFF_SEED = 777


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(20240817)))


@pytest.fixture(scope="session")
def chernoff_ref():
    """Reference argmax samples at the default grid; shared session-wide."""
    from isodist.chernoff import ChernoffConfig, sample_chernoff

    return sample_chernoff(ChernoffConfig(count=100_000, seed=CHERNOFF_SEED))


@pytest.fixture(scope="session")
def chernoff_half_step():
    from isodist.chernoff import ChernoffConfig, sample_chernoff

    return sample_chernoff(ChernoffConfig(count=100_000, seed=CHERNOFF_SEED + 1, step=0.0025))


@pytest.fixture(scope="session")
def chernoff_wide_window(chernoff_ref):
    """Same seed as the reference: the wider window extends the same paths."""
    from isodist.chernoff import ChernoffConfig, sample_chernoff

    return sample_chernoff(ChernoffConfig(half_width=4.0, count=100_000, seed=CHERNOFF_SEED))


@pytest.fixture(scope="session")
def scaling_ks_unit():
    from isodist.chernoff import ChernoffConfig, scaled_argmax_check

    return scaled_argmax_check(1.0, 1.0, ChernoffConfig(count=100_000, seed=CHERNOFF_SEED + 2))
