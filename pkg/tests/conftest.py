import numpy as np
import pytest

from ndec import SplitSpec, SynthConfig, make_splits, synth_session


@pytest.fixture(scope="session")
def small_session():
    """20 s, 24 probes: quick enough for per-module tests."""
    return synth_session(SynthConfig(n_probes=24, duration=20.0, rng_seed=7))


@pytest.fixture(scope="session")
def small_splits(small_session):
    return make_splits(small_session, SplitSpec())


@pytest.fixture()
def rng():
    return np.random.default_rng(99)
