import pytest
from hypothesis import HealthCheck, settings

from .helpers import calibrate_shift, make_synthetic_world, bench_spec, train_linear_model

settings.register_profile(
    "suite", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("suite")


@pytest.fixture(scope="session")
def world19():
    """No-shift benchmark world shared by the slow recovery tests."""
    return make_synthetic_world(bench_spec(seed=19))


@pytest.fixture(scope="session")
def model19(world19):
    model, trace = train_linear_model(world19, seed=11)
    return model, trace


@pytest.fixture(scope="session")
def calibrated():
    """Memoized (world, model, agreement) per world seed, shift in band."""
    cache = {}

    def get(world_seed: int):
        if world_seed not in cache:
            cache[world_seed] = calibrate_shift(world_seed)
        return cache[world_seed]

    return get
