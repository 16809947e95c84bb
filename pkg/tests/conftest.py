import numpy as np
import pytest

from wheelload.fixtures import fixture_vehicle
from wheelload.simulate import NoiseSpec, Scenario, simulate_segments


@pytest.fixture(scope="session")
def vehicle_a():
    return fixture_vehicle("a")


@pytest.fixture(scope="session")
def corner_a(vehicle_a):
    return vehicle_a.corners["front_left"]


@pytest.fixture(scope="session")
def small_dataset(vehicle_a):
    """Six short noisy scenarios (both styles), all four corners."""
    segments = []
    for style in ("smooth", "aggressive"):
        for seed in range(3):
            segments += simulate_segments(
                vehicle_a, Scenario(style, seed, duration=6.0),
                NoiseSpec(), noise_seed=100 + seed)
    return segments


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
