import numpy as np
import pytest

from neotraj.minco import BoundaryState, TrajParams, solve_coeffs
from neotraj.replan import EpisodeSetup
from neotraj.world import GridWorld, SceneSpec, generate_scene


@pytest.fixture(scope="session")
def default_setup() -> EpisodeSetup:
    return EpisodeSetup()


@pytest.fixture(scope="session")
def empty_world() -> GridWorld:
    return GridWorld(SceneSpec())


@pytest.fixture(scope="session")
def scene4_world() -> GridWorld:
    return GridWorld(generate_scene(preset=4, seed=3))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_instance(rng, m=3, d=2, scale=2.0):
    """Random boundary states, waypoints and durations for property tests."""
    init = BoundaryState(rng.normal(size=d), rng.normal(scale=0.5, size=d),
                         rng.normal(scale=0.3, size=d))
    target = BoundaryState(rng.normal(size=d) + 4.0, rng.normal(scale=0.5, size=d),
                           rng.normal(scale=0.3, size=d))
    q = init.position[:, None] + (target.position - init.position)[:, None] * (
        np.arange(1, m) / m
    ) + rng.normal(scale=scale, size=(d, m - 1))
    tbar = rng.uniform(0.6, 3.5, size=m)
    return init, target, TrajParams(q, tbar)


def make_trajectory(rng, m=3, d=2):
    init, target, params = random_instance(rng, m, d)
    return solve_coeffs(init, target, params), init, target, params
