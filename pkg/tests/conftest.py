import numpy as np
import pytest

from roadtrack import (
    NoiseConfig,
    TransitionParams,
    TransitionPrior,
    build_graph,
    grid_graph,
)


@pytest.fixture(scope="session")
def noise():
    """Reference noise levels used across the experiment tests."""
    return NoiseConfig(sigma2_r=6.25e-4, sigma2_g=6.25e-4, sigma2_y=100.0, dt=30.0)


@pytest.fixture(scope="session")
def true_params():
    return TransitionParams.from_rates(pi_off=0.05, pi_g=0.05)


@pytest.fixture(scope="session")
def prior():
    return TransitionPrior(alpha_off_off=15, alpha_off_on=20,
                           alpha_on_on=70, alpha_on_off=100)


@pytest.fixture(scope="session")
def grid10():
    return grid_graph(10, 100.0)


@pytest.fixture()
def l_graph():
    """Two-edge L shape: (0,0)->(10,0)->(10,10)."""
    return build_graph([(1, [(0.0, 0.0), (10.0, 0.0)]),
                        (2, [(10.0, 0.0), (10.0, 10.0)])])


def straight_chain(n_edges: int, length: float, both_directions: bool = True):
    """Collinear chain along the x axis starting at the origin."""
    records = []
    eid = 1
    for k in range(n_edges):
        a = (k * length, 0.0)
        b = ((k + 1) * length, 0.0)
        records.append((eid, [a, b]))
        eid += 1
        if both_directions:
            records.append((eid, [b, a]))
            eid += 1
    return build_graph(records)


@pytest.fixture()
def chain3():
    """Three connected unit-spaced edges along x, one direction."""
    return straight_chain(3, 10.0, both_directions=False)
