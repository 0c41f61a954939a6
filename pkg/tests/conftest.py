import numpy as np
import pytest

from vppcosim import data_path
from vppcosim.feeder import Bus, FeederGraph, Line, build_sensitivity, load_feeder


@pytest.fixture(scope="session")
def desk_feeder():
    return load_feeder(data_path("desk5.json"))


@pytest.fixture(scope="session")
def desk_model(desk_feeder):
    return build_sensitivity(desk_feeder)


@pytest.fixture
def two_bus_feeder():
    return FeederGraph(
        [Bus(0), Bus(1)],
        [Line(0, 1, r=0.01, x=0.02)],
        v_nom=1.0,
    )


def random_radial_feeder(rng: np.random.Generator, n_buses: int) -> FeederGraph:
    """Random tree with modest impedances and light loads."""
    buses = [Bus(0)]
    lines = []
    for i in range(1, n_buses):
        parent = int(rng.integers(0, i))
        buses.append(
            Bus(
                i,
                load_p=float(rng.uniform(0.0, 0.02)),
                load_q=float(rng.uniform(0.0, 0.01)),
                has_der=bool(rng.random() < 0.4),
            )
        )
        lines.append(
            Line(parent, i, r=float(rng.uniform(0.001, 0.01)), x=float(rng.uniform(0.002, 0.02)))
        )
    return FeederGraph(buses, lines, v_nom=1.0)
