import pytest

from config import config_from_dict
from gridworld import CellIndex, GridSpec, Trajectory


@pytest.fixture
def grid():
    return GridSpec(5, 5, 5)


@pytest.fixture
def make_traj():
    """Trajectory from consecutive (x, y) positions, the first at slot `start`"""
    def _make(vehicle, positions, grid, candidate=0, start=1):
        cells = tuple(CellIndex(x, y, t) for t, (x, y) in enumerate(positions, start=start))
        return Trajectory(vehicle, candidate, cells, grid)
    return _make


@pytest.fixture
def small_config():
    """A scenario small enough to run many times in a test"""
    return config_from_dict({
        "seed": 3,
        "grid": {"width": 8, "height": 6, "excluded_count": 2},
        "fleet": {"size": 8, "candidates": 3},
        "demand": {"hotspots": [[6, 4]], "radius": 2.0},
    }, apply_env=False)
