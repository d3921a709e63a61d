"""Shared small-grid fixtures. Everything here is desk scale: grids stay
below 17 nodes per axis so the full suite (minus the acceptance module)
runs in seconds."""

import numpy as np
import pytest

from calderon_lab.grid_geometry import (
    CylinderGrid,
    cyl_grid,
    flat_metric,
    random_trig_metric,
    sample_metric,
)


@pytest.fixture
def grid9():
    return cyl_grid(3, 9)


@pytest.fixture
def grid5():
    return cyl_grid(3, 5)


@pytest.fixture
def flat9(grid9):
    return sample_metric(flat_metric(3), grid9)


@pytest.fixture
def bumpy9(grid9):
    return sample_metric(random_trig_metric(3, seed=7), grid9)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
