import math
import os

import numpy as np
import pytest

from helmddm.core.config import get_settings
from helmddm.core.mesh import generate_disk_mesh, partition_mesh


@pytest.fixture(scope="session", autouse=True)
def test_settings(tmp_path_factory):
    """Route logs and run outputs into a scratch directory."""
    root = tmp_path_factory.mktemp("helmddm")
    os.environ["APP_ENV"] = "test"
    os.environ["LOG_DIR"] = str(root / "logs")
    os.environ["OUTPUT_DIR"] = str(root / "runs")
    get_settings.cache_clear()
    yield get_settings()
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def disk_for(kappa: float, n_lambda: float, radius: float = 1.0):
    return generate_disk_mesh(radius, 2.0 * math.pi / (kappa * n_lambda))


@pytest.fixture(scope="session")
def make_disk():
    """Disk mesh for a wave number and a number of points per wavelength."""
    return disk_for


@pytest.fixture(scope="session")
def small_disk():
    # kappa = 1, 25 points per wavelength: 5 rings, 91 nodes
    return disk_for(1.0, 25.0)


@pytest.fixture(scope="session")
def tiny_disk():
    return disk_for(2.0, 8.0)


@pytest.fixture(scope="session")
def four_way(small_disk):
    return partition_mesh(small_disk, 4, "graph-growing", seed=0)


@pytest.fixture(scope="session")
def onion2(small_disk):
    return partition_mesh(small_disk, 2, "onion")


@pytest.fixture(scope="session")
def onion3(small_disk):
    return partition_mesh(small_disk, 3, "onion")
