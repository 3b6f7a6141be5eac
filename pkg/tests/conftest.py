import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ncmfair.data import split
from ncmfair.rng import RngStream
from ncmfair.scm import default_scm, sample_synthetic


@pytest.fixture(scope="session")
def scm():
    return default_scm()


@pytest.fixture(scope="session")
def synthetic_splits(scm):
    """Reference-scale synthetic data: 5000 samples, 80/20, SCM units."""
    full = sample_synthetic(scm, 5000, RngStream(0, 0).spawn("data"))
    return split(full, 0.8, RngStream(0, 0).spawn("data-split"), normalize=False)


@pytest.fixture(scope="session")
def small_splits(scm):
    """Down-scaled synthetic data for fast unit tests."""
    full = sample_synthetic(scm, 600, RngStream(1, 0).spawn("data"))
    return split(full, 0.8, RngStream(1, 0).spawn("data-split"), normalize=False)
