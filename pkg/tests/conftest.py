import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
# no log file from test runs
os.environ["LOGGING_ENABLED"] = "false"

from meanfield.database import configure_database, initialize_database  # noqa: E402
from meanfield.ensemble import InitialDensitySpec, quiet_start_init  # noqa: E402
from meanfield.forces import ForceKernel  # noqa: E402
from meanfield.integrator import RecordFlags, run  # noqa: E402


@pytest.fixture
def catalog(tmp_path):
    """A fresh SQLite catalog for the test."""
    configure_database(f"sqlite:///{tmp_path / 'runs.db'}")
    initialize_database()
    yield tmp_path


@pytest.fixture
def kernel():
    return ForceKernel(alpha=0.5)


@pytest.fixture
def small_ensemble():
    return quiet_start_init(InitialDensitySpec(), 64, seed=0, dim=1)


@pytest.fixture
def free_trajectory(small_ensemble):
    """Free transport of 64 quiet-start particles, with recorded (zero) fields."""
    return run(small_ensemble, 0.25, ForceKernel(alpha=0.5, strength=0.0), 8, RecordFlags(field_vecs=True))


@pytest.fixture
def interacting_trajectory(small_ensemble):
    # particles pass through each other in 1D, so the kernel is regularized
    return run(small_ensemble, 0.25, ForceKernel(alpha=0.5, delta=0.01), 8, RecordFlags(field_vecs=True))
