"""Test configuration and fixtures."""

import pytest
import tempfile
import os
import json

from dri_router.core import DriConfig, Instance, Vertex
from dri_router.core.instance import format_instance
from dri_router.bench import random_instance


REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

TINY_INSTANCE_TEXT = """TINY

VEHICLE
NUMBER     CAPACITY
  3         40

CUSTOMER
CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME

    0      0      0      0      0   1000      0
    1      0     10     10      0    100      5
    2     10     10     10     20    200      5
    3     10      0     10      0    300      5
    4    -10      0     20     50     60      5
"""


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def cli_env(monkeypatch):
    """Environment letting subprocesses import dri_router from the checkout."""
    existing = os.environ.get("PYTHONPATH")
    path = REPO_ROOT if not existing else os.pathsep.join([REPO_ROOT, existing])
    monkeypatch.setenv("PYTHONPATH", path)
    return dict(os.environ)


@pytest.fixture
def tiny_instance_text():
    """Gehring-Homberger text of the four-customer instance."""
    return TINY_INSTANCE_TEXT


@pytest.fixture
def tiny_instance():
    """
    Four customers around a depot at the origin, capacity 40, three vehicles.

    Customer 4 has the narrow window [50, 60]; route [1, 2, 3] is feasible
    with start times 10, 25 and 40.
    """
    depot = Vertex(0, 0.0, 0.0, 0.0, 0.0, 1000.0, 0.0)
    customers = [
        Vertex(1, 0.0, 10.0, 10.0, 0.0, 100.0, 5.0),
        Vertex(2, 10.0, 10.0, 10.0, 20.0, 200.0, 5.0),
        Vertex(3, 10.0, 0.0, 10.0, 0.0, 300.0, 5.0),
        Vertex(4, -10.0, 0.0, 20.0, 50.0, 60.0, 5.0),
    ]
    return Instance("TINY", depot, customers, fleet_size=3, capacity=40.0)


@pytest.fixture
def synthetic_instance():
    """Seeded 40-customer clustered instance."""
    return random_instance(40, seed=7, layout="clustered")


@pytest.fixture
def small_instance():
    """Seeded 20-customer instance with tight windows."""
    return random_instance(20, seed=3, layout="mixed", window="tight")


@pytest.fixture
def instance_file(temp_dir, tiny_instance_text):
    """Write the tiny instance to a file."""
    path = os.path.join(temp_dir, "TINY.txt")
    with open(path, 'w') as f:
        f.write(tiny_instance_text)
    return path


@pytest.fixture
def synthetic_file(temp_dir, synthetic_instance):
    """Write the synthetic instance to a file."""
    path = os.path.join(temp_dir, f"{synthetic_instance.name}.txt")
    with open(path, 'w') as f:
        f.write(format_instance(synthetic_instance))
    return path


@pytest.fixture
def sample_config_dict():
    """Run configuration with a fixed number of subproblems and short budgets."""
    return {
        "q_policy": "fixed",
        "q": 3,
        "theta": 30.0,
        "alpha": 0.8,
        "restarts": 2,
        "seed": 11,
    }


@pytest.fixture
def sample_config(sample_config_dict):
    """DriConfig built from sample_config_dict."""
    return DriConfig.from_dict(sample_config_dict)


@pytest.fixture
def config_file(temp_dir, sample_config_dict):
    """Create a temporary JSON configuration file."""
    config_path = os.path.join(temp_dir, "run.json")
    with open(config_path, 'w') as f:
        json.dump(sample_config_dict, f)
    return config_path
