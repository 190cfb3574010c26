"""Pytest configuration and shared fixtures."""

import os
import sys

import numpy as np
import pytest

# Add project root to Python path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import definitions  # noqa: E402
from model import CausalDiagram, CausalModel, binary_variables  # noqa: E402


def make_model(names, edges, tables):
    """Binary model from variable names, (parent, child) name pairs and CPT rows per variable."""
    diagram = CausalDiagram.from_edges(binary_variables(names), edges)
    return CausalModel(diagram, tuple(np.array(tables[name], dtype=float) for name in names))


@pytest.fixture
def chain_model():
    """A -> B -> C with strong links."""
    return make_model('ABC', [('A', 'B'), ('B', 'C')], {
        'A': [[0.4, 0.6]],
        'B': [[0.9, 0.1], [0.2, 0.8]],
        'C': [[0.85, 0.15], [0.25, 0.75]],
    })


@pytest.fixture
def tree_model():
    """A -> B, A -> C, C -> D."""
    return make_model('ABCD', [('A', 'B'), ('A', 'C'), ('C', 'D')], {
        'A': [[0.3, 0.7]],
        'B': [[0.8, 0.2], [0.3, 0.7]],
        'C': [[0.7, 0.3], [0.2, 0.8]],
        'D': [[0.9, 0.1], [0.4, 0.6]],
    })


@pytest.fixture
def collider_model():
    """X -> Z <- Y."""
    return make_model('XYZ', [('X', 'Z'), ('Y', 'Z')], {
        'X': [[0.5, 0.5]],
        'Y': [[0.4, 0.6]],
        'Z': [[0.9, 0.1], [0.4, 0.6], [0.5, 0.5], [0.05, 0.95]],
    })


@pytest.fixture
def changes_example_model():
    """X -> Q -> Z <- Y, Z -> W, loaded from the shipped network file."""
    from file_formats import load_network
    return load_network(definitions.CHANGES_EXAMPLE_NETWORK_PATH)


@pytest.fixture
def benchmark_model():
    from file_formats import load_network
    return load_network(definitions.BENCHMARK_NETWORK_PATH)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def temp_settings_file(tmp_path):
    """Path of a settings.json that does not exist yet."""
    return tmp_path / "settings.json"


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line("markers", "unit: Unit tests")
    config.addinivalue_line("markers", "integration: Integration tests")
    config.addinivalue_line("markers", "slow: Slow tests")
