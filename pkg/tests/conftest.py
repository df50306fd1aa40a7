"""
Shared fixtures: seeded generators, small ensembles and scenario files.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from kwass.measures import PhaseEnsemble


@pytest.fixture
def rng():
    """Seeded generator so every test is reproducible."""
    return np.random.default_rng(12345)


@pytest.fixture
def make_ensemble(rng):
    """Factory fixture for uniform-weight random ensembles."""
    def _make(n: int = 8, d: int = 1, v_scale: float = 1.0, label: str = "mu") -> PhaseEnsemble:
        return PhaseEnsemble.from_arrays(rng.random((n, d)), v_scale * rng.standard_normal((n, d)), label=label)
    return _make


@pytest.fixture
def shifted_pair(make_ensemble):
    """Factory fixture for a pair differing by a constant velocity shift."""
    def _pair(n: int = 50, delta: float = 1e-3, d: int = 1):
        mu = make_ensemble(n, d)
        nu = PhaseEnsemble.from_arrays(mu.x, mu.v + delta, mu.weights, label="nu")
        return mu, nu
    return _pair


@pytest.fixture
def scenario_file(tmp_path):
    """Factory fixture writing a TOML scenario into a temporary directory."""
    def _write(body: str, name: str = "scenario.toml") -> str:
        path = tmp_path / name
        path.write_text(body)
        return str(path)
    return _write
