from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from synccert.certify import AgentModel
from synccert.graph import WeightedDigraph

PAIR = WeightedDigraph([[0, 1], [1, 0]])
CYCLE3 = WeightedDigraph.from_edges(3, [[1, 2, 1], [2, 3, 1], [3, 1, 1]])
STAR3 = WeightedDigraph.from_edges(3, [[1, 2, 1], [1, 3, 1]])


def integrator(mode="ct", d=0.0):
    return AgentModel([[0.0]], [1.0], [1.0], d, mode)


def double_integrator():
    return AgentModel([[0, 1], [0, 0]], [0, 1], [1, 0])


def harmonic_velocity():
    return AgentModel([[0, 1], [-1, 0]], [0, 1], [0, 1])


def match_error(a, b) -> float:
    """Largest distance after optimal one-to-one matching of two multisets."""
    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    assert a.size == b.size
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max()) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
