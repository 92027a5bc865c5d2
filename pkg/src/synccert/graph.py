"""Weighted digraphs, Laplacians, left null vectors and the feedthrough Laplacian."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlgebraicLoopError, AmbiguousNullSpaceError, MalformedGraphError

ROW_SUM_TOL = 1e-12
LOOP_SV_TOL = 1e-10
NEG_CLAMP = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    """N nodes with weights[i, j] >= 0 the weight of the edge j -> i."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise MalformedGraphError(f"weights must be square, got shape {w.shape}")
        if w.shape[0] < 2:
            raise MalformedGraphError("a graph needs at least 2 nodes")
        if not np.all(np.isfinite(w)):
            raise MalformedGraphError("weights must be finite")
        if np.any(w < 0):
            i, j = np.argwhere(w < 0)[0]
            raise MalformedGraphError(f"negative weight {w[i, j]} on edge {j + 1}->{i + 1}")
        if np.any(np.diag(w) != 0):
            i = int(np.flatnonzero(np.diag(w))[0])
            raise MalformedGraphError(f"self-loop on node {i + 1}")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def node_count(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_edges(cls, nodes: int, edges) -> "WeightedDigraph":
        """Build from 1-based ``[from, to, weight]`` triples."""
        if not isinstance(nodes, (int, np.integer)) or isinstance(nodes, bool):
            raise MalformedGraphError(f"'nodes' must be an integer, got {nodes!r}")
        if nodes < 2:
            raise MalformedGraphError("a graph needs at least 2 nodes")
        w = np.zeros((nodes, nodes))
        for idx, edge in enumerate(edges):
            try:
                src, dst, weight = edge
            except (TypeError, ValueError):
                raise MalformedGraphError(f"edges[{idx}]: expected [from, to, weight]") from None
            for name, v in (("from", src), ("to", dst)):
                if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or not 1 <= v <= nodes:
                    raise MalformedGraphError(f"edges[{idx}]: '{name}' must be an integer in 1..{nodes}")
            if src == dst:
                raise MalformedGraphError(f"edges[{idx}]: self-loop on node {src}")
            weight = float(weight)
            if not np.isfinite(weight) or weight < 0:
                raise MalformedGraphError(f"edges[{idx}]: weight must be finite and >= 0")
            if w[dst - 1, src - 1] != 0:
                raise MalformedGraphError(f"edges[{idx}]: duplicate edge {src}->{dst}")
            w[dst - 1, src - 1] = weight
        return cls(w)

    def edges(self) -> list[list]:
        """1-based ``[from, to, weight]`` triples of the nonzero weights."""
        out = []
        for i, j in zip(*np.nonzero(self.weights)):
            out.append([int(j) + 1, int(i) + 1, float(self.weights[i, j])])
        out.sort()
        return out

    def to_json(self) -> dict:
        return {"nodes": self.node_count, "edges": self.edges()}

    @classmethod
    def from_json(cls, data) -> "WeightedDigraph":
        if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
            raise MalformedGraphError("graph must be an object with 'nodes' and 'edges'")
        return cls.from_edges(data["nodes"], data["edges"])

    @classmethod
    def load(cls, path) -> "WeightedDigraph":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Laplacian:
    matrix: np.ndarray
    source: WeightedDigraph | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class LeftNullVector:
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))


def build_laplacian(graph: WeightedDigraph) -> Laplacian:
    """L = diag(W 1) - W."""
    w = graph.weights
    return Laplacian(np.diag(w.sum(axis=1)) - w, graph)


def _as_matrix(L) -> np.ndarray:
    return np.asarray(L.matrix if isinstance(L, Laplacian) else L, dtype=float)


def left_null_vector(L, tol: float | None = None) -> LeftNullVector:
    """Normalized non-negative p with p^T L = 0 and p^T 1 = 1.

    The entries double as a node-centrality score: p[k] is the weight of
    node k's initial state in the trajectory all agents converge to.

    ``tol`` is the singular-value threshold (relative to ``max(1, ||L||)``)
    below which a direction counts as null; default ``1e-9``.
    """
    m = _as_matrix(L)
    scale = max(1.0, np.linalg.norm(m, 2))
    tol = 1e-9 if tol is None else tol
    u, s, _ = np.linalg.svd(m)
    null_dim = int(np.sum(s <= tol * scale))
    if null_dim > 1:
        raise AmbiguousNullSpaceError(null_dim)
    p = u[:, -1].copy()
    if p[np.argmax(np.abs(p))] < 0:
        p = -p
    if np.any(p < -NEG_CLAMP):
        raise AmbiguousNullSpaceError(null_dim)
    p[p < 0] = 0.0
    return LeftNullVector(p / p.sum())


def feedthrough_laplacian(L, d: float) -> np.ndarray:
    """L_d = (I + dL)^{-1} L, the effective coupling for agents with feedthrough d."""
    m = _as_matrix(L)
    if d == 0:
        return m.copy()
    k = np.eye(m.shape[0]) + d * m
    s = np.linalg.svd(k, compute_uv=False)
    if s[-1] < LOOP_SV_TOL * s[0]:
        raise AlgebraicLoopError(d, float(s[-1]))
    return np.linalg.solve(k, m)


def random_digraph(rng: np.random.Generator, n: int, p_edge: float = 0.5,
                   wmax: float = 2.0) -> WeightedDigraph:
    """Erdos-Renyi style digraph with weights uniform in (0, wmax]."""
    mask = rng.random((n, n)) < p_edge
    np.fill_diagonal(mask, False)
    w = wmax - rng.uniform(0.0, wmax, (n, n))  # (0, wmax]
    return WeightedDigraph(np.where(mask, w, 0.0))
