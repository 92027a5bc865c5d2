"""Problem-spec files: parsing with field diagnostics, serialization, random instances.

File layout (JSON, matrices row-major)::

    {"agent": {"A": [[...]], "B": [...], "C": [...], "d": 0, "mode": "ct"},
     "graph": {"nodes": N, "edges": [[from, to, weight], ...]},
     "alpha_star": 1.5,
     "sim": {"x0": [...] | "seed": 3, "horizon": 5.0, "dt": 0.001}}
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certify import CT, DT, AgentModel, check_alpha, normalize_mode
from .errors import MalformedGraphError, SpecError
from .graph import WeightedDigraph, random_digraph


@dataclass(frozen=True)
class SimSettings:
    x0: tuple | None = None
    seed: int | None = None
    horizon: float | None = None
    dt: float | None = None

    def to_json(self) -> dict:
        out = {}
        if self.x0 is not None:
            out["x0"] = list(self.x0)
        if self.seed is not None:
            out["seed"] = self.seed
        if self.horizon is not None:
            out["horizon"] = self.horizon
        if self.dt is not None:
            out["dt"] = self.dt
        return out


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    agent: AgentModel
    graph: WeightedDigraph
    alpha_star: float
    sim: SimSettings = field(default_factory=SimSettings)

    def __post_init__(self):
        try:
            check_alpha(self.alpha_star, self.agent.mode)
        except ValueError as exc:
            raise SpecError(f"alpha_star: {exc}") from None
        if self.sim.x0 is not None and len(self.sim.x0) != self.graph.node_count * self.agent.n:
            raise SpecError(
                f"sim.x0: length {len(self.sim.x0)} but N*n = {self.graph.node_count * self.agent.n}"
            )

    @property
    def mode(self) -> str:
        return self.agent.mode

    def initial_state(self, seed: int | None = None) -> np.ndarray:
        if self.sim.x0 is not None:
            return np.array(self.sim.x0, dtype=float)
        s = self.sim.seed if seed is None else seed
        rng = np.random.default_rng(0 if s is None else s)
        return rng.standard_normal(self.graph.node_count * self.agent.n)

    def with_alpha(self, alpha_star: float) -> "ProblemSpec":
        return replace(self, alpha_star=float(alpha_star))

    def to_json(self) -> dict:
        return {
            "agent": self.agent.to_json(),
            "graph": self.graph.to_json(),
            "alpha_star": self.alpha_star,
            "sim": self.sim.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        return self.to_json() == other.to_json()


def _require(obj, key, where):
    if not isinstance(obj, dict):
        raise SpecError(f"{where}: expected an object")
    if key not in obj:
        raise SpecError(f"{where}.{key}: missing required field")
    return obj[key]


def _number(v, where, *, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(f"{where}: expected a number, got {v!r}")
    if not np.isfinite(v):
        raise SpecError(f"{where}: must be finite")
    return float(v)


def _vector(v, where):
    if not isinstance(v, list):
        raise SpecError(f"{where}: expected a list of numbers")
    # accept column vectors written as [[b1], [b2], ...]
    flat = [x[0] if isinstance(x, list) and len(x) == 1 else x for x in v]
    return [_number(x, f"{where}[{i}]") for i, x in enumerate(flat)]


def _matrix(v, where):
    if not isinstance(v, list) or not v:
        raise SpecError(f"{where}: expected a non-empty list of rows")
    rows = []
    for i, row in enumerate(v):
        if isinstance(row, (int, float)) and not isinstance(row, bool):
            row = [row]
        if not isinstance(row, list):
            raise SpecError(f"{where}[{i}]: expected a row list")
        rows.append([_number(x, f"{where}[{i}][{j}]") for j, x in enumerate(row)])
    if any(len(r) != len(rows[0]) for r in rows):
        raise SpecError(f"{where}: rows have different lengths")
    return rows


def parse_agent(data) -> AgentModel:
    where = "agent"
    a = _matrix(_require(data, "A", where), f"{where}.A")
    b = _vector(_require(data, "B", where), f"{where}.B")
    c = _vector(_require(data, "C", where), f"{where}.C")
    d = _number(data.get("d", 0.0), f"{where}.d")
    mode = data.get("mode", CT)
    try:
        mode = normalize_mode(mode)
    except ValueError:
        raise SpecError(f"{where}.mode: expected 'ct' or 'dt', got {mode!r}") from None
    try:
        return AgentModel(a, b, c, d, mode)
    except ValueError as exc:
        raise SpecError(f"{where}: {exc}") from None


def parse_sim(data) -> SimSettings:
    if data is None:
        return SimSettings()
    if not isinstance(data, dict):
        raise SpecError("sim: expected an object")
    x0 = data.get("x0")
    if x0 is not None:
        x0 = tuple(_vector(x0, "sim.x0"))
    seed = data.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise SpecError(f"sim.seed: expected an integer, got {seed!r}")
    horizon = _number(data.get("horizon"), "sim.horizon", allow_none=True)
    if horizon is not None and horizon <= 0:
        raise SpecError("sim.horizon: must be positive")
    dt = _number(data.get("dt"), "sim.dt", allow_none=True)
    if dt is not None and dt <= 0:
        raise SpecError("sim.dt: must be positive")
    return SimSettings(x0=x0, seed=seed, horizon=horizon, dt=dt)


def parse_problem(data) -> ProblemSpec:
    if not isinstance(data, dict):
        raise SpecError("top level: expected a JSON object")
    agent = parse_agent(_require(data, "agent", "spec"))
    try:
        graph = WeightedDigraph.from_json(_require(data, "graph", "spec"))
    except MalformedGraphError as exc:
        raise SpecError(f"graph: {exc}") from None
    alpha = _number(_require(data, "alpha_star", "spec"), "alpha_star")
    return ProblemSpec(agent, graph, alpha, parse_sim(data.get("sim")))


def loads(text: str) -> ProblemSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_problem(data)


def load(path) -> ProblemSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from None
    return loads(text)


def random_agent(rng: np.random.Generator, n: int, mode: str, max_tries: int = 100) -> AgentModel:
    """Entries uniform in [-1, 1], redrawn until the realization is minimal."""
    for _ in range(max_tries):
        agent = AgentModel(
            rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), 0.0, mode
        )
        if agent.is_minimal():
            return agent
    raise RuntimeError("could not draw a minimal realization")


def random_problem(rng: np.random.Generator, nmax: int = 6, sizemax: int = 3,
                   mode: str | None = None) -> ProblemSpec:
    N = int(rng.integers(2, nmax + 1))
    n = int(rng.integers(1, sizemax + 1))
    mode = mode or (CT if rng.random() < 0.5 else DT)
    agent = random_agent(rng, n, mode)
    graph = random_digraph(rng, N)
    alpha = 0.0 if mode == CT else 1.0
    return ProblemSpec(agent, graph, alpha, SimSettings(seed=int(rng.integers(0, 2**31))))
