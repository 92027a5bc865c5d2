"""Closed-loop simulation, distance to the synchronization set and rate fitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .certify import CT, DT, AgentModel, coupling_matrix, normalize_mode
from .graph import LeftNullVector
from .spectral import spectral_radius

DIST_FLOOR = 1e-12
# disagreement below this fraction of |x| is round-off, not signal
REL_FLOOR = 1e-11
# V ratios are only trusted while the disagreement is this far above |x| round-off
DECREASE_REL_FLOOR = 1e-8
DISCARD_FRACTION = 0.1
MIN_FIT_SAMPLES = 10


def closed_loop_matrix(agent: AgentModel, coupling) -> np.ndarray:
    """(I_N kron A) - (coupling kron BC); pass L_d for agents with feedthrough."""
    m = np.asarray(coupling, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"coupling matrix must be square, got shape {m.shape}")
    return np.kron(np.eye(m.shape[0]), agent.A) - np.kron(m, agent.BC)


def step_bound(mat) -> float:
    """Largest admissible RK4 step: 0.1 / max(1, spectral radius)."""
    return 0.1 / max(1.0, spectral_radius(mat))


def distance_to_attractor(x, N: int, n: int) -> float | np.ndarray:
    """|Psi x|: norm of the disagreement component. Works row-wise on a state matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N * n:
        raise ValueError(f"state length {x.shape[-1]} is not N*n = {N * n}")
    blocks = x.reshape(x.shape[:-1] + (N, n))
    dev = blocks - blocks.mean(axis=-2, keepdims=True)
    with np.errstate(over="ignore"):  # diverged traces may overflow the square
        return np.sqrt(np.sum(dev * dev, axis=(-2, -1)))


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    times: np.ndarray
    states: np.ndarray
    dist: np.ndarray
    N: int
    n: int
    mode: str
    v_values: np.ndarray | None = None
    reference: np.ndarray | None = None
    diverged: bool = False

    def noise_floor(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            scale = np.linalg.norm(self.states, axis=1)
        return np.maximum(DIST_FLOOR, REL_FLOOR * scale)

    def write_csv(self, fh) -> None:
        """Header ``t, x_1_1, ..., x_N_n, dist, v``; 17 significant digits."""
        w = csv.writer(fh, lineterminator="\n")
        header = ["t"] + [f"x_{i}_{j}" for i in range(1, self.N + 1) for j in range(1, self.n + 1)]
        w.writerow(header + ["dist", "v"])
        fmt = "{:.17g}".format
        for k in range(self.times.size):
            v = self.v_values[k] if self.v_values is not None else float("nan")
            row = [fmt(self.times[k])] + [fmt(s) for s in self.states[k]]
            w.writerow(row + [fmt(self.dist[k]), fmt(v)])


def _propagate(mat, x0, nsteps, dt, mode, exact):
    if mode == DT:
        return kernels.iterate_linear(mat, x0, nsteps)
    if exact:
        return kernels.iterate_linear(scipy.linalg.expm(mat * dt), x0, nsteps)
    return kernels.rk4_linear(mat, x0, dt, nsteps)


def _grid(horizon, dt, mode, mat):
    if mode == DT:
        nsteps = int(round(horizon))
        if nsteps < 1 or abs(nsteps - horizon) > 1e-9:
            raise ValueError(f"discrete-time horizon must be a positive integer step count, got {horizon}")
        return nsteps, 1.0
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    bound = step_bound(mat)
    if dt is None:
        dt = bound
    elif not 0 < dt <= bound * (1 + 1e-12):
        raise ValueError(f"step {dt} exceeds the stability-aware bound {bound:.4g}")
    nsteps = max(1, math.ceil(horizon / dt - 1e-9))
    return nsteps, horizon / nsteps


def simulate(agent: AgentModel, L, x0, horizon: float, dt: float | None = None, *,
             certificate=None, p: LeftNullVector | None = None,
             exact: bool = False) -> SimulationTrace:
    """Integrate the aggregate closed loop from ``x0``.

    Continuous time uses fixed-step classical RK4 with a uniform step no
    larger than ``dt`` (default: the stability-aware bound); ``exact=True``
    swaps in the matrix-exponential propagator. Discrete time iterates
    ``horizon`` steps exactly and ignores ``dt``. A non-finite state
    truncates the trace and sets ``diverged``.

    With ``certificate`` the trace carries V(x(t)); with ``p`` it carries the
    reference trajectory all agents should converge to.
    """
    mode = agent.mode
    lm = coupling_matrix(agent, L)
    N, n = lm.shape[0], agent.n
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != N * n:
        raise ValueError(f"x0 has length {x0.size}, expected N*n = {N * n}")
    mat = closed_loop_matrix(agent, lm)
    nsteps, h = _grid(horizon, dt, mode, mat)
    with np.errstate(over="ignore", invalid="ignore"):
        states, n_valid = _propagate(mat, x0, nsteps, h, mode, exact)
    states = states[:n_valid]
    times = np.arange(n_valid) * h
    ref = None
    if p is not None:
        ref = ivp_reference(agent, p, x0, nsteps, h, exact=exact)[:n_valid]
    with np.errstate(over="ignore", invalid="ignore"):
        v = certificate.V(states) if certificate is not None else None
    return SimulationTrace(
        times=times,
        states=states,
        dist=distance_to_attractor(states, N, n),
        N=N,
        n=n,
        mode=mode,
        v_values=v,
        reference=ref,
        diverged=n_valid < nsteps + 1,
    )


def ivp_initial_state(p: LeftNullVector, x0, n: int) -> np.ndarray:
    """p-weighted average of the agents' initial states."""
    w = np.asarray(p.entries, dtype=float)
    blocks = np.asarray(x0, dtype=float).reshape(w.size, n)
    return (w @ blocks) / w.sum()


def ivp_reference(agent: AgentModel, p: LeftNullVector, x0, nsteps: int, dt: float = 1.0,
                  *, exact: bool = False) -> np.ndarray:
    """Trajectory of x' = A x (x+ = A x) from the p-weighted initial average.

    Uses the same propagator and step as :func:`simulate`, so it can be
    compared sample by sample with a trace.
    """
    z0 = ivp_initial_state(p, x0, agent.n)
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = _propagate(agent.A, z0, nsteps, dt, agent.mode, exact)
    return out


@dataclass(frozen=True)
class RateFit:
    alpha_fit: float
    M_fit: float
    rsq: float
    samples: int = 0
    deadbeat: bool = False

    def to_json(self) -> dict:
        return {
            "alpha_fit": self.alpha_fit if math.isfinite(self.alpha_fit) else str(self.alpha_fit),
            "M_fit": self.M_fit,
            "rsq": self.rsq,
            "samples": self.samples,
            "deadbeat": self.deadbeat,
        }


def _rate_profile(times, alpha, mode):
    """e^{-alpha t} (CT) or alpha^t (DT)."""
    if mode == CT:
        return np.exp(-alpha * times)
    with np.errstate(divide="ignore"):
        return np.power(alpha, times)


def fit_rate(trace: SimulationTrace, mode: str | None = None) -> RateFit:
    """Least-squares line through (t, log dist) after the initial transient.

    The first 10% of samples and every sample below the round-off floor are
    skipped. ``alpha_fit`` is minus the slope (CT) or exp(slope), the
    per-step factor (DT). ``M_fit`` is the smallest M with
    dist(t) <= M profile(t) dist(0) at the fitted rate over all usable
    samples, i.e. the intercept of the tightest upper line of that slope.
    """
    mode = normalize_mode(mode or trace.mode)
    floor = trace.noise_floor()
    above = trace.dist > floor
    if not np.any(above[1:]):
        return RateFit(math.inf if mode == CT else 0.0, 1.0, 1.0, 0, True)
    start = int(math.ceil(DISCARD_FRACTION * trace.times.size))
    use = above.copy()
    use[:start] = False
    if np.count_nonzero(use) < MIN_FIT_SAMPLES:
        raise ValueError(
            f"only {np.count_nonzero(use)} usable samples; need {MIN_FIT_SAMPLES} to fit a rate"
        )
    t = trace.times[use]
    y = np.log(trace.dist[use])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    sst = float(np.sum((y - y.mean()) ** 2))
    rsq = 1.0 if sst == 0 else max(0.0, 1.0 - float(resid @ resid) / sst)
    alpha = -slope if mode == CT else math.exp(slope)
    d0 = trace.dist[0]
    if d0 <= 0:
        m_fit = 1.0
    else:
        prof = _rate_profile(trace.times[above], alpha, mode)
        m_fit = float(np.max(trace.dist[above] / (d0 * prof)))
    return RateFit(float(alpha), m_fit, rsq, int(t.size), False)


def envelope_check(trace: SimulationTrace, alpha: float, M: float, mode: str | None = None):
    """dist(t) <= M profile_alpha(t) dist(0) on every sample above the round-off floor.

    Returns ``(ok, worst_ratio)`` where the ratio is dist / bound (<= 1 passes).
    """
    mode = normalize_mode(mode or trace.mode)
    d0 = trace.dist[0]
    if d0 == 0:
        ok = bool(np.all(trace.dist <= trace.noise_floor()))
        return ok, 0.0 if ok else math.inf
    bound = M * _rate_profile(trace.times, alpha, mode) * d0
    check = trace.dist > trace.noise_floor()
    check[0] = True
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(check, trace.dist / bound, 0.0)
    worst = float(np.max(ratio))
    return worst <= 1.0, worst


def lyapunov_decrease_check(trace: SimulationTrace, alpha_used: float, mode: str | None = None,
                            rel: float = 1e-6):
    """V(x_{k+1}) <= factor V(x_k) (1 + rel) for consecutive samples.

    factor is exp(-2 alpha dt) in CT and alpha^2 in DT. Pairs whose disagreement has
    sunk to the round-off floor are skipped. Returns
    ``(ok, worst_ratio)`` with ratio = V_{k+1} / (factor V_k).
    """
    if trace.v_values is None:
        raise ValueError("trace carries no V values; simulate with a certificate")
    mode = normalize_mode(mode or trace.mode)
    v = trace.v_values
    if v.size < 2:
        return True, 0.0
    h = trace.times[1] - trace.times[0]
    factor = math.exp(-2.0 * alpha_used * h) if mode == CT else alpha_used**2
    with np.errstate(over="ignore"):
        scale = np.linalg.norm(trace.states, axis=1)
    floor = np.maximum(DIST_FLOOR, DECREASE_REL_FLOOR * scale)
    live = (trace.dist[:-1] > floor[:-1]) & (trace.dist[1:] > floor[1:])
    if not np.any(live):
        return True, 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = v[1:][live] / (factor * v[:-1][live])
    # V exactly zero (dead-beat) on both sides counts as satisfied
    ratio = np.where(np.isnan(ratio), 0.0, ratio)
    worst = float(np.max(ratio))
    return worst <= 1.0 + rel, worst
