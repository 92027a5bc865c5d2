from __future__ import annotations

import io
import math

import numpy as np
import pytest

from synccert.certify import DT, AgentModel, global_lyapunov
from synccert.graph import WeightedDigraph, build_laplacian, left_null_vector
from synccert.simulate import (
    SimulationTrace,
    closed_loop_matrix,
    distance_to_attractor,
    envelope_check,
    fit_rate,
    ivp_initial_state,
    ivp_reference,
    lyapunov_decrease_check,
    simulate,
    step_bound,
)

from conftest import CYCLE3, PAIR, STAR3, double_integrator, harmonic_velocity, integrator

L_PAIR = build_laplacian(PAIR).matrix


def test_closed_loop_examples():
    assert np.array_equal(closed_loop_matrix(integrator(), L_PAIR), [[-1, 1], [1, -1]])
    a = harmonic_velocity()
    assert np.array_equal(closed_loop_matrix(a, np.zeros((2, 2))), np.kron(np.eye(2), a.A))
    m = closed_loop_matrix(a, L_PAIR)
    assert np.array_equal(m[:2, :2], [[0, 1], [-1, -1]])
    assert np.array_equal(m[:2, 2:], [[0, 0], [0, 1]])
    with pytest.raises(ValueError):
        closed_loop_matrix(a, np.zeros((2, 3)))


@pytest.mark.parametrize("x,N,expected", [
    ([1, 1], 2, 0.0),
    ([1, -1], 2, math.sqrt(2)),
    ([1, 0, -1], 3, math.sqrt(2)),
])
def test_distance_examples(x, N, expected):
    assert distance_to_attractor(x, N, 1) == pytest.approx(expected, abs=1e-15)


def test_distance_shape_check():
    with pytest.raises(ValueError):
        distance_to_attractor([1, 2, 3], 2, 1)


def test_pair_closed_form():
    tr = simulate(integrator(), L_PAIR, [1, -1], 3.0, 1e-3)
    assert tr.times.size == 3001
    assert np.all(np.diff(tr.times) > 0)
    exact = math.sqrt(2) * np.exp(-2 * tr.times)
    assert np.abs(tr.dist - exact).max() <= 1e-6
    fit = fit_rate(tr)
    assert fit.alpha_fit == pytest.approx(2.0, abs=1e-3)
    assert fit.rsq > 0.999
    # stored dist equals the recomputed projection
    assert np.abs(distance_to_attractor(tr.states, 2, 1) - tr.dist).max() <= 1e-12


def test_exact_propagator_agrees():
    a = simulate(integrator(), L_PAIR, [1, -1], 2.0, 0.01)
    b = simulate(integrator(), L_PAIR, [1, -1], 2.0, 0.01, exact=True)
    assert np.abs(a.dist - b.dist).max() < 1e-9


def test_synchronized_start():
    a = harmonic_velocity()
    tr = simulate(a, L_PAIR, [0.3, -0.2, 0.3, -0.2], 5.0)
    assert np.all(tr.dist <= 1e-12)
    fit = fit_rate(tr)
    assert fit.deadbeat and math.isinf(fit.alpha_fit) and fit.M_fit == 1


def test_dt_deadbeat():
    agent = AgentModel([[0.5]], [1], [1], mode=DT)
    L = build_laplacian(WeightedDigraph([[0, 0.25], [0.25, 0]])).matrix
    tr = simulate(agent, L, [1, -1], 10)
    assert tr.dist[0] > 0 and np.all(tr.dist[1:] == 0)
    fit = fit_rate(tr)
    assert fit.deadbeat and fit.alpha_fit == 0


def test_step_bound_enforced():
    m = closed_loop_matrix(integrator(), L_PAIR * 50)
    assert step_bound(m) == pytest.approx(0.001)
    with pytest.raises(ValueError, match="bound"):
        simulate(integrator(), L_PAIR * 50, [1, -1], 1.0, 0.01)
    with pytest.raises(ValueError):
        simulate(integrator(DT), L_PAIR, [1, -1], 2.5)


def test_divergence_truncates():
    agent = AgentModel([[900.0]], [1], [1], mode=DT)
    tr = simulate(agent, L_PAIR, [1, -1], 300)
    assert tr.diverged
    assert tr.times.size < 301
    assert np.all(np.isfinite(tr.states))


def test_decoupled_marginal_fit():
    tr = simulate(integrator(), np.zeros((2, 2)), [1, -1], 10.0)
    assert abs(fit_rate(tr).alpha_fit) < 1e-6


def test_harmonic_fit_eigen_direction():
    # x1 - x2 = (2, -2) excites only the e^{-t} solution of the double root
    tr = simulate(harmonic_velocity(), L_PAIR, [1, -1, -1, 1], 12.0)
    assert fit_rate(tr).alpha_fit == pytest.approx(1.0, abs=1e-3)


def test_harmonic_fit_matches_closed_form():
    # disagreement e = x1 - x2 obeys e' = [[0, 1], [-1, -2]] e, e(0) = (2, 0):
    # e = (2 (1 + t) e^-t, -2 t e^-t), dist = |e| / sqrt(2)
    tr = simulate(harmonic_velocity(), L_PAIR, [1, 0, -1, 0], 12.0, exact=True)
    t = tr.times
    exact = np.sqrt(2) * np.exp(-t) * np.sqrt((1 + t) ** 2 + t**2)
    assert np.abs(tr.dist - exact).max() < 1e-12
    start = math.ceil(0.1 * t.size)
    slope = np.polyfit(t[start:], np.log(exact[start:]), 1)[0]
    fit = fit_rate(tr)
    assert fit.alpha_fit == pytest.approx(-slope, abs=1e-6)
    assert 0.8 < fit.alpha_fit < 1.0


@pytest.mark.xfail(strict=True, reason="the polynomial factor of the double root biases a "
                   "12-unit log fit to about 0.84 for generic initial states")
def test_harmonic_fit_generic_within_ten_percent():
    tr = simulate(harmonic_velocity(), L_PAIR, [1, 0, -1, 0], 12.0)
    assert fit_rate(tr).alpha_fit == pytest.approx(1.0, rel=0.1)


def test_double_integrator_does_not_decay():
    tr = simulate(double_integrator(), L_PAIR, [1, 0, -1, 0], 50.0)
    assert fit_rate(tr).alpha_fit <= 0.01


def test_fit_needs_samples():
    tr = simulate(AgentModel([[1.0]], [1], [1], mode=DT), np.zeros((2, 2)), [1, -1], 5)
    with pytest.raises(ValueError, match="usable samples"):
        fit_rate(tr)


def test_envelope_and_decrease():
    cert = global_lyapunov(integrator(), L_PAIR, 1.5)
    tr = simulate(integrator(), L_PAIR, [1, -1], 3.0, certificate=cert)
    fit = fit_rate(tr)
    assert envelope_check(tr, 1.5, 1.05 * fit.M_fit)[0]
    assert not envelope_check(tr, 2.5, 1.05 * fit.M_fit)[0]
    ok, worst = lyapunov_decrease_check(tr, cert.alpha_used)
    assert ok and worst < 1
    assert not lyapunov_decrease_check(tr, 2.5)[0]
    with pytest.raises(ValueError):
        lyapunov_decrease_check(simulate(integrator(), L_PAIR, [1, -1], 1.0), 1.0)


def test_ivp_reference_star():
    a = harmonic_velocity()
    L = build_laplacian(STAR3).matrix
    p = left_null_vector(L)
    x0 = np.array([1.0, 0.0, -2.0, 1.0, 0.5, 0.5])
    assert np.allclose(ivp_initial_state(p, x0, 2), [1, 0])
    tr = simulate(a, L, x0, 60.0, p=p)
    leader = tr.states[:, :2]
    # the leader receives no input, so it follows the reference exactly
    assert np.abs(leader - tr.reference).max() <= 1e-8
    err = np.abs(tr.states[-1].reshape(3, 2) - tr.reference[-1]).max()
    assert err <= 1e-6 * np.abs(x0.reshape(3, 2) - [1, 0]).max() + 1e-9


def test_ivp_reference_pair_and_sync():
    p = left_null_vector(L_PAIR)
    ref = ivp_reference(integrator(), p, [1, -1], 10, 0.1)
    assert np.abs(ref).max() <= 1e-15
    ref = ivp_reference(harmonic_velocity(), p, [0.7, 0.1, 0.7, 0.1], 1, 0.1)
    assert np.allclose(ref[0], [0.7, 0.1])


def test_cycle_converges_to_average():
    L = build_laplacian(CYCLE3).matrix
    p = left_null_vector(L)
    x0 = np.array([3.0, -1.0, 4.0])
    tr = simulate(integrator(), L, x0, 20.0, p=p)
    assert np.allclose(tr.reference[-1], x0.mean())
    assert np.abs(tr.states[-1] - x0.mean()).max() <= 1e-6 * np.abs(x0 - x0.mean()).max()


def test_csv_layout():
    cert = global_lyapunov(integrator(), L_PAIR, 1.0)
    tr = simulate(integrator(), L_PAIR, [1, -1], 0.2, 0.05, certificate=cert)
    buf = io.StringIO()
    tr.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x_1_1,x_2_1,dist,v"
    row = [float(v) for v in lines[1].split(",")]
    assert row[:4] == [0.0, 1.0, -1.0, math.sqrt(2)]
    # alpha_used = 1.5: P_breve = 1 and V = (x1 - x2)^2 / 2
    assert row[4] == pytest.approx(2.0, rel=1e-14)
    # 17 significant digits round-trip exactly
    assert float(lines[2].split(",")[3]) == tr.dist[1]


def test_trace_without_v_writes_nan():
    tr = SimulationTrace(np.array([0.0]), np.array([[1.0, 1.0]]), np.array([0.0]), 2, 1, "ct")
    buf = io.StringIO()
    tr.write_csv(buf)
    assert buf.getvalue().splitlines()[1].endswith(",nan")
