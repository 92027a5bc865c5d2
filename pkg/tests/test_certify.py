from __future__ import annotations

import numpy as np
import pytest

from synccert.certify import (
    CT,
    DT,
    AgentModel,
    ModeCertificate,
    ModeMatrix,
    block_scaled_certificate,
    complex_condition,
    frequency_condition,
    global_lyapunov,
    lyapunov_condition,
    max_rate,
    mode_matrices,
    mode_matrix,
    pick_alpha_used,
    rate_verdict,
    real_condition,
    solve_lyapunov,
    strictness_slack,
    synthesize_certificate,
    transfer_polynomials,
    verify_certificate,
)
from synccert.errors import CertificateInfeasibleError, NonCoprimeError
from synccert.graph import build_laplacian, feedthrough_laplacian, random_digraph
from synccert.problem import random_agent
from synccert.spectral import eigenvalues, laplacian_spectrum

from conftest import CYCLE3, PAIR, STAR3, double_integrator, harmonic_velocity, integrator, match_error

S3 = np.sqrt(3) / 2


def spectrum_of(graph, agent=None):
    L = build_laplacian(graph).matrix
    if agent is not None and agent.d:
        L = feedthrough_laplacian(L, agent.d)
    return laplacian_spectrum(L)


def scalar_mode(a, mode=CT):
    a = np.array([[a]], dtype=complex)
    from synccert.spectral import complex_to_real
    return ModeMatrix(k=1, lambda_k=0j, A_k=a, A_ek=complex_to_real(a.real, a.imag))


def test_agent_validation():
    with pytest.raises(ValueError):
        AgentModel([[0, 1]], [1], [1])
    with pytest.raises(ValueError):
        AgentModel([[0]], [1, 2], [1])
    with pytest.raises(ValueError):
        AgentModel([[np.nan]], [1], [1])
    with pytest.raises(ValueError):
        AgentModel([[0]], [1], [1], mode="hybrid")
    a = AgentModel([[0]], [[1]], [[1]], mode="continuous")
    assert a.mode == CT and a.B.shape == (1,)


def test_mode_matrix_examples():
    mm = mode_matrix(integrator(), 2.0)
    assert np.allclose(mm.A_k, [[-2]]) and np.allclose(mm.A_ek, np.diag([-2, -2]))
    mm = mode_matrix(integrator(), 1.5 + 1j * S3)
    assert np.allclose(mm.A_ek, [[-1.5, S3], [-S3, -1.5]])
    mm = mode_matrix(double_integrator(), 2.0)
    assert np.allclose(mm.A_k, [[0, 1], [-2, 0]])


def test_condition_examples():
    modes = mode_matrices(integrator(), spectrum_of(PAIR))
    ok, m = complex_condition(modes, 1.5, CT)
    assert ok and np.allclose(m, [-2])

    modes = mode_matrices(double_integrator(), spectrum_of(PAIR))
    ok, m = complex_condition(modes, 0.0, CT)
    assert not ok and abs(m[0]) < 1e-12

    dt_agent = AgentModel([[0.5]], [1], [1], mode=DT)
    ok, m = complex_condition(mode_matrices(dt_agent, spectrum_of(PAIR)), 1.0, DT)
    assert not ok and np.isclose(m[0], 1.5)

    ok, m = real_condition(mode_matrices(integrator(), spectrum_of(CYCLE3)), 1.0, CT)
    assert ok and np.isclose(m[0], -1.5)

    ok, m = real_condition([mode_matrix(harmonic_velocity(), 2.0)], 0.5, CT)
    assert ok and np.isclose(m[0], -1, atol=1e-7)


def test_alpha_domain():
    modes = mode_matrices(integrator(), spectrum_of(PAIR))
    with pytest.raises(ValueError):
        complex_condition(modes, -0.1, CT)
    with pytest.raises(ValueError):
        complex_condition(modes, 0.0, DT)
    with pytest.raises(ValueError):
        complex_condition(modes, 1.5, DT)


def test_certificate_hand_cases():
    c = synthesize_certificate(scalar_mode(-2.0), 1.0, CT)
    assert abs(c.P_k[0, 0] - 0.5) <= 1e-12 and c.Pi_k[0, 0] == 0
    assert abs(c.residual_margin + 1.0) <= 1e-12

    c = synthesize_certificate(scalar_mode(-(1.5 + 1j * S3)), 0.0, CT)
    assert np.isclose(c.P_k[0, 0], 1 / 3) and abs(c.Pi_k[0, 0]) < 1e-15

    # dead-beat mode in discrete time: 0 - 0.25 H = -1
    c = synthesize_certificate(scalar_mode(0.0), 0.5, DT)
    assert np.isclose(c.P_k[0, 0], 4.0)


def test_verify_boundary():
    cert = ModeCertificate(P_k=np.array([[0.5]]), Pi_k=np.zeros((1, 1)))
    assert verify_certificate(cert, scalar_mode(-2.0), 1.0, CT) == pytest.approx(-1.0)
    assert verify_certificate(cert, scalar_mode(-2.0), 2.0, CT) == pytest.approx(0.0)
    zero = AgentModel([[0]], [0], [1])
    modes = mode_matrices(zero, laplacian_spectrum(np.array([[1.0, -1.0], [0.0, 0.0]])))
    ok, certs = lyapunov_condition(modes, 0.0, CT)
    assert not ok and certs == [None]


def test_synthesis_refuses_unstable():
    with pytest.raises(CertificateInfeasibleError):
        synthesize_certificate(scalar_mode(-2.0), 2.5, CT)
    with pytest.raises(CertificateInfeasibleError):
        synthesize_certificate(scalar_mode(-2.0), 2.0, CT)


@pytest.mark.parametrize("agent,graph,alpha", [
    (integrator(), PAIR, 2.0),
    (harmonic_velocity(), PAIR, 1.0),
    (integrator(), STAR3, 1.0),
])
def test_max_rate_examples(agent, graph, alpha):
    assert max_rate(agent, spectrum_of(graph)) == pytest.approx(alpha, abs=1e-7)


def test_strict_at_boundary():
    s = spectrum_of(PAIR)
    a = max_rate(integrator(), s)
    assert not rate_verdict(a, 2.0, CT)
    assert rate_verdict(a, 2.0 - 1e-6, CT)


def test_slack_override(monkeypatch):
    monkeypatch.setenv("SYNC_CERT_TOL", "0.25")
    assert strictness_slack() == 0.25
    assert not rate_verdict(2.0, 1.9, CT)
    monkeypatch.setenv("SYNC_CERT_TOL", "nope")
    with pytest.raises(ValueError):
        strictness_slack()


def test_transfer_polynomials():
    den, num = transfer_polynomials(harmonic_velocity())
    assert np.allclose(den, [1, 0, 1]) and np.allclose(num, [1, 0])
    den, num = transfer_polynomials(double_integrator())
    assert np.allclose(den, [1, 0, 0]) and np.allclose(num, [0, 1])


def test_frequency_examples():
    ok, roots = frequency_condition(integrator(), spectrum_of(PAIR))
    assert ok and np.allclose(roots[0], [-2])
    ok, roots = frequency_condition(double_integrator(), spectrum_of(PAIR))
    assert not ok and match_error(roots[0], [1j * np.sqrt(2), -1j * np.sqrt(2)]) < 1e-7
    ok, roots = frequency_condition(harmonic_velocity(), spectrum_of(PAIR))
    assert ok and match_error(roots[0], [-1, -1]) < 1e-6


def test_frequency_refusals():
    with pytest.raises(NonCoprimeError):
        frequency_condition(AgentModel(np.eye(2), [1, 1], [1, 0]), spectrum_of(PAIR))
    with pytest.raises(ValueError):
        frequency_condition(integrator(DT), spectrum_of(PAIR), 0.5)


def test_feedthrough_rates():
    agent = integrator(d=1.0)
    s = spectrum_of(PAIR, agent)
    assert np.allclose(s.dedup, [2 / 3])
    a = max_rate(agent, s)
    assert rate_verdict(a, 0.6, CT) and not rate_verdict(a, 0.7, CT)


def test_global_lyapunov_pair():
    cert = global_lyapunov(integrator(), build_laplacian(PAIR), 1.5)
    assert cert.alpha_used == pytest.approx(1.75)
    assert cert.A1_bar == pytest.approx(np.array([[-2.0]]))
    assert cert.P_breve == pytest.approx(np.array([[2.0]]))
    assert cert.V_matrix == pytest.approx(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    x = np.array([0.3, -1.1])
    assert cert.V(x) == pytest.approx((x[0] - x[1]) ** 2)
    assert cert.V([2.0, 2.0]) == 0.0
    # along x' = -L x: V' = -4V <= -3.5V
    xdot = -build_laplacian(PAIR).matrix @ x
    vdot = 2 * x @ cert.V_matrix @ xdot
    assert vdot == pytest.approx(-4 * cert.V(x))
    assert vdot <= -2 * cert.alpha_used * cert.V(x)


def test_global_lyapunov_refuses():
    with pytest.raises(CertificateInfeasibleError):
        global_lyapunov(integrator(), build_laplacian(PAIR), 2.5)


def test_alpha_used():
    assert pick_alpha_used(1.0, 3.0, CT) == (2.0, ())
    a, flags = pick_alpha_used(0.5, 0.125, DT)
    assert a == pytest.approx(0.25) and not flags
    a, flags = pick_alpha_used(0.5, 0.0, DT)
    assert a == 0.25 and flags == ("alpha_max_near_zero",)
    a, flags = pick_alpha_used(1.0, 1.0 - 1e-17, DT)
    assert 0 < a < 1


def _random_certified(rng, mode, count):
    out = []
    while len(out) < count:
        N, n = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        agent = random_agent(rng, n, mode)
        L = build_laplacian(random_digraph(rng, N)).matrix
        s = laplacian_spectrum(L)
        a = max_rate(agent, s, mode)
        if mode == CT and a > 0:
            out.append((agent, L, 0.5 * a))
        elif mode == DT and a < 1:
            out.append((agent, L, max(0.5 * (a + 1), 0.05)))
    return out


@pytest.mark.parametrize("mode", [CT, DT])
def test_certificates_are_sound(rng, mode):
    for agent, L, alpha in _random_certified(rng, mode, 25):
        modes = mode_matrices(agent, laplacian_spectrum(L))
        ok, certs = lyapunov_condition(modes, alpha, mode)
        assert ok
        for c, mm in zip(certs, modes):
            assert np.allclose(c.P_k, c.P_k.T, atol=1e-10)
            assert np.allclose(c.Pi_k, -c.Pi_k.T, atol=1e-10)
            assert np.linalg.eigvalsh(c.P_ek)[0] > 0
            assert verify_certificate(c, mm, alpha, mode) < -1e-10
            # Hermitian split solves the complex equation
            h = c.H
            ak = mm.A_k
            if mode == CT:
                r = ak.conj().T @ h + h @ ak + 2 * alpha * h + np.eye(agent.n)
            else:
                r = ak.conj().T @ h @ ak - alpha**2 * h + np.eye(agent.n)
            assert np.linalg.norm(r) <= 1e-8 * np.linalg.norm(h)

        cert = global_lyapunov(agent, L, alpha, mode)
        N, n = L.shape[0], agent.n
        v = cert.V_matrix
        assert np.allclose(v, v.T)
        assert np.linalg.eigvalsh(v)[0] >= -1e-9 * np.abs(v).max()
        ones = np.kron(np.ones((N, 1)), np.eye(n))
        assert np.abs(v @ ones).max() <= 1e-9 * max(1.0, np.abs(v).max())
        assert 0 < cert.c1 <= cert.c2
        assert cert.decrease_margin < 0

        p_breve, halvings, res = block_scaled_certificate(agent, L, alpha, mode)
        assert halvings <= 60 and res < 0
        assert np.allclose(p_breve, p_breve.T)


def test_sandwich(rng):
    cert = global_lyapunov(integrator(), build_laplacian(PAIR), 1.0)
    for _ in range(100):
        x = rng.standard_normal(2)
        d2 = float(np.sum((x - x.mean()) ** 2))
        v = float(cert.V(x))
        assert cert.c1 * d2 <= v * (1 + 1e-12) + 1e-15
        assert v <= cert.c2 * d2 * (1 + 1e-12) + 1e-15


def test_block_scaling_cycle():
    _, halvings, res = block_scaled_certificate(integrator(), build_laplacian(CYCLE3), 1.0)
    assert halvings == 0 and res < 0


def test_real_and_complex_margins_agree(rng):
    for _ in range(50):
        agent = random_agent(rng, int(rng.integers(1, 4)), CT)
        L = build_laplacian(random_digraph(rng, int(rng.integers(2, 7)))).matrix
        modes = mode_matrices(agent, laplacian_spectrum(L))
        _, mc = complex_condition(modes, 0.0, CT)
        _, mr = real_condition(modes, 0.0, CT)
        assert np.allclose(mc, mr, atol=1e-8)
        for mm in modes:
            ev = np.concatenate([np.linalg.eigvals(mm.A_k), np.linalg.eigvals(mm.A_k.conj())])
            assert match_error(eigenvalues(mm.A_ek), ev) <= 1e-8
