"""Synchronization conditions, Lyapunov certificates and the maximal certified rate.

For every non-zero Laplacian eigenvalue lambda_k (one per conjugate pair) the
agent dynamics shifted by that eigenvalue, A_k = A - lambda_k B C, decide
synchronization at rate alpha_star. The checks below are the equivalent ways
of phrasing that decision:

* complex condition: spectral abscissa (CT) / radius (DT) of A_k
* real condition: the same quantity for the real 2n x 2n embedding A_ek
* Lyapunov inequality: structured certificate P_ek = [[P, -Pi], [Pi, P]]
* frequency condition (CT): roots of d(s) + lambda_k n(s)
* global quadratic Lyapunov function V(x) = x^T Psi^T P_hat Psi x
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CertificateInfeasibleError,
    InternalConsistencyError,
    NonCoprimeError,
)
from .graph import Laplacian, feedthrough_laplacian
from .spectral import (
    LaplacianSpectrum,
    complex_to_real,
    deflating_transform,
    eigenvalues,
    laplacian_spectrum,
    spectral_abscissa,
    spectral_radius,
)

CT = "ct"
DT = "dt"
_MODE_ALIASES = {"ct": CT, "continuous": CT, "dt": DT, "discrete": DT}
DEFAULT_SLACK = 1e-9


def strictness_slack() -> float:
    """Slack for strict comparisons; ``SYNC_CERT_TOL`` overrides the default 1e-9."""
    raw = os.environ.get("SYNC_CERT_TOL")
    if not raw:
        return DEFAULT_SLACK
    value = float(raw)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"SYNC_CERT_TOL must be a non-negative number, got {raw!r}")
    return value


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[str(mode).lower()]
    except KeyError:
        raise ValueError(f"mode must be 'ct' or 'dt', got {mode!r}") from None


def check_alpha(alpha_star: float, mode: str) -> None:
    if mode == CT and not alpha_star >= 0:
        raise ValueError(f"continuous-time rate must be >= 0, got {alpha_star}")
    if mode == DT and not 0 < alpha_star <= 1:
        raise ValueError(f"discrete-time rate must lie in (0, 1], got {alpha_star}")


@dataclass(frozen=True, eq=False)
class AgentModel:
    """One SISO agent x' = A x + B u, y = C x + d u (x+ in discrete time)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    d: float = 0.0
    mode: str = CT

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.B, dtype=float)
        c = np.asarray(self.C, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"A must be square and non-empty, got shape {a.shape}")
        n = a.shape[0]
        if b.size != n or (b.ndim == 2 and b.shape[1] != 1):
            raise ValueError(f"B must be a single column of length {n}, got shape {b.shape}")
        if c.size != n or (c.ndim == 2 and c.shape[0] != 1):
            raise ValueError(f"C must be a single row of length {n}, got shape {c.shape}")
        b, c = b.reshape(n), c.reshape(n)
        d = float(self.d)
        for name, v in (("A", a), ("B", b), ("C", c), ("d", np.array(d))):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
        for name, v in (("A", a), ("B", b), ("C", c)):
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mode", normalize_mode(self.mode))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def BC(self) -> np.ndarray:
        return np.outer(self.B, self.C)

    def is_minimal(self) -> bool:
        n = self.n
        ctrb = np.column_stack([np.linalg.matrix_power(self.A, k) @ self.B for k in range(n)])
        obsv = np.vstack([self.C @ np.linalg.matrix_power(self.A, k) for k in range(n)])
        return np.linalg.matrix_rank(ctrb) == n and np.linalg.matrix_rank(obsv) == n

    def to_json(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "d": self.d,
            "mode": self.mode,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AgentModel":
        return cls(data["A"], data["B"], data["C"], data.get("d", 0.0), data.get("mode", CT))


def coupling_matrix(agent: AgentModel, L) -> np.ndarray:
    """The matrix whose spectrum drives the conditions: L, or L_d when d != 0."""
    m = np.asarray(L.matrix if isinstance(L, Laplacian) else L, dtype=float)
    return feedthrough_laplacian(m, agent.d) if agent.d != 0 else m


@dataclass(frozen=True, eq=False)
class ModeMatrix:
    k: int
    lambda_k: complex
    A_k: np.ndarray
    A_ek: np.ndarray


def mode_matrix(agent: AgentModel, lam: complex, k: int = 0) -> ModeMatrix:
    lam = complex(lam)
    bc = agent.BC
    a_k = agent.A - lam * bc
    # A - lambda BC = M + jN with N = -Im(lambda) BC
    a_ek = complex_to_real(agent.A - lam.real * bc, -lam.imag * bc)
    return ModeMatrix(k=k, lambda_k=lam, A_k=a_k, A_ek=a_ek)


def mode_matrices(agent: AgentModel, spectrum: LaplacianSpectrum) -> list[ModeMatrix]:
    return [mode_matrix(agent, lam, k + 1) for k, lam in enumerate(spectrum.dedup)]


def _margin(m, mode: str) -> float:
    return spectral_abscissa(m) if mode == CT else spectral_radius(m)


def _passes(margin: float, alpha_star: float, mode: str, slack: float) -> bool:
    if mode == CT:
        return margin < -alpha_star - slack
    return margin < alpha_star - slack


def complex_condition(modes, alpha_star: float, mode: str):
    """Abscissa (CT) / radius (DT) of each complex A_k against -alpha_star / alpha_star."""
    mode = normalize_mode(mode)
    check_alpha(alpha_star, mode)
    slack = strictness_slack()
    margins = np.array([_margin(mm.A_k, mode) for mm in modes])
    return bool(all(_passes(m, alpha_star, mode, slack) for m in margins)), margins


def real_condition(modes, alpha_star: float, mode: str):
    """As :func:`complex_condition`, from the real embeddings A_ek."""
    mode = normalize_mode(mode)
    check_alpha(alpha_star, mode)
    slack = strictness_slack()
    margins = np.array([_margin(mm.A_ek, mode) for mm in modes])
    return bool(all(_passes(m, alpha_star, mode, slack) for m in margins)), margins


def lyapunov_operator(s, rate: float, mode: str) -> np.ndarray:
    """Matrix of X -> S^* X + X S + 2 rate X (CT) or S^* X S - rate^2 X (DT) on column-major vec(X)."""
    s = np.asarray(s)
    m = s.shape[0]
    eye = np.eye(m)
    sh = s.conj().T
    if mode == CT:
        return np.kron(eye, sh) + np.kron(s.T, eye) + 2.0 * rate * np.eye(m * m)
    return np.kron(s.T, sh) - rate * rate * np.eye(m * m)


def solve_lyapunov(s, rate: float, mode: str, q=None) -> np.ndarray:
    """Solve the rate-shifted Lyapunov equation with right-hand side -Q (default -I).

    Dense solve of the vectorized equation; raises
    :class:`CertificateInfeasibleError` when the operator is singular.
    """
    s = np.asarray(s)
    m = s.shape[0]
    q = np.eye(m) if q is None else np.asarray(q)
    k = lyapunov_operator(s, rate, mode)
    sv = np.linalg.svd(k, compute_uv=False)
    if sv[-1] <= strictness_slack() * max(sv[0], 1.0):
        raise CertificateInfeasibleError(
            "Lyapunov operator is singular: a mode sits on the stability boundary"
        )
    x = np.linalg.solve(k, -q.reshape(-1, order="F"))
    x = x.reshape((m, m), order="F")
    return 0.5 * (x + x.conj().T)


@dataclass(frozen=True, eq=False)
class ModeCertificate:
    P_k: np.ndarray
    Pi_k: np.ndarray
    residual_margin: float = float("nan")
    lambda_k: complex = 0j

    @property
    def P_ek(self) -> np.ndarray:
        return complex_to_real(self.P_k, self.Pi_k)

    @property
    def H(self) -> np.ndarray:
        return self.P_k + 1j * self.Pi_k

    def to_json(self) -> dict:
        return {
            "lambda": [self.lambda_k.real, self.lambda_k.imag],
            "P": self.P_k.tolist(),
            "Pi": self.Pi_k.tolist(),
            "residual_margin": self.residual_margin,
        }


def verify_certificate(cert: ModeCertificate, mm: ModeMatrix, alpha_star: float, mode: str) -> float:
    """Largest eigenvalue of the symmetric LMI residual; negative means certified."""
    mode = normalize_mode(mode)
    p = cert.P_ek
    a = mm.A_ek
    if mode == CT:
        r = p @ a + a.T @ p + 2.0 * alpha_star * p
    else:
        r = a.T @ p @ a - alpha_star**2 * p
    return float(np.linalg.eigvalsh(0.5 * (r + r.T))[-1])


def synthesize_certificate(mm: ModeMatrix, alpha_star: float, mode: str) -> ModeCertificate:
    """Split the Hermitian Lyapunov solution H = P + j Pi for the mode matrix.

    CT solves A_k^* H + H A_k + 2 alpha_star H = -I, DT solves
    A_k^* H A_k - alpha_star^2 H = -I. H is positive definite exactly when
    the rate condition holds for this mode.
    """
    mode = normalize_mode(mode)
    check_alpha(alpha_star, mode)
    h = solve_lyapunov(mm.A_k, alpha_star, mode)
    w = np.linalg.eigvalsh(h)
    if not w[0] > strictness_slack() * max(1.0, abs(w[-1])):
        raise CertificateInfeasibleError(
            f"mode lambda={mm.lambda_k:.6g}: Lyapunov solution is not positive definite "
            f"(min eigenvalue {w[0]:.3e}); rate {alpha_star} cannot be certified"
        )
    p = 0.5 * (h.real + h.real.T)
    pi = 0.5 * (h.imag - h.imag.T)
    cert = ModeCertificate(P_k=p, Pi_k=pi, lambda_k=complex(mm.lambda_k))
    margin = verify_certificate(cert, mm, alpha_star, mode)
    return ModeCertificate(P_k=p, Pi_k=pi, residual_margin=margin, lambda_k=cert.lambda_k)


def lyapunov_condition(modes, alpha_star: float, mode: str):
    """Certificate-synthesis feasibility for every mode; returns (verdict, certs or None)."""
    certs = []
    for mm in modes:
        try:
            cert = synthesize_certificate(mm, alpha_star, mode)
        except CertificateInfeasibleError:
            certs.append(None)
            continue
        certs.append(cert if cert.residual_margin < 0 else None)
    return all(c is not None for c in certs), certs


def max_rate(agent: AgentModel, spectrum: LaplacianSpectrum, mode: str | None = None) -> float:
    """Supremum certified rate: min_k -abscissa(A_k) (CT), max_k radius(A_k) (DT)."""
    mode = normalize_mode(mode or agent.mode)
    modes = mode_matrices(agent, spectrum)
    if mode == CT:
        return float(min(-spectral_abscissa(mm.A_k) for mm in modes))
    return float(max(spectral_radius(mm.A_k) for mm in modes))


def rate_verdict(alpha_max: float, alpha_star: float, mode: str) -> bool:
    slack = strictness_slack()
    if normalize_mode(mode) == CT:
        return alpha_max > alpha_star + slack
    return alpha_max < alpha_star - slack


# -- frequency domain ---------------------------------------------------------

def transfer_polynomials(agent: AgentModel):
    """Coefficients (highest power first) of d(s) = det(sI - A) and n(s) = C adj(sI - A) B.

    Faddeev-LeVerrier: adj(sI - A) = sum_k R_k s^(n-1-k) with R_0 = I,
    c_k = -tr(A R_{k-1}) / k, R_k = A R_{k-1} + c_k I.
    """
    a = agent.A
    n = agent.n
    r = np.eye(n)
    den = [1.0]
    num = [float(agent.C @ r @ agent.B)]
    for k in range(1, n + 1):
        ar = a @ r
        ck = -np.trace(ar) / k
        den.append(ck)
        r = ar + ck * np.eye(n)
        if k < n:
            num.append(float(agent.C @ r @ agent.B))
    return np.array(den), np.array(num)


def polynomial_roots(coeffs) -> np.ndarray:
    """Roots of a polynomial (highest power first) as companion-matrix eigenvalues."""
    c = np.asarray(coeffs)
    c = c / c[0]
    deg = c.size - 1
    if deg == 0:
        return np.zeros(0, dtype=complex)
    comp = np.zeros((deg, deg), dtype=c.dtype)
    comp[0, :] = -c[1:]
    comp[1:, :-1] = np.eye(deg - 1)
    return eigenvalues(comp)


def frequency_condition(agent: AgentModel, spectrum: LaplacianSpectrum, alpha_star: float = 0.0):
    """Every lambda_k must place all roots of d(s) + lambda_k n(s) left of -alpha_star.

    Continuous time only, and only for minimal realizations (otherwise n/d is
    not a coprime factorization and the test is meaningless).
    """
    if agent.mode != CT:
        raise ValueError("the frequency condition applies to continuous-time agents only")
    check_alpha(alpha_star, CT)
    if not agent.is_minimal():
        raise NonCoprimeError("realization is not minimal (controllability or observability rank < n)")
    den, num = transfer_polynomials(agent)
    num = np.concatenate([np.zeros(den.size - num.size), num])
    slack = strictness_slack()
    roots = []
    ok = True
    for lam in spectrum.dedup:
        lam = complex(lam)
        coeffs = den + lam * num if lam.imag != 0 else den + lam.real * num
        rts = polynomial_roots(coeffs)
        roots.append(rts)
        if rts.size and not np.max(rts.real) < -alpha_star - slack:
            ok = False
    return ok, roots


# -- global Lyapunov function --------------------------------------------------

def consensus_projector(N: int, n: int) -> np.ndarray:
    """Psi = (I_N - 11^T/N) kron I_n."""
    return np.kron(np.eye(N) - np.full((N, N), 1.0 / N), np.eye(n))


def deflated_closed_loop(agent: AgentModel, L_bar: np.ndarray) -> np.ndarray:
    """(I kron A) - (L_bar kron BC) restricted to the disagreement coordinates."""
    l1 = L_bar[1:, 1:]
    return np.kron(np.eye(l1.shape[0]), agent.A) - np.kron(l1, agent.BC)


def decrease_residual(a, p, rate: float, mode: str) -> float:
    if mode == CT:
        r = a.T @ p + p @ a + 2.0 * rate * p
    else:
        r = a.T @ p @ a - rate**2 * p
    return float(np.linalg.eigvalsh(0.5 * (r + r.T))[-1])


@dataclass(frozen=True, eq=False)
class RateCertificate:
    alpha_star: float
    alpha_max: float
    verdict: bool
    mode: str
    per_mode: list = field(default_factory=list)
    V_matrix: np.ndarray | None = None
    P_hat: np.ndarray | None = None
    c1: float = float("nan")
    c2: float = float("nan")
    alpha_used: float = float("nan")
    P_breve: np.ndarray | None = None
    A1_bar: np.ndarray | None = None
    T: np.ndarray | None = None
    decrease_margin: float = float("nan")
    flags: tuple = ()

    def V(self, x) -> np.ndarray:
        """V evaluated on a state vector or on the rows of a state matrix.

        Projects first and applies P_hat to the disagreement, so round-off
        scales with |Psi x| rather than |x|.
        """
        x = np.asarray(x, dtype=float)
        n = self.P_hat.shape[0] // self.T.shape[0]
        blocks = x.reshape(x.shape[:-1] + (self.T.shape[0], n))
        dev = (blocks - blocks.mean(axis=-2, keepdims=True)).reshape(x.shape)
        return np.einsum("...i,ij,...j->...", dev, self.P_hat, dev)

    def to_json(self) -> dict:
        return {
            "alpha_star": self.alpha_star,
            "alpha_max": self.alpha_max,
            "verdict": self.verdict,
            "alpha_used": self.alpha_used,
            "c1": self.c1,
            "c2": self.c2,
            "decrease_margin": self.decrease_margin,
            "flags": list(self.flags),
        }


def pick_alpha_used(alpha_star: float, alpha_max: float, mode: str):
    """A rate strictly between alpha_star and alpha_max; returns (alpha, flags)."""
    if mode == CT:
        return 0.5 * (alpha_star + alpha_max), ()
    flags = []
    # a (near) dead-beat alpha_max would push the geometric mean to 0 and make
    # the scaled Lyapunov operator singular; alpha_star / 2 is still in range
    alpha = float(np.sqrt(max(alpha_max, 0.0) * alpha_star))
    if alpha < 0.5 * alpha_star:
        flags.append("alpha_max_near_zero")
        alpha = 0.5 * alpha_star
    if alpha >= 1.0:
        flags.append("alpha_used_clamped")
        alpha = np.nextafter(1.0, 0.0)
    return alpha, tuple(flags)


def global_lyapunov(agent: AgentModel, L, alpha_star: float, mode: str | None = None) -> RateCertificate:
    """Build V(x) = x^T Psi^T P_hat Psi x with V' <= -2 alpha V (CT) / V+ <= alpha^2 V (DT).

    alpha = alpha_used lies strictly between alpha_star and the maximal rate.
    Raises :class:`CertificateInfeasibleError` when alpha_star is not
    certifiable, and :class:`InternalConsistencyError` when the deflated
    Lyapunov equation fails although the spectral verdict is positive.
    """
    mode = normalize_mode(mode or agent.mode)
    check_alpha(alpha_star, mode)
    lm = coupling_matrix(agent, L)
    spectrum = laplacian_spectrum(lm)
    alpha_max = max_rate(agent, spectrum, mode)
    if not rate_verdict(alpha_max, alpha_star, mode):
        raise CertificateInfeasibleError(
            f"rate {alpha_star} is not certifiable (maximal rate {alpha_max:.6g})"
        )
    modes = mode_matrices(agent, spectrum)
    per_mode = [synthesize_certificate(mm, alpha_star, mode) for mm in modes]
    alpha_used, flags = pick_alpha_used(alpha_star, alpha_max, mode)

    N, n = lm.shape[0], agent.n
    dt = deflating_transform(lm)
    a1 = deflated_closed_loop(agent, dt.L_bar)
    try:
        p_breve = solve_lyapunov(a1, alpha_used, mode).real
    except CertificateInfeasibleError as exc:
        raise InternalConsistencyError(f"deflated Lyapunov equation failed: {exc}") from exc
    w = np.linalg.eigvalsh(p_breve)
    margin = decrease_residual(a1, p_breve, alpha_used, mode)
    if not (w[0] > 0 and margin < 0):
        raise InternalConsistencyError(
            f"deflated certificate invalid (min eig {w[0]:.3e}, residual {margin:.3e})"
        )
    tk = np.kron(dt.T, np.eye(n))
    inner = np.eye(N * n)
    inner[n:, n:] = p_breve
    p_hat = tk @ inner @ tk.T
    p_hat = 0.5 * (p_hat + p_hat.T)
    psi = consensus_projector(N, n)
    v = psi.T @ p_hat @ psi
    v = 0.5 * (v + v.T)
    ev = np.linalg.eigvalsh(p_hat)
    return RateCertificate(
        alpha_star=alpha_star,
        alpha_max=alpha_max,
        verdict=True,
        mode=mode,
        per_mode=per_mode,
        V_matrix=v,
        P_hat=p_hat,
        c1=float(ev[0]),
        c2=float(ev[-1]),
        alpha_used=float(alpha_used),
        P_breve=p_breve,
        A1_bar=a1,
        T=dt.T,
        decrease_margin=margin,
        flags=flags,
    )


def _pair_similarity(block: np.ndarray):
    """(S, lam) with block = S^-1 [[a, -b], [b, a]] S and lam = a + jb, b > 0."""
    w, vecs = np.linalg.eig(block)
    i = int(np.argmin(w.imag))  # eigenvalue a - jb
    x = vecs[:, i]
    xm = np.column_stack([x.real, x.imag])
    return np.linalg.inv(xm), complex(w[i].real, -w[i].imag)


def block_scaled_certificate(agent: AgentModel, L, alpha_star: float, mode: str | None = None,
                             max_halvings: int = 60):
    """Assemble a deflated certificate from per-block certificates by scaling.

    Each diagonal block F_k of the deflated closed loop gets a certificate
    P_bar_k built from the per-mode structured certificate (through the real
    similarity that brings a 2x2 Laplacian block to rotation form). Block k of
    nu is weighted by eps^(nu-k) and eps is halved from 1 until the
    block-diagonal matrix certifies the whole upper block-triangular
    matrix. Negativity is tested in balanced coordinates D^-1 (.) D^-1 with
    D = diag(sqrt(eps^(nu-k))) so tiny weights do not drown in round-off.

    Returns ``(P_breve, halvings, residual)``.
    """
    mode = normalize_mode(mode or agent.mode)
    check_alpha(alpha_star, mode)
    lm = coupling_matrix(agent, L)
    n = agent.n
    dt = deflating_transform(lm)
    a1 = deflated_closed_loop(agent, dt.L_bar)
    blocks = dt.blocks
    p_bars = []
    sizes = []
    for start, size in blocks:
        lam_block = dt.L_bar[start:start + size, start:start + size]
        if size == 1:
            mm = mode_matrix(agent, lam_block[0, 0])
            cert = synthesize_certificate(mm, alpha_star, mode)
            p_bars.append(cert.P_k)
        else:
            s, lam = _pair_similarity(lam_block)
            mm = mode_matrix(agent, lam)
            cert = synthesize_certificate(mm, alpha_star, mode)
            sk = np.kron(s, np.eye(n))
            p_bars.append(sk.T @ cert.P_ek @ sk)
        sizes.append(size * n)
    nu = len(blocks)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    p_bar = np.zeros_like(a1)
    for k, pb in enumerate(p_bars):
        p_bar[offsets[k]:offsets[k + 1], offsets[k]:offsets[k + 1]] = pb

    eps = 1.0
    for halvings in range(max_halvings + 1):
        # log-weights; block k carries eps^(nu-1-k) (0-based)
        logw = np.repeat([(nu - 1 - k) * np.log(eps) for k in range(nu)], sizes)
        ratio = np.exp(0.5 * (logw[:, None] - logw[None, :]))
        a_bal = a1 * ratio  # D A D^-1 with D = diag(sqrt(w))
        res = decrease_residual(a_bal, p_bar, alpha_star, mode)
        if res < 0:
            weights = np.exp(logw)
            p_breve = p_bar * np.sqrt(np.outer(weights, weights))
            return p_breve, halvings, res
        eps *= 0.5
    raise InternalConsistencyError(
        f"block scaling did not certify the deflated matrix within {max_halvings} halvings"
    )
