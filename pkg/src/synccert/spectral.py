"""Eigenvalue machinery built on the real Schur kernel.

Real matrices go through our own Hessenberg + Francis double-shift QR
(``synccert.kernels``). Complex matrices are handed to LAPACK via numpy;
this keeps the complex-matrix route independent of the real one, which
matters because several checks compare the two.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InconsistentLaplacianError
from .graph import Laplacian


def schur_blocks(t: np.ndarray) -> list[tuple[int, int]]:
    """(start, size) of each diagonal block of a quasi-triangular matrix."""
    m = t.shape[0]
    blocks = []
    i = 0
    while i < m:
        if i + 1 < m and t[i + 1, i] != 0.0:
            blocks.append((i, 2))
            i += 2
        else:
            blocks.append((i, 1))
            i += 1
    return blocks


def block_eigenvalues(b: np.ndarray) -> list[complex]:
    """Eigenvalues of a 1x1 or 2x2 Schur block, conjugates exact."""
    if b.shape[0] == 1:
        return [complex(b[0, 0])]
    a, bb, c, d = b[0, 0], b[0, 1], b[1, 0], b[1, 1]
    half = 0.5 * (a - d)
    disc = half * half + bb * c
    mid = 0.5 * (a + d)
    if disc >= 0:
        r = np.sqrt(disc)
        return [complex(mid - r), complex(mid + r)]
    im = np.sqrt(-disc)
    return [complex(mid, im), complex(mid, -im)]


def _sorted(ev) -> np.ndarray:
    ev = np.asarray(ev, dtype=complex)
    order = np.lexsort((ev.imag, ev.real))
    return ev[order]


def _check_square(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")


def eigenvalues(m) -> np.ndarray:
    """Full spectrum sorted by (Re, Im), conjugate pairs exactly conjugate.

    Raises :class:`~synccert.errors.EigensolverError` when the QR sweeps do
    not converge.
    """
    m = np.asarray(m)
    _check_square(m)
    if np.iscomplexobj(m):
        if np.all(m.imag == 0):
            m = m.real
        else:
            return _sorted(np.linalg.eigvals(m))
    m = m.astype(float)
    if m.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    t, _ = kernels.real_schur(m)
    ev = []
    for i, size in schur_blocks(t):
        ev.extend(block_eigenvalues(t[i:i + size, i:i + size]))
    return _sorted(ev)


def spectral_abscissa(m) -> float:
    return float(np.max(eigenvalues(m).real))


def spectral_radius(m) -> float:
    return float(np.max(np.abs(eigenvalues(m))))


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    all_eigenvalues: np.ndarray
    dedup: np.ndarray
    nu: int
    n_c: int
    zero_multiplicity: int

    def to_json(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.all_eigenvalues],
            "dedup": [[float(z.real), float(z.imag)] for z in self.dedup],
            "nu": self.nu,
            "n_c": self.n_c,
            "zero_multiplicity": self.zero_multiplicity,
        }


def _mat(L) -> np.ndarray:
    return np.asarray(L.matrix if isinstance(L, Laplacian) else L, dtype=float)


def default_group_tol(m: np.ndarray) -> float:
    return 1e-7 * max(1.0, float(np.linalg.norm(m, 2)))


def laplacian_spectrum(L, group_tol: float | None = None) -> LaplacianSpectrum:
    """Drop one zero eigenvalue and keep one member (Im >= 0) of each conjugate pair.

    Repeated real eigenvalues are kept with their multiplicity. Accepts any
    square matrix with zero row sums, so the feedthrough Laplacian works too.
    """
    m = _mat(L)
    tol = default_group_tol(m) if group_tol is None else group_tol
    ev = eigenvalues(m)
    izero = int(np.argmin(np.abs(ev)))
    if abs(ev[izero]) > tol:
        raise InconsistentLaplacianError(
            f"no eigenvalue within {tol:.2e} of zero (closest {ev[izero]:.3e}); "
            "matrix does not have zero row sums"
        )
    zero_mult = int(np.sum(np.abs(ev) <= tol))
    rest = np.delete(ev, izero)
    is_real = np.abs(rest.imag) <= 0.5 * tol
    reals = [complex(z.real, 0.0) for z in rest[is_real]]
    upper = [z for z in rest[~is_real] if z.imag > 0]
    lower = [z for z in rest[~is_real] if z.imag < 0]
    pairs = []
    for z in upper:
        if lower:
            j = int(np.argmin([abs(z - w.conjugate()) for w in lower]))
            if abs(z - lower[j].conjugate()) <= tol:
                lower.pop(j)
                pairs.append(z)
                continue
        reals.append(z)  # unpaired: keep as is
    # leftover lower members without a partner are reflected to Im >= 0
    reals.extend(w.conjugate() for w in lower)
    dedup = _sorted(reals + pairs)
    n_c = len(pairs)
    return LaplacianSpectrum(
        all_eigenvalues=ev,
        dedup=dedup,
        nu=m.shape[0] - 1 - n_c,
        n_c=n_c,
        zero_multiplicity=zero_mult,
    )


@dataclass(frozen=True, eq=False)
class DeflatingTransform:
    T: np.ndarray
    L_bar: np.ndarray

    @property
    def blocks(self) -> list[tuple[int, int]]:
        """(start, size) of the diagonal blocks of the trailing part of L_bar (offset 1)."""
        return [(i + 1, s) for i, s in schur_blocks(self.L_bar[1:, 1:])]


def consensus_reflector(n: int) -> np.ndarray:
    """Symmetric orthogonal Householder matrix whose first column is 1/sqrt(n)."""
    u = np.full(n, 1.0 / np.sqrt(n))
    v = -u
    v[0] += 1.0
    vv = float(v @ v)
    h = np.eye(n)
    if vv > 0.0:
        h -= (2.0 / vv) * np.outer(v, v)
    h[:, 0] = u  # exact in floating point
    return h


def deflating_transform(L) -> DeflatingTransform:
    """Orthogonal T with first column 1/sqrt(N) such that T^T L T is block upper triangular.

    The reflector sends e1 to the consensus direction; since L 1 = 0 this
    zeroes the first column below (1, 1). The trailing block is then put in
    real Schur form and the two transforms are composed.
    """
    m = _mat(L)
    n = m.shape[0]
    h = consensus_reflector(n)
    g = h.T @ m @ h
    t1, z1 = kernels.real_schur(g[1:, 1:])
    q = np.eye(n)
    q[1:, 1:] = z1
    T = h @ q
    T[:, 0] = h[:, 0]
    L_bar = T.T @ m @ T
    L_bar[1:, 0] = 0.0
    L_bar[1:, 1:] = t1
    return DeflatingTransform(T=T, L_bar=L_bar)


def complex_to_real(m, n) -> np.ndarray:
    """[[M, -N], [N, M]]: the real 2m x 2m matrix whose spectrum is sigma(M+jN) U sigma(M-jN)."""
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    if m.shape != n.shape or m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"shape mismatch: {m.shape} vs {n.shape}")
    return np.block([[m, -n], [n, m]])
