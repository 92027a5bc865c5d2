"""Pure-numpy reference implementation of the hot kernels.

The compiled module ``synccert._kernels`` exposes the same four functions
with identical signatures; ``synccert.kernels`` picks one at import time.
"""
from __future__ import annotations

import numpy as np

from .errors import EigensolverError

EPS = np.finfo(float).eps


def _house(x):
    """Householder vector v (v[0] = 1) and beta with (I - beta v v^T) x = ±|x| e1."""
    v = np.array(x, dtype=float)
    amax = float(np.max(np.abs(v))) if v.size else 0.0
    if amax > 0.0:
        v /= amax  # v and beta are scale invariant; this keeps the squares representable
    x0 = float(v[0])
    sigma = float(v[1:] @ v[1:])
    v[0] = 1.0
    if sigma == 0.0:
        return v, 0.0
    mu = np.sqrt(x0 * x0 + sigma)
    if x0 <= 0.0:
        v0 = x0 - mu
    else:
        v0 = -sigma / (x0 + mu)
    beta = 2.0 * v0 * v0 / (sigma + v0 * v0)
    v[1:] /= v0
    return v, beta


def _pow2_scale(a):
    """a / 2^e with max |entry| in [0.5, 1); exact, so tiny or huge inputs stay representable."""
    a = np.asarray(a, dtype=float)
    amax = float(np.max(np.abs(a))) if a.size else 0.0
    if amax == 0.0 or not np.isfinite(amax):
        return a, 0
    expo = int(np.frexp(amax)[1])
    return np.ldexp(a, -expo), expo


def hessenberg(a):
    """Upper Hessenberg H and orthogonal Q with a = Q H Q^T."""
    h = np.array(a, dtype=float, copy=True)
    m = h.shape[0]
    q = np.eye(m)
    for k in range(m - 2):
        v, beta = _house(h[k + 1:, k])
        if beta == 0.0:
            continue
        h[k + 1:, k:] -= beta * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= beta * np.outer(h[:, k + 1:] @ v, v)
        q[:, k + 1:] -= beta * np.outer(q[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h, q


def _split_2x2(t, z, p):
    """Triangularize the 2x2 diagonal block at p when its eigenvalues are real."""
    a, b = t[p, p], t[p, p + 1]
    c, d = t[p + 1, p], t[p + 1, p + 1]
    if c == 0.0:
        return
    half = 0.5 * (a - d)
    disc = half * half + b * c
    if disc < 0.0:
        return
    root = np.sqrt(disc)
    mu = 0.5 * (a + d) + (root if half >= 0.0 else -root)
    # two candidate eigenvectors for mu; keep the larger one
    v1 = np.array([b, mu - a])
    v2 = np.array([mu - d, c])
    v = v1 if np.hypot(*v1) >= np.hypot(*v2) else v2
    nv = np.hypot(*v)
    if nv == 0.0:
        return
    cs, sn = v[0] / nv, v[1] / nv
    g = np.array([[cs, -sn], [sn, cs]])
    t[p:p + 2, p:] = g.T @ t[p:p + 2, p:]
    t[:p + 2, p:p + 2] = t[:p + 2, p:p + 2] @ g
    z[:, p:p + 2] = z[:, p:p + 2] @ g
    t[p + 1, p] = 0.0


def real_schur(a, max_sweeps: int | None = None):
    """Real Schur form by Hessenberg reduction and implicit double-shift QR.

    Returns ``(t, z)`` with ``a = z @ t @ z.T``, ``z`` orthogonal and ``t``
    quasi upper triangular. Every 2x2 diagonal block of ``t`` holds a complex
    conjugate pair; real eigenvalue pairs are split into 1x1 blocks.
    """
    a, expo = _pow2_scale(a)
    t, z = hessenberg(a)
    m = t.shape[0]
    if max_sweeps is None:
        max_sweeps = 100 * max(m, 1)
    hi = m - 1
    its = 0
    total = 0
    while hi >= 0:
        if hi == 0:
            break
        # locate the start of the active unreduced block
        l = hi
        while l > 0:
            s = abs(t[l - 1, l - 1]) + abs(t[l, l])
            if s == 0.0:
                s = np.abs(t[: hi + 1, : hi + 1]).sum()
            if abs(t[l, l - 1]) <= EPS * s:
                t[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            hi -= 1
            its = 0
            continue
        if l == hi - 1:
            _split_2x2(t, z, l)
            hi -= 2
            its = 0
            continue
        total += 1
        its += 1
        if total > max_sweeps:
            raise EigensolverError(
                f"QR iteration did not converge within {max_sweeps} sweeps"
            )
        if its == 10:
            s = abs(t[l + 1, l]) + abs(t[l + 2, l + 1])
            h11 = 0.75 * s + t[l, l]
            h12, h21, h22 = -0.4375 * s, s, h11
        elif its == 20:
            s = abs(t[hi, hi - 1]) + abs(t[hi - 1, hi - 2])
            h11 = 0.75 * s + t[hi, hi]
            h12, h21, h22 = -0.4375 * s, s, h11
            its = 0
        else:
            h11, h12 = t[hi - 1, hi - 1], t[hi - 1, hi]
            h21, h22 = t[hi, hi - 1], t[hi, hi]
        ssum = h11 + h22
        sprod = h11 * h22 - h12 * h21
        x = t[l, l] * t[l, l] + t[l, l + 1] * t[l + 1, l] - ssum * t[l, l] + sprod
        y = t[l + 1, l] * (t[l, l] + t[l + 1, l + 1] - ssum)
        w = t[l + 1, l] * t[l + 2, l + 1]
        for j in range(l, hi - 1):
            v, beta = _house(np.array([x, y, w]))
            if beta != 0.0:
                c0 = max(l, j - 1)
                t[j:j + 3, c0:] -= beta * np.outer(v, v @ t[j:j + 3, c0:])
                r1 = min(j + 3, hi) + 1
                t[:r1, j:j + 3] -= beta * np.outer(t[:r1, j:j + 3] @ v, v)
                z[:, j:j + 3] -= beta * np.outer(z[:, j:j + 3] @ v, v)
            if j > l:
                t[j + 1, j - 1] = 0.0
                t[j + 2, j - 1] = 0.0
            x = t[j + 1, j]
            y = t[j + 2, j]
            if j < hi - 2:
                w = t[j + 3, j]
        v, beta = _house(np.array([x, y]))
        if beta != 0.0:
            t[hi - 1:hi + 1, hi - 2:] -= beta * np.outer(v, v @ t[hi - 1:hi + 1, hi - 2:])
            t[: hi + 1, hi - 1:hi + 1] -= beta * np.outer(t[: hi + 1, hi - 1:hi + 1] @ v, v)
            z[:, hi - 1:hi + 1] -= beta * np.outer(z[:, hi - 1:hi + 1] @ v, v)
        t[hi, hi - 2] = 0.0
    # clean the strictly lower part outside the subdiagonal
    for i in range(2, m):
        t[i, : i - 1] = 0.0
    return np.ldexp(t, expo), z


@np.errstate(over="ignore", invalid="ignore")  # divergence is detected, not warned about
def rk4_linear(mat, x0, dt: float, nsteps: int):
    """Classical RK4 for x' = mat @ x; returns (states, n_valid).

    Integration stops at the first non-finite state; rows past ``n_valid``
    are left as NaN.
    """
    mat = np.ascontiguousarray(mat, dtype=float)
    x = np.array(x0, dtype=float)
    out = np.full((nsteps + 1, x.size), np.nan)
    out[0] = x
    half = 0.5 * dt
    sixth = dt / 6.0
    for k in range(nsteps):
        k1 = mat @ x
        k2 = mat @ (x + half * k1)
        k3 = mat @ (x + half * k2)
        k4 = mat @ (x + dt * k3)
        x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return out, k + 1
        out[k + 1] = x
    return out, nsteps + 1


@np.errstate(over="ignore", invalid="ignore")
def iterate_linear(mat, x0, nsteps: int):
    """x[k+1] = mat @ x[k]; returns (states, n_valid) like :func:`rk4_linear`."""
    mat = np.ascontiguousarray(mat, dtype=float)
    x = np.array(x0, dtype=float)
    out = np.full((nsteps + 1, x.size), np.nan)
    out[0] = x
    for k in range(nsteps):
        x = mat @ x
        if not np.all(np.isfinite(x)):
            return out, k + 1
        out[k + 1] = x
    return out, nsteps + 1
