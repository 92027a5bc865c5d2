# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: real Schur QR sweeps and fixed-step propagation.

Mirrors ``synccert._kernels_py`` function for function.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, hypot, isfinite

from ._kernels_py import _pow2_scale
from .errors import EigensolverError

cnp.import_array()

cdef double EPS = np.finfo(float).eps


cdef inline double _house3(double* x, int k, double* v) noexcept nogil:
    # Householder vector (v[0] = 1) for the length-k vector x; returns beta
    cdef double sigma = 0.0, x0, mu, v0, amax = 0.0
    cdef int i
    for i in range(k):
        if fabs(x[i]) > amax:
            amax = fabs(x[i])
    if amax == 0.0:
        amax = 1.0
    # v and beta are scale invariant; scaling keeps the squares representable
    for i in range(1, k):
        v[i] = x[i] / amax
        sigma += v[i] * v[i]
    v[0] = 1.0
    if sigma == 0.0:
        return 0.0
    x0 = x[0] / amax
    mu = sqrt(x0 * x0 + sigma)
    if x0 <= 0.0:
        v0 = x0 - mu
    else:
        v0 = -sigma / (x0 + mu)
    for i in range(1, k):
        v[i] /= v0
    return 2.0 * v0 * v0 / (sigma + v0 * v0)


cdef inline void _reflect_rows(double[:, ::1] a, int r0, int k, int c0, int c1,
                               double* v, double beta) noexcept nogil:
    # a[r0:r0+k, c0:c1] -= beta * v (v^T a[...])
    cdef int i, j
    cdef double s
    for j in range(c0, c1):
        s = 0.0
        for i in range(k):
            s += v[i] * a[r0 + i, j]
        s *= beta
        for i in range(k):
            a[r0 + i, j] -= s * v[i]


cdef inline void _reflect_cols(double[:, ::1] a, int r0, int r1, int c0, int k,
                               double* v, double beta) noexcept nogil:
    # a[r0:r1, c0:c0+k] -= beta * (a[...] v) v^T
    cdef int i, j
    cdef double s
    for i in range(r0, r1):
        s = 0.0
        for j in range(k):
            s += a[i, c0 + j] * v[j]
        s *= beta
        for j in range(k):
            a[i, c0 + j] -= s * v[j]


def hessenberg(a):
    h_arr = np.array(a, dtype=float, order="C", copy=True)
    cdef double[:, ::1] h = h_arr
    cdef int m = h.shape[0]
    q_arr = np.eye(m)
    cdef double[:, ::1] q = q_arr
    cdef double[::1] xbuf = np.empty(max(m, 1))
    cdef double[::1] vbuf = np.empty(max(m, 1))
    cdef int k, i, len_
    cdef double beta
    with nogil:
        for k in range(m - 2):
            len_ = m - k - 1
            for i in range(len_):
                xbuf[i] = h[k + 1 + i, k]
            beta = _house3(&xbuf[0], len_, &vbuf[0])
            if beta == 0.0:
                continue
            _reflect_rows(h, k + 1, len_, k, m, &vbuf[0], beta)
            _reflect_cols(h, 0, m, k + 1, len_, &vbuf[0], beta)
            _reflect_cols(q, 0, m, k + 1, len_, &vbuf[0], beta)
            for i in range(k + 2, m):
                h[i, k] = 0.0
    return h_arr, q_arr


cdef void _split_2x2(double[:, ::1] t, double[:, ::1] z, int p, int m) noexcept nogil:
    cdef double a = t[p, p], b = t[p, p + 1], c = t[p + 1, p], d = t[p + 1, p + 1]
    cdef double half, disc, root, mu, v0, v1, w0, w1, nv, cs, sn, x, y
    cdef int j
    if c == 0.0:
        return
    half = 0.5 * (a - d)
    disc = half * half + b * c
    if disc < 0.0:
        return
    root = sqrt(disc)
    mu = 0.5 * (a + d) + (root if half >= 0.0 else -root)
    v0 = b
    v1 = mu - a
    w0 = mu - d
    w1 = c
    if hypot(v0, v1) < hypot(w0, w1):
        v0 = w0
        v1 = w1
    nv = hypot(v0, v1)
    if nv == 0.0:
        return
    cs = v0 / nv
    sn = v1 / nv
    # rows: G^T t
    for j in range(p, m):
        x = t[p, j]
        y = t[p + 1, j]
        t[p, j] = cs * x + sn * y
        t[p + 1, j] = -sn * x + cs * y
    # cols: t G
    for j in range(p + 2):
        x = t[j, p]
        y = t[j, p + 1]
        t[j, p] = cs * x + sn * y
        t[j, p + 1] = -sn * x + cs * y
    for j in range(m):
        x = z[j, p]
        y = z[j, p + 1]
        z[j, p] = cs * x + sn * y
        z[j, p + 1] = -sn * x + cs * y
    t[p + 1, p] = 0.0


def real_schur(a, max_sweeps=None):
    a, expo = _pow2_scale(a)
    t_arr, z_arr = hessenberg(a)
    cdef double[:, ::1] t = t_arr
    cdef double[:, ::1] z = z_arr
    cdef int m = t.shape[0]
    cdef long budget = 100 * max(m, 1) if max_sweeps is None else max_sweeps
    cdef int hi = m - 1, l, j, c0, r1, i, ii
    cdef long its = 0, total = 0
    cdef double s, h11, h12, h21, h22, ssum, sprod, beta
    cdef double xv[3]
    cdef double vv[3]
    cdef bint failed = False
    with nogil:
        while hi > 0:
            l = hi
            while l > 0:
                s = fabs(t[l - 1, l - 1]) + fabs(t[l, l])
                if s == 0.0:
                    for i in range(hi + 1):
                        for ii in range(hi + 1):
                            s += fabs(t[i, ii])
                if fabs(t[l, l - 1]) <= EPS * s:
                    t[l, l - 1] = 0.0
                    break
                l -= 1
            if l == hi:
                hi -= 1
                its = 0
                continue
            if l == hi - 1:
                _split_2x2(t, z, l, m)
                hi -= 2
                its = 0
                continue
            total += 1
            its += 1
            if total > budget:
                failed = True
                break
            if its == 10:
                s = fabs(t[l + 1, l]) + fabs(t[l + 2, l + 1])
                h11 = 0.75 * s + t[l, l]
                h12 = -0.4375 * s
                h21 = s
                h22 = h11
            elif its == 20:
                s = fabs(t[hi, hi - 1]) + fabs(t[hi - 1, hi - 2])
                h11 = 0.75 * s + t[hi, hi]
                h12 = -0.4375 * s
                h21 = s
                h22 = h11
                its = 0
            else:
                h11 = t[hi - 1, hi - 1]
                h12 = t[hi - 1, hi]
                h21 = t[hi, hi - 1]
                h22 = t[hi, hi]
            ssum = h11 + h22
            sprod = h11 * h22 - h12 * h21
            xv[0] = t[l, l] * t[l, l] + t[l, l + 1] * t[l + 1, l] - ssum * t[l, l] + sprod
            xv[1] = t[l + 1, l] * (t[l, l] + t[l + 1, l + 1] - ssum)
            xv[2] = t[l + 1, l] * t[l + 2, l + 1]
            for j in range(l, hi - 1):
                beta = _house3(xv, 3, vv)
                if beta != 0.0:
                    c0 = l if l > j - 1 else j - 1
                    _reflect_rows(t, j, 3, c0, m, vv, beta)
                    r1 = (j + 3 if j + 3 < hi else hi) + 1
                    _reflect_cols(t, 0, r1, j, 3, vv, beta)
                    _reflect_cols(z, 0, m, j, 3, vv, beta)
                if j > l:
                    t[j + 1, j - 1] = 0.0
                    t[j + 2, j - 1] = 0.0
                xv[0] = t[j + 1, j]
                xv[1] = t[j + 2, j]
                if j < hi - 2:
                    xv[2] = t[j + 3, j]
            beta = _house3(xv, 2, vv)
            if beta != 0.0:
                _reflect_rows(t, hi - 1, 2, hi - 2, m, vv, beta)
                _reflect_cols(t, 0, hi + 1, hi - 1, 2, vv, beta)
                _reflect_cols(z, 0, m, hi - 1, 2, vv, beta)
            t[hi, hi - 2] = 0.0
        if not failed:
            for i in range(2, m):
                for ii in range(i - 1):
                    t[i, ii] = 0.0
    if failed:
        raise EigensolverError(f"QR iteration did not converge within {budget} sweeps")
    return np.ldexp(t_arr, expo), z_arr


cdef inline void _matvec(const double[:, ::1] a, double* x, double* y, int m) noexcept nogil:
    cdef int i, j
    cdef double s
    for i in range(m):
        s = 0.0
        for j in range(m):
            s += a[i, j] * x[j]
        y[i] = s


def rk4_linear(mat, x0, double dt, Py_ssize_t nsteps):
    cdef const double[:, ::1] a = np.ascontiguousarray(mat, dtype=float)
    cdef int m = a.shape[0]
    out_arr = np.full((nsteps + 1, m), np.nan)
    cdef double[:, ::1] out = out_arr
    work_arr = np.zeros((6, m))
    cdef double[:, ::1] w = work_arr
    cdef double[::1] x = np.array(x0, dtype=float)
    cdef double half = 0.5 * dt, sixth = dt / 6.0
    cdef Py_ssize_t k, n_valid = nsteps + 1
    cdef int i
    cdef bint ok
    for i in range(m):
        out[0, i] = x[i]
    with nogil:
        for k in range(nsteps):
            _matvec(a, &x[0], &w[0, 0], m)
            for i in range(m):
                w[4, i] = x[i] + half * w[0, i]
            _matvec(a, &w[4, 0], &w[1, 0], m)
            for i in range(m):
                w[4, i] = x[i] + half * w[1, i]
            _matvec(a, &w[4, 0], &w[2, 0], m)
            for i in range(m):
                w[4, i] = x[i] + dt * w[2, i]
            _matvec(a, &w[4, 0], &w[3, 0], m)
            ok = True
            for i in range(m):
                x[i] = x[i] + sixth * (w[0, i] + 2.0 * w[1, i] + 2.0 * w[2, i] + w[3, i])
                if not isfinite(x[i]):
                    ok = False
            if not ok:
                n_valid = k + 1
                break
            for i in range(m):
                out[k + 1, i] = x[i]
    return out_arr, n_valid


def iterate_linear(mat, x0, Py_ssize_t nsteps):
    cdef const double[:, ::1] a = np.ascontiguousarray(mat, dtype=float)
    cdef int m = a.shape[0]
    out_arr = np.full((nsteps + 1, m), np.nan)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] x = np.array(x0, dtype=float)
    cdef double[::1] y = np.zeros(m)
    cdef Py_ssize_t k, n_valid = nsteps + 1
    cdef int i
    cdef bint ok
    for i in range(m):
        out[0, i] = x[i]
    with nogil:
        for k in range(nsteps):
            _matvec(a, &x[0], &y[0], m)
            ok = True
            for i in range(m):
                x[i] = y[i]
                if not isfinite(x[i]):
                    ok = False
            if not ok:
                n_valid = k + 1
                break
            for i in range(m):
                out[k + 1, i] = x[i]
    return out_arr, n_valid
