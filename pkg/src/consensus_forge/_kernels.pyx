# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the numerical kernels (see ``_kernels_py``)."""

import numpy as np

from libc.math cimport hypot, fabs, isfinite, INFINITY


cdef double _inv_row_norm(double complex[:, ::1] M, double complex[:, ::1] Inv, Py_ssize_t n) nogil:
    """1 / ||inv(M)||_inf by Gauss-Jordan with partial pivoting; 0 if singular.

    ``M`` is overwritten.
    """
    cdef Py_ssize_t i, j, r, p
    cdef double best, mag, s, worst
    cdef double complex piv, f, tmp
    for i in range(n):
        for j in range(n):
            Inv[i, j] = 1.0 if i == j else 0.0
    for i in range(n):
        p = i
        best = hypot(M[i, i].real, M[i, i].imag)
        for r in range(i + 1, n):
            mag = hypot(M[r, i].real, M[r, i].imag)
            if mag > best:
                best = mag
                p = r
        if best == 0.0:
            return 0.0
        if p != i:
            for j in range(n):
                tmp = M[i, j]; M[i, j] = M[p, j]; M[p, j] = tmp
                tmp = Inv[i, j]; Inv[i, j] = Inv[p, j]; Inv[p, j] = tmp
        piv = M[i, i]
        for j in range(n):
            M[i, j] = M[i, j] / piv
            Inv[i, j] = Inv[i, j] / piv
        for r in range(n):
            if r == i:
                continue
            f = M[r, i]
            if f.real == 0.0 and f.imag == 0.0:
                continue
            for j in range(n):
                M[r, j] = M[r, j] - f * M[i, j]
                Inv[r, j] = Inv[r, j] - f * Inv[i, j]
    worst = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += hypot(Inv[i, j].real, Inv[i, j].imag)
        if s > worst:
            worst = s
    if not isfinite(worst) or worst == 0.0:
        return 0.0
    return 1.0 / worst


def inverse_row_norms(mats):
    cdef double complex[:, :, ::1] H = np.ascontiguousarray(mats, dtype=complex)
    cdef Py_ssize_t K = H.shape[0], n = H.shape[1], k, i, j
    cdef double complex[:, ::1] M = np.empty((n, n), dtype=complex)
    cdef double complex[:, ::1] Inv = np.empty((n, n), dtype=complex)
    out = np.empty(K)
    cdef double[::1] o = out
    for k in range(K):
        for i in range(n):
            for j in range(n):
                M[i, j] = H[k, i, j]
        o[k] = _inv_row_norm(M, Inv, n)
    return out


def region_slack_grid(A, double R, sigmas, omegas):
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=float)
    cdef double[::1] sg = np.ascontiguousarray(sigmas, dtype=float)
    cdef double[::1] om = np.ascontiguousarray(omegas, dtype=float)
    cdef Py_ssize_t n = Av.shape[0], a, b, i, j
    cdef double complex[:, ::1] M = np.empty((n, n), dtype=complex)
    cdef double complex[:, ::1] Inv = np.empty((n, n), dtype=complex)
    cdef double best = INFINITY, bs = 0.0, bo = 0.0, val
    cdef double complex lam
    with nogil:
        for a in range(sg.shape[0]):
            for b in range(om.shape[0]):
                lam = sg[a] + 1j * om[b]
                for i in range(n):
                    for j in range(n):
                        M[i, j] = Av[i, j]
                    M[i, i] = M[i, i] - lam
                val = _inv_row_norm(M, Inv, n) - R
                if val < best:
                    best = val
                    bs = sg[a]
                    bo = om[b]
    return best, bs, bo


cdef void _field(double[:, :, ::1] A, double[:, :, ::1] B, double[:, :, ::1] G,
                 double[:, :, ::1] K, long[::1] ptr, long[::1] idx,
                 double[:, :, ::1] W, double[::1] lead_in,
                 double[:, ::1] x, double[:, ::1] out,
                 double[::1] r, double[::1] u) nogil:
    cdef Py_ssize_t nodes = A.shape[0], n = A.shape[1], m = B.shape[2]
    cdef Py_ssize_t i, p, q, e, j
    cdef double acc
    for p in range(n):
        acc = lead_in[p]
        for q in range(n):
            acc += A[0, p, q] * x[0, q]
        out[0, p] = acc
    for i in range(1, nodes):
        for p in range(n):
            r[p] = 0.0
        for e in range(ptr[i], ptr[i + 1]):
            j = idx[e]
            for p in range(n):
                acc = 0.0
                for q in range(n):
                    acc += W[e, p, q] * (x[j, q] - x[i, q])
                r[p] += acc
        for p in range(m):
            acc = 0.0
            for q in range(n):
                acc += K[i, p, q] * r[q] - G[i, p, q] * x[i, q]
            u[p] = acc
        for p in range(n):
            acc = 0.0
            for q in range(n):
                acc += A[i, p, q] * x[i, q]
            for q in range(m):
                acc += B[i, p, q] * u[q]
            out[i, p] = acc


def integrate_agents(A, B, G, K, nbr_ptr, nbr_idx, nbr_W, u0, x_init, double dt, Py_ssize_t steps, double guard):
    cdef double[:, :, ::1] Av = np.ascontiguousarray(A, dtype=float)
    cdef double[:, :, ::1] Bv = np.ascontiguousarray(B, dtype=float)
    cdef double[:, :, ::1] Gv = np.ascontiguousarray(G, dtype=float)
    cdef double[:, :, ::1] Kv = np.ascontiguousarray(K, dtype=float)
    cdef long[::1] ptr = np.ascontiguousarray(nbr_ptr, dtype=np.int_)
    cdef long[::1] idx = np.ascontiguousarray(nbr_idx, dtype=np.int_)
    cdef Py_ssize_t nodes = Av.shape[0], n = Av.shape[1], m = Bv.shape[2]
    W_arr = np.ascontiguousarray(nbr_W, dtype=float).reshape(-1, n, n)
    cdef double[:, :, ::1] Wv = W_arr
    cdef double[::1] lead_in = np.ascontiguousarray(np.asarray(B, float)[0] @ np.asarray(u0, float))

    states = np.empty((steps + 1, nodes, n))
    cdef double[:, :, ::1] S = states
    cdef double[:, ::1] x = np.array(x_init, dtype=float, order="C")
    cdef double[:, ::1] tmp = np.empty((nodes, n))
    cdef double[:, ::1] k1 = np.empty((nodes, n))
    cdef double[:, ::1] k2 = np.empty((nodes, n))
    cdef double[:, ::1] k3 = np.empty((nodes, n))
    cdef double[:, ::1] k4 = np.empty((nodes, n))
    cdef double[::1] r = np.empty(n)
    cdef double[::1] u = np.empty(max(m, 1))
    cdef Py_ssize_t k, i, p
    cdef double h2 = 0.5 * dt, h6 = dt / 6.0, v, big
    cdef bint bad = False, diverged = False
    cdef Py_ssize_t taken = steps

    S[0, :, :] = x
    with nogil:
        for k in range(steps):
            _field(Av, Bv, Gv, Kv, ptr, idx, Wv, lead_in, x, k1, r, u)
            for i in range(nodes):
                for p in range(n):
                    tmp[i, p] = x[i, p] + h2 * k1[i, p]
            _field(Av, Bv, Gv, Kv, ptr, idx, Wv, lead_in, tmp, k2, r, u)
            for i in range(nodes):
                for p in range(n):
                    tmp[i, p] = x[i, p] + h2 * k2[i, p]
            _field(Av, Bv, Gv, Kv, ptr, idx, Wv, lead_in, tmp, k3, r, u)
            for i in range(nodes):
                for p in range(n):
                    tmp[i, p] = x[i, p] + dt * k3[i, p]
            _field(Av, Bv, Gv, Kv, ptr, idx, Wv, lead_in, tmp, k4, r, u)
            big = 0.0
            for i in range(nodes):
                for p in range(n):
                    v = x[i, p] + h6 * (k1[i, p] + 2.0 * k2[i, p] + 2.0 * k3[i, p] + k4[i, p])
                    if not isfinite(v):
                        bad = True
                    elif fabs(v) > big:
                        big = fabs(v)
                    tmp[i, p] = v
            if bad:
                taken = k
                diverged = True
                break
            for i in range(nodes):
                for p in range(n):
                    x[i, p] = tmp[i, p]
                    S[k + 1, i, p] = tmp[i, p]
            if big > guard:
                taken = k + 1
                diverged = True
                break
    return states, taken, bool(diverged)
