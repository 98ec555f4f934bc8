# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numeric kernels (see ``_reference`` for the numpy twins)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def mlp_forward(const double[:, ::1] x, const double[:, ::1] w1, const double[::1] b1,
                const double[:, ::1] w2, const double[::1] b2,
                const double[:, ::1] w3, const double[::1] b3):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t h1 = w1.shape[1], h2 = w2.shape[1], k = w3.shape[1]
    cdef Py_ssize_t i, j, m
    cdef double acc, xv
    out = np.empty((n, k))
    cdef double[:, ::1] o = out
    cdef double[::1] a1 = np.empty(h1)
    cdef double[::1] a2 = np.empty(h2)
    for i in range(n):
        for j in range(h1):
            a1[j] = b1[j]
        for m in range(d):
            xv = x[i, m]
            if xv != 0.0:
                for j in range(h1):
                    a1[j] += xv * w1[m, j]
        for j in range(h1):
            if a1[j] < 0.0:
                a1[j] = 0.0
        for j in range(h2):
            a2[j] = b2[j]
        for m in range(h1):
            xv = a1[m]
            if xv != 0.0:
                for j in range(h2):
                    a2[j] += xv * w2[m, j]
        for j in range(h2):
            if a2[j] < 0.0:
                a2[j] = 0.0
        for j in range(k):
            acc = b3[j]
            for m in range(h2):
                acc += a2[m] * w3[m, j]
            o[i, j] = acc
    return out


def pinball(const double[:, ::1] q, const double[::1] y, const double[::1] tau):
    cdef Py_ssize_t n = q.shape[0], k = q.shape[1]
    cdef Py_ssize_t i, j
    cdef double e, s, inv_k = 1.0 / k
    loss = np.empty(n)
    grad = np.empty((n, k))
    cdef double[::1] lo = loss
    cdef double[:, ::1] g = grad
    for i in range(n):
        s = 0.0
        for j in range(k):
            e = y[i] - q[i, j]
            if e > 0:
                s += tau[j] * e
                g[i, j] = -tau[j] * inv_k
            else:
                s += (tau[j] - 1.0) * e
                g[i, j] = (1.0 - tau[j]) * inv_k
        lo[i] = s * inv_k
    return loss, grad


def quantile_sample(const double[:, ::1] q, const double[::1] tau, const double[::1] u,
                    double lo, double hi):
    cdef Py_ssize_t n = q.shape[0], k = q.shape[1]
    cdef Py_ssize_t i, j, m
    cdef double v, t, uu
    cdef double[::1] knots = np.empty(k)
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        # insertion sort: k is tiny
        for j in range(k):
            v = q[i, j]
            m = j
            while m > 0 and knots[m - 1] > v:
                knots[m] = knots[m - 1]
                m -= 1
            knots[m] = v
        uu = u[i]
        if uu <= tau[0]:
            v = knots[0]
        elif uu >= tau[k - 1]:
            v = knots[k - 1]
        else:
            j = 1
            while tau[j] < uu:
                j += 1
            t = (uu - tau[j - 1]) / (tau[j] - tau[j - 1])
            v = knots[j - 1] + t * (knots[j] - knots[j - 1])
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        o[i] = v
    return out


def reachable(const unsigned char[:, ::1] adj, Py_ssize_t src, Py_ssize_t dst):
    cdef Py_ssize_t n = adj.shape[0]
    cdef Py_ssize_t top = 0, v, w
    cdef cnp.ndarray[cnp.intp_t, ndim=1] stack = np.empty(n * n + 1, dtype=np.intp)
    cdef unsigned char[::1] seen = np.zeros(n, dtype=np.uint8)
    stack[0] = src
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        if v == dst:
            return True
        if seen[v]:
            continue
        seen[v] = 1
        for w in range(n):
            if adj[v, w] and not seen[w]:
                stack[top] = w
                top += 1
    return False
