# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: mask construction and fused masked softmax."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    DESCRIPTION = -1
    PAD = -2

CAUSAL = 0
INTRA = 1
INTER = 2


def build_mask(segments, int kind):
    cdef cnp.int64_t[:] seg = np.ascontiguousarray(segments, dtype=np.int64)
    cdef Py_ssize_t n = seg.shape[0]
    if kind < 0 or kind > 2:
        raise ValueError(f"unknown mask kind {kind}")
    out = np.zeros((n, n), dtype=np.bool_)
    cdef cnp.npy_bool[:, :] m = out
    cdef Py_ssize_t i, j
    cdef cnp.int64_t si, sj
    with nogil:
        for i in range(n):
            si = seg[i]
            if si == PAD:
                continue
            if kind == 0 or si == DESCRIPTION:
                for j in range(i + 1):
                    if seg[j] != PAD:
                        m[i, j] = 1
            else:
                for j in range(n):
                    sj = seg[j]
                    if sj < 0:
                        continue
                    if kind == 1 and sj == si:
                        m[i, j] = 1
                    elif kind == 2 and sj != si:
                        m[i, j] = 1
    return out


def masked_softmax(scores, mask):
    """Shift rows by their allowed max in C, exponentiate with numpy's
    vectorized exp, then normalize; blocked entries hold -inf -> 0."""
    cdef double[:, :, :, :] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef cnp.npy_bool[:, :, :] m = np.ascontiguousarray(mask, dtype=np.bool_)
    cdef Py_ssize_t B = s.shape[0], H = s.shape[1], L = s.shape[2], C = s.shape[3]
    if m.shape[0] != B or m.shape[1] != L or m.shape[2] != C:
        raise ValueError("mask shape does not match scores")
    out = np.empty((B, H, L, C), dtype=np.float64)
    cdef double[:, :, :, :] p = out
    cdef Py_ssize_t b, h, i, j
    cdef double mx, total
    cdef double neg_inf = -np.inf
    cdef int seen
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(L):
                    seen = 0
                    mx = 0.0
                    for j in range(C):
                        if m[b, i, j]:
                            if not seen or s[b, h, i, j] > mx:
                                mx = s[b, h, i, j]
                            seen = 1
                    for j in range(C):
                        if m[b, i, j]:
                            p[b, h, i, j] = s[b, h, i, j] - mx
                        else:
                            p[b, h, i, j] = neg_inf
    np.exp(out, out=out)
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(L):
                    total = 0.0
                    for j in range(C):
                        total = total + p[b, h, i, j]
                    if total > 0.0:
                        total = 1.0 / total
                        for j in range(C):
                            p[b, h, i, j] = p[b, h, i, j] * total
    return out


def masked_softmax_backward(probs, dprobs):
    cdef double[:, :, :, :] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef double[:, :, :, :] dp = np.ascontiguousarray(dprobs, dtype=np.float64)
    cdef Py_ssize_t B = p.shape[0], H = p.shape[1], L = p.shape[2], C = p.shape[3]
    out = np.zeros((B, H, L, C), dtype=np.float64)
    cdef double[:, :, :, :] ds = out
    cdef Py_ssize_t b, h, i, j
    cdef double inner
    with nogil:
        for b in range(B):
            for h in range(H):
                for i in range(L):
                    inner = 0.0
                    for j in range(C):
                        inner = inner + p[b, h, i, j] * dp[b, h, i, j]
                    for j in range(C):
                        ds[b, h, i, j] = p[b, h, i, j] * (dp[b, h, i, j] - inner)
    return out


from libc.math cimport sqrt


def silu_forward(u):
    """``(u * sigmoid(u), sigmoid(u))``; numpy's SIMD tanh beats scalar libm here."""
    a = np.ascontiguousarray(u, dtype=np.float64)
    sig = np.tanh(a * 0.5)
    sig += 1.0
    sig *= 0.5
    return a * sig, sig


def silu_backward(dact, u, sig):
    cdef double[:, :] d = np.ascontiguousarray(dact, dtype=np.float64)
    cdef double[:, :] a = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, :] s = np.ascontiguousarray(sig, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] o = out
    cdef double g
    with nogil:
        for i in range(n):
            for j in range(m):
                g = s[i, j]
                o[i, j] = d[i, j] * (g * (1.0 + a[i, j] * (1.0 - g)))
    return out


def rmsnorm_forward(x, gain, double eps):
    cdef double[:, :] a = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], i, j
    y = np.empty((n, m), dtype=np.float64)
    xhat = np.empty((n, m), dtype=np.float64)
    inv = np.empty(n, dtype=np.float64)
    cdef double[:, :] yv = y
    cdef double[:, :] hv = xhat
    cdef double[:] iv = inv
    cdef double acc, r, h
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(m):
                acc = acc + a[i, j] * a[i, j]
            r = 1.0 / sqrt(acc / m + eps)
            iv[i] = r
            for j in range(m):
                h = a[i, j] * r
                hv[i, j] = h
                yv[i, j] = h * g[j]
    return y, xhat, inv


def rmsnorm_backward(dout, gain, xhat, inv):
    cdef double[:, :] d = np.ascontiguousarray(dout, dtype=np.float64)
    cdef double[:] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef double[:, :] h = np.ascontiguousarray(xhat, dtype=np.float64)
    cdef double[:] iv = np.ascontiguousarray(inv, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], m = d.shape[1], i, j
    dx = np.empty((n, m), dtype=np.float64)
    dgain = np.zeros(m, dtype=np.float64)
    cdef double[:, :] o = dx
    cdef double[:] dg = dgain
    cdef double acc, dh
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(m):
                dh = d[i, j] * g[j]
                acc = acc + dh * h[i, j]
                dg[j] = dg[j] + d[i, j] * h[i, j]
            acc = acc / m
            for j in range(m):
                o[i, j] = iv[i] * (d[i, j] * g[j] - h[i, j] * acc)
    return dx, dgain
