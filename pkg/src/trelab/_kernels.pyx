# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: fused elementwise and row-wise inner loops.

Same signatures and math as the NumPy fallback in ``_kernels_np.py``; the
backend is picked in ``trelab.kernels`` at import time.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, tanh

cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_A = 0.044715


def gelu_fwd(x):
    out = np.empty_like(x)
    cdef double[::1] xf = x.reshape(-1)
    cdef double[::1] of = out.reshape(-1)
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double v, u
    for i in range(n):
        v = xf[i]
        u = GELU_C * (v + GELU_A * v * v * v)
        of[i] = 0.5 * v * (1.0 + tanh(u))
    return out


def gelu_bwd(x, gy):
    out = np.empty_like(x)
    cdef double[::1] xf = x.reshape(-1)
    cdef double[::1] gf = gy.reshape(-1)
    cdef double[::1] of = out.reshape(-1)
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double v, u, t, du
    for i in range(n):
        v = xf[i]
        u = GELU_C * (v + GELU_A * v * v * v)
        t = tanh(u)
        du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        of[i] = gf[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
    return out


def softmax_rows(x):
    out = np.empty_like(x)
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, n = xv.shape[0], d = xv.shape[1]
    cdef double m, s
    for i in range(n):
        m = xv[i, 0]
        for j in range(1, d):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(d):
            ov[i, j] = exp(xv[i, j] - m)
            s += ov[i, j]
        for j in range(d):
            ov[i, j] /= s
    return out


def softmax_rows_bwd(p, gy):
    out = np.empty_like(p)
    cdef double[:, ::1] pv = p
    cdef double[:, ::1] gv = gy
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, n = pv.shape[0], d = pv.shape[1]
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += gv[i, j] * pv[i, j]
        for j in range(d):
            ov[i, j] = pv[i, j] * (gv[i, j] - inner)
    return out


def causal_softmax_rows(x):
    out = np.zeros_like(x)
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, n = xv.shape[0]
    cdef double m, s
    for i in range(n):
        m = xv[i, 0]
        for j in range(1, i + 1):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(i + 1):
            ov[i, j] = exp(xv[i, j] - m)
            s += ov[i, j]
        for j in range(i + 1):
            ov[i, j] /= s
    return out


def layernorm_fwd(x, gain, bias, eps):
    cdef double[:, ::1] xv = x
    cdef Py_ssize_t i, j, n = xv.shape[0], d = xv.shape[1]
    y = np.empty_like(x)
    mean = np.empty(n, dtype=np.float64)
    rstd = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef double[::1] mv = mean
    cdef double[::1] rv = rstd
    cdef double[::1] gv = gain
    cdef double[::1] bv = bias
    cdef double mu, var, dev, r, e = eps
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += xv[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            dev = xv[i, j] - mu
            var += dev * dev
        var /= d
        r = 1.0 / sqrt(var + e)
        mv[i] = mu
        rv[i] = r
        for j in range(d):
            yv[i, j] = (xv[i, j] - mu) * r * gv[j] + bv[j]
    return y, mean, rstd


def layernorm_bwd(x, gain, mean, rstd, gy):
    cdef double[:, ::1] xv = x
    cdef Py_ssize_t i, j, n = xv.shape[0], d = xv.shape[1]
    gx = np.empty_like(x)
    ggain = np.zeros_like(gain)
    gbias = np.zeros_like(gain)
    cdef double[:, ::1] gxv = gx
    cdef double[:, ::1] gyv = gy
    cdef double[::1] gav = gain
    cdef double[::1] mv = mean
    cdef double[::1] rv = rstd
    cdef double[::1] ggv = ggain
    cdef double[::1] gbv = gbias
    cdef double mu, r, xhat, dxhat, m1, m2
    for i in range(n):
        mu = mv[i]
        r = rv[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (xv[i, j] - mu) * r
            dxhat = gyv[i, j] * gav[j]
            m1 += dxhat
            m2 += dxhat * xhat
            ggv[j] += gyv[i, j] * xhat
            gbv[j] += gyv[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (xv[i, j] - mu) * r
            dxhat = gyv[i, j] * gav[j]
            gxv[i, j] = r * (dxhat - m1 - xhat * m2)
    return gx, ggain, gbias


def cross_entropy_fwd(logits, targets, ignore_id):
    probs = softmax_rows(logits)
    cdef double[:, ::1] pv = probs
    cdef long[::1] tv = targets
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef long ig = ignore_id
    cdef long nvalid = 0
    cdef double acc = 0.0
    for i in range(n):
        if tv[i] != ig:
            nvalid += 1
            acc += -log(pv[i, tv[i]])
    if nvalid == 0:
        return 0.0, 0, probs
    return acc / nvalid, nvalid, probs


def cross_entropy_bwd(probs, targets, ignore_id, nvalid, gscalar):
    g = np.zeros_like(probs)
    if nvalid == 0:
        return g
    cdef double[:, ::1] pv = probs
    cdef double[:, ::1] gv = g
    cdef long[::1] tv = targets
    cdef Py_ssize_t i, j, n = pv.shape[0], d = pv.shape[1]
    cdef long ig = ignore_id
    cdef double scale = gscalar / nvalid
    for i in range(n):
        if tv[i] != ig:
            for j in range(d):
                gv[i, j] = pv[i, j] * scale
            gv[i, tv[i]] -= scale
    return g


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    cdef double[::1] pv = p
    cdef double[::1] gv = g
    cdef double[::1] mv = m
    cdef double[::1] vv = v
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double b1 = beta1, b2 = beta2, rate = lr, e = eps, c1 = bc1, c2 = bc2
    cdef double gi
    for i in range(n):
        gi = gv[i]
        mv[i] = b1 * mv[i] + (1.0 - b1) * gi
        vv[i] = b2 * vv[i] + (1.0 - b2) * gi * gi
        pv[i] -= rate * (mv[i] / c1) / (sqrt(vv[i] / c2) + e)
