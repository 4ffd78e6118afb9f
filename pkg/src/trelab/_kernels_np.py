"""NumPy implementations of the hot numeric kernels.

Mirror of the compiled extension in ``_kernels.pyx``; same signatures, same
math, used as the fallback backend when the extension is unavailable.
All arrays are C-contiguous float64.
"""

import math

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu_fwd(x):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, gy):
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(p, gy):
    inner = (gy * p).sum(axis=1, keepdims=True)
    return p * (gy - inner)


def causal_softmax_rows(x):
    n = x.shape[0]
    keep = np.tril(np.ones((n, n), dtype=bool))
    neg = np.where(keep, x, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    e = np.exp(neg - m)
    return e / e.sum(axis=1, keepdims=True)


def layernorm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gain + bias
    return y, mean, rstd


def layernorm_bwd(x, gain, mean, rstd, gy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = gy * gain
    gx = rstd[:, None] * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    ggain = (gy * xhat).sum(axis=0)
    gbias = gy.sum(axis=0)
    return gx, ggain, gbias


def cross_entropy_fwd(logits, targets, ignore_id):
    probs = softmax_rows(logits)
    valid = targets != ignore_id
    nvalid = int(valid.sum())
    if nvalid == 0:
        return 0.0, 0, probs
    picked = probs[np.nonzero(valid)[0], targets[valid]]
    loss = float(-np.log(picked).sum() / nvalid)
    return loss, nvalid, probs


def cross_entropy_bwd(probs, targets, ignore_id, nvalid, gscalar):
    g = np.zeros_like(probs)
    if nvalid == 0:
        return g
    valid = targets != ignore_id
    rows = np.nonzero(valid)[0]
    scale = gscalar / nvalid
    g[rows] = probs[rows] * scale
    g[rows, targets[valid]] -= scale
    return g


def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    # in-place on p, m, v; bc1/bc2 are the bias-correction denominators
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
