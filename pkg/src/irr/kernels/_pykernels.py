"""Numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension
(irr.kernels._ckernels) is unavailable. Both backends expose the same
functions with the same semantics; see irr.kernels for selection.
All arrays are C-contiguous float64.
"""

import numpy as np

BACKEND = "python"


def softmax_rows(x):
    """Row-wise softmax with max-subtraction for stability."""
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    e /= e.sum(axis=1, keepdims=True)
    return e


def softmax_rows_grad(p, gout):
    """Backward of softmax_rows: p * (g - <g, p>_row)."""
    dot = (gout * p).sum(axis=1, keepdims=True)
    return p * (gout - dot)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, gout):
    return np.where(x > 0.0, gout, 0.0)


def layernorm(x, gain, bias, eps):
    """Row-wise layer norm; returns (y, mean, rstd) with mean/rstd kept for backward."""
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = centered * rstd * gain + bias
    return y, mean, rstd


def layernorm_grad(x, gain, mean, rstd, gout):
    """Backward of layernorm; returns (gx, ggain, gbias)."""
    xhat = (x - mean) * rstd
    gx_hat = gout * gain
    m1 = gx_hat.mean(axis=1, keepdims=True)
    m2 = (gx_hat * xhat).mean(axis=1, keepdims=True)
    gx = rstd * (gx_hat - m1 - xhat * m2)
    ggain = (gout * xhat).sum(axis=0, keepdims=True)
    gbias = gout.sum(axis=0, keepdims=True)
    return gx, ggain, gbias


def adam_update(value, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One fused Adam step with decoupled weight decay, in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    value -= lr * mhat / (np.sqrt(vhat) + eps)
    if weight_decay != 0.0:
        value -= lr * weight_decay * value


def nearest_centroids(points, centroids):
    """Index of the nearest centroid per point (squared distance, lowest-index ties).

    Returns (indices int64, squared distances).
    """
    # ||p - c||^2 expanded; recomputed exactly afterwards to avoid the
    # cancellation error of the expansion affecting the reported distance.
    p2 = (points * points).sum(axis=1, keepdims=True)
    c2 = (centroids * centroids).sum(axis=1)
    d2 = p2 - 2.0 * (points @ centroids.T) + c2
    idx = d2.argmin(axis=1)
    diff = points - centroids[idx]
    sq = (diff * diff).sum(axis=1)
    return idx.astype(np.int64), sq
