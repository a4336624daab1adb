# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Same surface as irr.kernels._pykernels, with the inner loops in C. The
reductions run in plain left-to-right order, so results can differ from
the numpy backend by rounding only.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, pow

cnp.import_array()

BACKEND = "compiled"


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double m, s
    with nogil:
        for i in range(rows):
            m = x[i, 0]
            for j in range(1, cols):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(cols):
                out[i, j] = exp(x[i, j] - m)
                s += out[i, j]
            for j in range(cols):
                out[i, j] /= s
    return out_arr


def softmax_rows_grad(double[:, ::1] p, double[:, ::1] gout):
    cdef Py_ssize_t rows = p.shape[0], cols = p.shape[1]
    gx_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(cols):
                dot += gout[i, j] * p[i, j]
            for j in range(cols):
                gx[i, j] = p[i, j] * (gout[i, j] - dot)
    return gx_arr


def relu(double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(rows):
            for j in range(cols):
                out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def relu_grad(double[:, ::1] x, double[:, ::1] gout):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    gx_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(rows):
            for j in range(cols):
                gx[i, j] = gout[i, j] if x[i, j] > 0.0 else 0.0
    return gx_arr


def layernorm(double[:, ::1] x, double[:, ::1] gain, double[:, ::1] bias, double eps):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    y_arr = np.empty((rows, cols), dtype=np.float64)
    mean_arr = np.empty((rows, 1), dtype=np.float64)
    rstd_arr = np.empty((rows, 1), dtype=np.float64)
    cdef double[:, ::1] y = y_arr, mean = mean_arr, rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, d, r
    with nogil:
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += x[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                d = x[i, j] - mu
                var += d * d
            var /= cols
            r = 1.0 / sqrt(var + eps)
            mean[i, 0] = mu
            rstd[i, 0] = r
            for j in range(cols):
                y[i, j] = (x[i, j] - mu) * r * gain[0, j] + bias[0, j]
    return y_arr, mean_arr, rstd_arr


def layernorm_grad(double[:, ::1] x, double[:, ::1] gain, double[:, ::1] mean,
                   double[:, ::1] rstd, double[:, ::1] gout):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    gx_arr = np.empty((rows, cols), dtype=np.float64)
    ggain_arr = np.zeros((1, cols), dtype=np.float64)
    gbias_arr = np.zeros((1, cols), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr, ggain = ggain_arr, gbias = gbias_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, xhat, gh, r
    with nogil:
        for i in range(rows):
            r = rstd[i, 0]
            m1 = 0.0
            m2 = 0.0
            for j in range(cols):
                xhat = (x[i, j] - mean[i, 0]) * r
                gh = gout[i, j] * gain[0, j]
                m1 += gh
                m2 += gh * xhat
                ggain[0, j] += gout[i, j] * xhat
                gbias[0, j] += gout[i, j]
            m1 /= cols
            m2 /= cols
            for j in range(cols):
                xhat = (x[i, j] - mean[i, 0]) * r
                gh = gout[i, j] * gain[0, j]
                gx[i, j] = r * (gh - m1 - xhat * m2)
    return gx_arr, ggain_arr, gbias_arr


def adam_update(double[:, ::1] value, double[:, ::1] grad, double[:, ::1] m,
                double[:, ::1] v, long step, double lr, double beta1,
                double beta2, double eps, double weight_decay):
    cdef Py_ssize_t rows = value.shape[0], cols = value.shape[1]
    cdef double c1 = 1.0 - pow(beta1, step)
    cdef double c2 = 1.0 - pow(beta2, step)
    cdef Py_ssize_t i, j
    cdef double g, mhat, vhat
    with nogil:
        for i in range(rows):
            for j in range(cols):
                g = grad[i, j]
                m[i, j] = beta1 * m[i, j] + (1.0 - beta1) * g
                v[i, j] = beta2 * v[i, j] + (1.0 - beta2) * g * g
                mhat = m[i, j] / c1
                vhat = v[i, j] / c2
                value[i, j] -= lr * mhat / (sqrt(vhat) + eps)
                if weight_decay != 0.0:
                    value[i, j] -= lr * weight_decay * value[i, j]


def nearest_centroids(double[:, ::1] points, double[:, ::1] centroids):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], k = centroids.shape[0]
    idx_arr = np.empty(n, dtype=np.int64)
    sq_arr = np.empty(n, dtype=np.float64)
    cdef long[::1] idx = idx_arr
    cdef double[::1] sq = sq_arr
    cdef Py_ssize_t i, j, c
    cdef double best, dist, diff
    with nogil:
        for i in range(n):
            best = 0.0
            idx[i] = 0
            for c in range(k):
                dist = 0.0
                for j in range(d):
                    diff = points[i, j] - centroids[c, j]
                    dist += diff * diff
                if c == 0 or dist < best:
                    best = dist
                    idx[i] = c
            sq[i] = best
    return idx_arr, sq_arr
