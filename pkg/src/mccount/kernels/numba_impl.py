"""Numba-jitted convolution kernels (default path).

Same contracts as :mod:`mccount.kernels.numpy_impl`; loop nests are ordered
so the innermost index walks contiguous memory.  ``cache=True`` so the
compile cost is paid once per environment, not per process.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(xp, w, stride, h_out, w_out):
    c_out, c_in, k, _ = w.shape
    y = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    for o in range(c_out):
        for c in range(c_in):
            for a in range(k):
                for b in range(k):
                    wv = w[o, c, a, b]
                    for i in range(h_out):
                        row = xp[c, i * stride + a]
                        for j in range(w_out):
                            y[o, i, j] += wv * row[j * stride + b]
    return y


@njit(cache=True)
def conv2d_grad_input(g, w, stride, hp, wp):
    c_out, c_in, k, _ = w.shape
    _, h_out, w_out = g.shape
    dxp = np.zeros((c_in, hp, wp), dtype=np.float64)
    for o in range(c_out):
        for c in range(c_in):
            for a in range(k):
                for b in range(k):
                    wv = w[o, c, a, b]
                    for i in range(h_out):
                        grow = g[o, i]
                        drow = dxp[c, i * stride + a]
                        for j in range(w_out):
                            drow[j * stride + b] += wv * grow[j]
    return dxp


@njit(cache=True)
def conv2d_grad_kernel(g, xp, stride, k):
    c_out, h_out, w_out = g.shape
    c_in = xp.shape[0]
    dw = np.zeros((c_out, c_in, k, k), dtype=np.float64)
    for o in range(c_out):
        for c in range(c_in):
            for a in range(k):
                for b in range(k):
                    acc = 0.0
                    for i in range(h_out):
                        grow = g[o, i]
                        row = xp[c, i * stride + a]
                        for j in range(w_out):
                            acc += grow[j] * row[j * stride + b]
                    dw[o, c, a, b] = acc
    return dw
