"""Pure numpy convolution kernels (fallback path).

All functions take the already zero-padded input ``xp`` so the two backends
share one padding convention.  Semantics are cross-correlation: no kernel
flip.  Shapes follow the channel-major layout used everywhere else in the
package: input (c_in, H, W), kernel (c_out, c_in, k, k).
"""

import numpy as np


def conv2d_forward(xp, w, stride, h_out, w_out):
    c_out, c_in, k, _ = w.shape
    y = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    for a in range(k):
        for b in range(k):
            patch = xp[:, a : a + stride * (h_out - 1) + 1 : stride,
                       b : b + stride * (w_out - 1) + 1 : stride]
            y += np.einsum("oc,cij->oij", w[:, :, a, b], patch)
    return y


def conv2d_grad_input(g, w, stride, hp, wp):
    """Gradient w.r.t. the padded input, shape (c_in, hp, wp)."""
    c_out, c_in, k, _ = w.shape
    _, h_out, w_out = g.shape
    dxp = np.zeros((c_in, hp, wp), dtype=np.float64)
    for a in range(k):
        for b in range(k):
            dxp[:, a : a + stride * (h_out - 1) + 1 : stride,
                b : b + stride * (w_out - 1) + 1 : stride] += np.einsum(
                "oc,oij->cij", w[:, :, a, b], g)
    return dxp


def conv2d_grad_kernel(g, xp, stride, k):
    c_out, h_out, w_out = g.shape
    c_in = xp.shape[0]
    dw = np.zeros((c_out, c_in, k, k), dtype=np.float64)
    for a in range(k):
        for b in range(k):
            patch = xp[:, a : a + stride * (h_out - 1) + 1 : stride,
                       b : b + stride * (w_out - 1) + 1 : stride]
            dw[:, :, a, b] = np.einsum("oij,cij->oc", g, patch)
    return dw
