"""Training objectives: masked counting loss, spatial contrast loss, and
their weighted sum.

The counting loss is the mean squared difference over non-ignored cells.
The spatial contrast loss is the mean of the pairwise cosine-similarity
matrix between flattened prediction channels; it penalizes different
categories lighting up the same spatial positions.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class LossConfig:
    gamma: float = 1e-4       # weight of the spatial contrast term
    norm_epsilon: float = 1e-12  # cosine denominator floor for zero channels
    include_diagonal: bool = True

    def validate(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.norm_epsilon <= 0:
            raise ValueError("norm_epsilon must be > 0")
        return self


def counting_loss(pred, gt, mask):
    """Mean squared error over non-ignored cells; 0 if everything is ignored."""
    if pred.values.shape != gt.values.shape:
        raise ShapeError(
            f"prediction {pred.values.shape} vs ground truth {gt.values.shape}")
    if mask.mask.shape != pred.values.shape:
        raise ShapeError(
            f"mask {mask.mask.shape} vs prediction {pred.values.shape}")
    n_live = mask.mask.sum()
    if n_live == 0:
        return Tensor(0.0)
    diff = T.sub(pred.values, gt.values)
    masked_sq = T.mul(T.mul(diff, diff), Tensor(mask.mask))
    return T.mul(T.tsum(masked_sq), Tensor(1.0 / n_live))


def flatten_channels(pred):
    """Row-major flattening of each channel into a 1-D vector, channel order
    preserved."""
    n, h, w = pred.values.shape
    flat = T.reshape(pred.values, (n, h * w))
    return [T.reshape(T.narrow(flat, 0, i, 1), (h * w,)) for i in range(n)]


def cosine_similarity(u, v, eps=1e-12):
    """<u,v> / (max(|u|, eps) * max(|v|, eps)); eps keeps zero vectors finite."""
    if u.shape != v.shape or u.data.ndim != 1:
        raise ShapeError(f"cosine expects equal-length vectors, got {u.shape}, {v.shape}")
    dot = T.tsum(T.mul(u, v))
    nu = T.sqrt(T.maximum(T.tsum(T.mul(u, u)), eps * eps))
    nv = T.sqrt(T.maximum(T.tsum(T.mul(v, v)), eps * eps))
    return T.div(dot, T.mul(nu, nv))


def similarity_matrix(pred, eps=1e-12):
    """N x N matrix of pairwise channel cosine similarities (differentiable)."""
    n, h, w = pred.values.shape
    flat = T.reshape(pred.values, (n, h * w))
    sumsq = T.sum_axis(T.mul(flat, flat), axis=1, keepdims=True)  # (n, 1)
    # max(|u|, eps) == sqrt(max(|u|^2, eps^2)), and the clamped form has a
    # well-defined zero gradient for zero channels
    norms = T.sqrt(T.maximum(sumsq, eps * eps))
    unit = T.div(flat, norms)
    return T.matmul(unit, T.transpose(unit))


def spatial_contrast_loss(pred, cfg=None):
    """Mean of the channel similarity matrix.

    With the diagonal included (default) the self-similarities contribute a
    constant 1/N with zero gradient; the flag exists so reported values can
    exclude them.
    """
    cfg = cfg or LossConfig()
    n = pred.values.shape[0]
    m = similarity_matrix(pred, cfg.norm_epsilon)
    if cfg.include_diagonal:
        return T.mean(m)
    if n == 1:
        raise ValueError("a single-channel map has no off-diagonal similarities")
    off = T.sub(T.tsum(m), T.tsum(T.mul(m, Tensor(np.eye(n)))))
    return T.mul(off, Tensor(1.0 / (n * n - n)))


def total_loss(pred, gt, mask, cfg):
    """counting_loss + gamma * spatial_contrast_loss (gamma == 0 skips the
    contrast term entirely)."""
    cfg.validate()
    l_c = counting_loss(pred, gt, mask)
    if cfg.gamma == 0.0:
        return l_c
    return T.add(l_c, T.mul(Tensor(cfg.gamma), spatial_contrast_loss(pred, cfg)))
