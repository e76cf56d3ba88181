"""Gaussian ground-truth density maps from point annotations.

Each annotated point stamps a normalized Gaussian kernel; border-truncated
stamps are renormalized so every point contributes mass exactly 1, which
makes per-channel sums equal point counts to rounding error.  Maps are
rendered at image resolution and sum-pooled to the model's output stride so
downsampling never loses mass.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import taxonomy
from .tensor import ShapeError, Tensor, read_array, write_array


@dataclass(frozen=True)
class GaussianKernelSpec:
    """Isotropic Gaussian stamp: bandwidth in pixels and odd window size."""

    sigma: float
    size: int

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ShapeError(f"kernel size must be odd and >= 1, got {self.size}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass
class DensityMap:
    """N-channel raster whose per-channel mass equals the object count."""

    category_order: list
    values: Tensor  # (N, h, w)

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    def channel_sums(self):
        return self.values.data.sum(axis=(1, 2))


@dataclass
class IgnoreMask:
    """Per-channel binary raster; 1 = counted, 0 = ignored."""

    mask: np.ndarray  # (N, h, w) of {0.0, 1.0}


def gaussian_kernel(spec):
    """Normalized s x s Gaussian sampled on the grid centered at the middle
    cell; sums to exactly 1."""
    r = spec.size // 2
    span = np.arange(-r, r + 1, dtype=np.float64)
    d2 = span[:, None] ** 2 + span[None, :] ** 2
    k = np.exp(-d2 / (2.0 * spec.sigma ** 2)) / (2.0 * np.pi * spec.sigma ** 2)
    return Tensor(k / k.sum())


def render_channel(points, height, width, spec, conserve_mass=True):
    """Stamp the kernel at each (x, y) point; (height, width) map out.

    With ``conserve_mass`` (default) border-truncated stamps are
    renormalized so each point contributes exactly 1.
    """
    kern = gaussian_kernel(spec).data
    r = spec.size // 2
    out = np.zeros((height, width))
    for x, y in points:
        x, y = int(x), int(y)
        if not (0 <= x < width and 0 <= y < height):
            raise ShapeError(
                f"point ({x}, {y}) outside {height}x{width} raster")
        y0, y1 = max(0, y - r), min(height, y + r + 1)
        x0, x1 = max(0, x - r), min(width, x + r + 1)
        stamp = kern[y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)]
        if conserve_mass:
            stamp = stamp / stamp.sum()
        out[y0:y1, x0:x1] += stamp
    return Tensor(out)


def generate_gt(anno, spec, out_stride=1, conserve_mass=True):
    """Render every category channel at image resolution, then sum-pool to
    the output stride.

    Points inside same-category ignore boxes are not rendered (they are not
    counted), and the mask zeroes every output cell that covers any ignored
    full-resolution pixel of that category.
    """
    h, w = anno.height, anno.width
    if h % out_stride or w % out_stride:
        raise ShapeError(
            f"stride {out_stride} does not divide {h}x{w}")
    names = list(anno.points.keys())
    ho, wo = h // out_stride, w // out_stride
    full = np.zeros((len(names), h, w))
    mask = np.ones((len(names), ho, wo))
    for i, cat in enumerate(names):
        pts = taxonomy.visible_points(anno, cat)
        full[i] = render_channel(pts, h, w, spec, conserve_mass).data
        for box in anno.ignore_boxes:
            if box.category != cat:
                continue
            y0, y1 = box.y0 // out_stride, box.y1 // out_stride
            x0, x1 = box.x0 // out_stride, box.x1 // out_stride
            mask[i, y0 : y1 + 1, x0 : x1 + 1] = 0.0
    pooled = full.reshape(len(names), ho, out_stride, wo, out_stride).sum(axis=(2, 4))
    return DensityMap(names, Tensor(pooled)), IgnoreMask(mask)


def count_from_density(dmap, mask=None):
    """Per-category masked sums of the density map."""
    values = dmap.values.data
    if mask is not None:
        if mask.mask.shape != values.shape:
            raise ShapeError(
                f"mask shape {mask.mask.shape} != density shape {values.shape}")
        values = values * mask.mask
    sums = values.sum(axis=(1, 2))
    return {cat: float(s) for cat, s in zip(dmap.category_order, sums)}


def save_density(stem, dmap, mask, spec, out_stride):
    """Write <stem>.density.t64, <stem>.mask.t64 and a JSON sidecar."""
    with open(f"{stem}.density.t64", "wb") as fh:
        write_array(fh, dmap.values.data)
    with open(f"{stem}.mask.t64", "wb") as fh:
        write_array(fh, mask.mask)
    with open(f"{stem}.density.json", "w") as fh:
        json.dump(
            {"category_order": list(dmap.category_order), "sigma": spec.sigma,
             "size": spec.size, "out_stride": out_stride},
            fh, indent=2)
        fh.write("\n")


def load_density(stem):
    with open(f"{stem}.density.json") as fh:
        meta = json.load(fh)
    with open(f"{stem}.density.t64", "rb") as fh:
        values = read_array(fh)
    with open(f"{stem}.mask.t64", "rb") as fh:
        mask = read_array(fh)
    dmap = DensityMap(list(meta["category_order"]), Tensor(values))
    return dmap, IgnoreMask(mask), GaussianKernelSpec(meta["sigma"], meta["size"]), meta["out_stride"]
