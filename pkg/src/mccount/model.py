"""Multi-channel density regression model.

RGB and NIR rasters are concatenated early, pushed through a small
three-stage convolutional encoder (one quarter, one eighth and one
sixteenth resolution), fused by a feature pyramid, upsampled to a common
scale, passed through paired position/channel attention with learnable
residual gains, and projected by a 1x1 convolution to one density channel
per category at one quarter of the input resolution.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .density import DensityMap
from .tensor import ShapeError, Tensor

OUTPUT_STRIDE = 4


@dataclass
class ModelConfig:
    base_channels: int = 16
    num_categories: int = 6
    use_nir: bool = True
    use_dual_attention: bool = True
    input_size: int = 64
    attention_channel_div: int = 1  # query/key width divisor; 1 = full width
    channel_mean: tuple = (0.5, 0.5, 0.5, 0.5)
    channel_std: tuple = (0.25, 0.25, 0.25, 0.25)

    def validate(self):
        if self.base_channels < 4 or self.base_channels % 4:
            raise ValueError("base_channels must be >= 4 and divisible by 4")
        if self.input_size % 16:
            raise ValueError("input_size must be divisible by 16")
        if self.num_categories < 1:
            raise ValueError("num_categories must be >= 1")
        if self.attention_channel_div < 1:
            raise ValueError("attention_channel_div must be >= 1")
        return self

    @property
    def in_channels(self):
        return 4 if self.use_nir else 3

    @property
    def fused_channels(self):
        return 3 * self.base_channels


@dataclass
class DualAttentionParams:
    """Position + channel attention parameters.

    ``alpha`` and ``beta`` gate the two attention branches; both start at
    exactly 0 so a fresh module is the identity on its input.
    """

    k1: Tensor  # query projection, 1x1
    k2: Tensor  # key projection, 1x1
    k3: Tensor  # value projection, 1x1
    alpha: Tensor
    beta: Tensor
    k_out: Tensor  # 1x1 reduction after concatenating the two branches


def _uniform_param(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class MccModel:
    """Parameter bundle for the full pipeline; see module docstring."""

    def __init__(self, cfg, rng=None, category_order=None):
        cfg.validate()
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.category_order = (list(category_order) if category_order is not None
                               else [f"ch{i}" for i in range(cfg.num_categories)])
        if len(self.category_order) != cfg.num_categories:
            raise ValueError("category_order length != num_categories")
        c = cfg.base_channels
        cin = cfg.in_channels

        def conv_p(co, ci, k):
            return _uniform_param(rng, (co, ci, k, k), ci * k * k)

        def bias_p(co, fan_in):
            return _uniform_param(rng, (co, 1, 1), fan_in)

        self.enc1a = conv_p(c, cin, 3)
        self.enc1a_b = bias_p(c, cin * 9)
        self.enc1b = conv_p(c, c, 3)
        self.enc1b_b = bias_p(c, c * 9)
        self.enc2 = conv_p(2 * c, c, 3)
        self.enc2_b = bias_p(2 * c, c * 9)
        self.enc3 = conv_p(4 * c, 2 * c, 3)
        self.enc3_b = bias_p(4 * c, 2 * c * 9)

        self.lat1 = conv_p(c, c, 1)
        self.lat2 = conv_p(c, 2 * c, 1)
        self.lat3 = conv_p(c, 4 * c, 1)
        self.merge1 = conv_p(c, c, 3)
        self.merge2 = conv_p(c, c, 3)

        fc = cfg.fused_channels
        if cfg.use_dual_attention:
            qk = fc // cfg.attention_channel_div
            self.attention = DualAttentionParams(
                k1=conv_p(qk, fc, 1),
                k2=conv_p(qk, fc, 1),
                k3=conv_p(fc, fc, 1),
                alpha=Tensor(0.0, requires_grad=True),
                beta=Tensor(0.0, requires_grad=True),
                k_out=conv_p(fc, 2 * fc, 1),
            )
            self.reduce = None
        else:
            self.attention = None
            self.reduce = conv_p(fc, fc, 1)
        self.projector = conv_p(cfg.num_categories, fc, 1)

    def named_parameters(self):
        pairs = [
            ("enc1a", self.enc1a), ("enc1a_b", self.enc1a_b),
            ("enc1b", self.enc1b), ("enc1b_b", self.enc1b_b),
            ("enc2", self.enc2), ("enc2_b", self.enc2_b),
            ("enc3", self.enc3), ("enc3_b", self.enc3_b),
            ("lat1", self.lat1), ("lat2", self.lat2), ("lat3", self.lat3),
            ("merge1", self.merge1), ("merge2", self.merge2),
        ]
        if self.attention is not None:
            pairs += [
                ("attention.k1", self.attention.k1),
                ("attention.k2", self.attention.k2),
                ("attention.k3", self.attention.k3),
                ("attention.alpha", self.attention.alpha),
                ("attention.beta", self.attention.beta),
                ("attention.k_out", self.attention.k_out),
            ]
        if self.reduce is not None:
            pairs.append(("reduce", self.reduce))
        pairs.append(("projector", self.projector))
        return pairs

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


# ---------------------------------------------------------------------------
# forward pipeline pieces

def assemble_input(rgb, nir, cfg):
    """Concatenate R,G,B(,NIR) and normalize each channel with the config's
    fixed mean/std constants."""
    rgb = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    if rgb.shape[0] != 3:
        raise ShapeError(f"rgb must be (3,H,W), got {rgb.shape}")
    if cfg.use_nir:
        if nir is None:
            raise ShapeError("config expects an NIR channel but none was given")
        nir = nir if isinstance(nir, Tensor) else Tensor(nir)
        if nir.shape[0] != 1 or nir.shape[1:] != rgb.shape[1:]:
            raise ShapeError(
                f"nir shape {nir.shape} incompatible with rgb {rgb.shape}")
        x = T.concat([rgb, nir], axis=0)
    else:
        if nir is not None:
            raise ShapeError("config is RGB-only but an NIR channel was given")
        x = rgb
    n = x.shape[0]
    mean = Tensor(np.asarray(cfg.channel_mean[:n]).reshape(n, 1, 1))
    std = Tensor(np.asarray(cfg.channel_std[:n]).reshape(n, 1, 1))
    return T.div(T.sub(x, mean), std)


def _conv_block(x, kernel, bias):
    return T.silu(T.add(T.conv2d(x, kernel, stride=1, pad=1), bias))


def _halve(x):
    # conv stages downsample by average pooling: odd kernels cannot hit the
    # exact-H/2 output contract with stride 2, so stride stays 1 here
    return T.mul(T.sum_pool2d(x, 2), Tensor(0.25))


def encode(x, model):
    """Three-scale feature stack: (C, H/4), (2C, H/8), (4C, H/16)."""
    if x.shape[1] % 16 or x.shape[2] % 16:
        raise ShapeError(f"input extent {x.shape[1:]} not divisible by 16")
    h = _halve(_conv_block(x, model.enc1a, model.enc1a_b))
    f1 = _halve(_conv_block(h, model.enc1b, model.enc1b_b))
    f2 = _halve(_conv_block(f1, model.enc2, model.enc2_b))
    f3 = _halve(_conv_block(f2, model.enc3, model.enc3_b))
    return f1, f2, f3


def fpn(f1, f2, f3, model):
    """Top-down pyramid: 1x1 laterals to C channels, upsampled coarser
    levels added in, 3x3 merge convolutions after each addition."""
    p3 = T.conv2d(f3, model.lat3)
    p2 = T.conv2d(
        T.add(T.conv2d(f2, model.lat2), T.upsample_bilinear(p3, 2)),
        model.merge2, stride=1, pad=1)
    p1 = T.conv2d(
        T.add(T.conv2d(f1, model.lat1), T.upsample_bilinear(p2, 2)),
        model.merge1, stride=1, pad=1)
    return p1, p2, p3


def fuse_scales(p1, p2, p3):
    """Bring all levels to the finest scale and stack channels:
    (P1, up2(P2), up4(P3)) -> 3C channels at H/4 x W/4."""
    return T.concat([p1, T.upsample_bilinear(p2, 2), T.upsample_bilinear(p3, 4)],
                    axis=0)


def position_attention(p, params):
    """Pixel-to-pixel attention with residual gain alpha.

    Query/key/value are 1x1 projections of ``p`` flattened to columns per
    spatial position; the attention map row j is a softmax over positions i
    of query_i . key_j; the value mix is scaled by alpha and added to p.
    """
    c, h, w = p.shape
    n = h * w
    q = T.reshape(T.conv2d(p, params.k1), (params.k1.shape[0], n))
    k = T.reshape(T.conv2d(p, params.k2), (params.k2.shape[0], n))
    v = T.reshape(T.conv2d(p, params.k3), (c, n))
    logits = T.matmul(T.transpose(k), q)  # (n, n): row j, column i
    s = T.softmax_axis(logits, axis=1)
    mixed = T.matmul(v, T.transpose(s))  # column j = sum_i s[j,i] v[:,i]
    out = T.add(T.mul(params.alpha, mixed), T.reshape(p, (c, n)))
    return T.reshape(out, (c, h, w))


def channel_attention(p, params):
    """Channel-to-channel attention with residual gain beta.

    No projections here: the map is a softmax over channels i of the Gram
    matrix of the flattened input, normalized per row j.
    """
    c, h, w = p.shape
    flat = T.reshape(p, (c, h * w))
    logits = T.matmul(flat, T.transpose(flat))  # (c, c): row j, column i
    cmap = T.softmax_axis(logits, axis=1)
    mixed = T.matmul(cmap, flat)  # row j = sum_i cmap[j,i] flat[i,:]
    out = T.add(T.mul(params.beta, mixed), flat)
    return T.reshape(out, (c, h, w))


def dual_fuse(f1, f2, params):
    """Concatenate the two attention branches and reduce back to c channels
    with a 1x1 convolution."""
    if f1.shape != f2.shape:
        raise ShapeError(f"branch shapes differ: {f1.shape} vs {f2.shape}")
    return T.conv2d(T.concat([f1, f2], axis=0), params.k_out)


def forward(rgb, nir, model):
    """Full pipeline; returns an N-channel DensityMap at stride 4.

    Output values are unconstrained in sign; negative channel sums are the
    caller's business to flag (the metric report does).
    """
    cfg = model.cfg
    x = assemble_input(rgb, nir if cfg.use_nir else None, cfg)
    f1, f2, f3 = encode(x, model)
    p1, p2, p3 = fpn(f1, f2, f3, model)
    p = fuse_scales(p1, p2, p3)
    if cfg.use_dual_attention:
        fused = dual_fuse(position_attention(p, model.attention),
                          channel_attention(p, model.attention),
                          model.attention)
    else:
        fused = T.conv2d(p, model.reduce)
    pred = T.conv2d(fused, model.projector)
    return DensityMap(model.category_order, pred)


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(stem, model, training_step=0):
    """Write <stem>.bin (parameter tensors, manifest order) and <stem>.json."""
    import json

    from .tensor import write_array

    names = []
    with open(f"{stem}.bin", "wb") as fh:
        for name, p in model.named_parameters():
            write_array(fh, p.data)
            names.append({"name": name, "shape": list(p.shape)})
    manifest = {
        "config": {
            "base_channels": model.cfg.base_channels,
            "num_categories": model.cfg.num_categories,
            "use_nir": model.cfg.use_nir,
            "use_dual_attention": model.cfg.use_dual_attention,
            "input_size": model.cfg.input_size,
            "attention_channel_div": model.cfg.attention_channel_div,
            "channel_mean": list(model.cfg.channel_mean),
            "channel_std": list(model.cfg.channel_std),
        },
        "category_order": model.category_order,
        "parameters": names,
        "training_step": training_step,
    }
    with open(f"{stem}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_checkpoint(stem):
    import json

    from .tensor import read_array

    with open(f"{stem}.json") as fh:
        manifest = json.load(fh)
    raw = dict(manifest["config"])
    raw["channel_mean"] = tuple(raw["channel_mean"])
    raw["channel_std"] = tuple(raw["channel_std"])
    cfg = ModelConfig(**raw)
    model = MccModel(cfg, category_order=manifest["category_order"])
    with open(f"{stem}.bin", "rb") as fh:
        for entry, (name, p) in zip(manifest["parameters"], model.named_parameters()):
            arr = read_array(fh)
            if entry["name"] != name or list(arr.shape) != list(p.shape):
                raise ShapeError(
                    f"checkpoint mismatch at {entry['name']!r}: "
                    f"expected {name!r} with shape {tuple(p.shape)}")
            p.data = arr
    return model, manifest["training_step"]
