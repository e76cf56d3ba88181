"""Analytic-vs-finite-difference gradient verification.

Every differentiable operation, the model stages, the losses and the full
forward+loss composition are registered here with a deterministic random
instance.  The runner reports the worst relative error per unit against
the central-difference oracle; 1e-4 at float64 is the pass bar.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from . import losses, model as M, tensor as T
from .density import DensityMap, IgnoreMask
from .losses import LossConfig
from .model import MccModel, ModelConfig
from .tensor import GradTape, Tensor

THRESHOLD = 1e-4


@dataclass
class CheckResult:
    name: str
    worst_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    scope: str
    threshold: float
    results: list
    elapsed_s: float

    @property
    def all_passed(self):
        return all(r.passed for r in self.results)

    @property
    def worst(self):
        return max(r.worst_rel_err for r in self.results)

    def to_json(self):
        return json.dumps({
            "scope": self.scope,
            "threshold": self.threshold,
            "all_passed": self.all_passed,
            "results": [
                {"name": r.name, "worst_rel_err": r.worst_rel_err, "passed": r.passed}
                for r in self.results
            ],
        }, indent=2) + "\n"

    def format_table(self):
        lines = [f"{'check':<42} {'worst rel err':>14}  status"]
        for r in self.results:
            lines.append(
                f"{r.name:<42} {r.worst_rel_err:>14.3e}  "
                f"{'ok' if r.passed else 'FAIL'}")
        lines.append(f"worst overall: {self.worst:.3e} "
                     f"({'pass' if self.all_passed else 'FAIL'} at {self.threshold:g})")
        return "\n".join(lines)


def _check_param(f, param, eps=1e-6):
    """Worst relative error of backward() against central differences for
    one scalar function of ``param``."""
    param.zero_grad()
    with GradTape() as tape:
        loss = f(param)
        tape.backward(loss)
    analytic = param.grad.copy()
    fd = T.finite_diff_grad(f, param, eps).data
    return T.relative_grad_error(analytic, fd)


# --- ops scope -------------------------------------------------------------

def check_matmul():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    s = Tensor(rng.normal(size=(3, 5)))
    err_a = _check_param(lambda t: T.tsum(T.mul(T.matmul(t, b), s)), a)
    err_b = _check_param(lambda t: T.tsum(T.mul(T.matmul(a, t), s)), b)
    return max(err_a, err_b)


def check_softmax():
    rng = np.random.default_rng(12)
    x = Tensor(rng.normal(size=(4,)), requires_grad=True)
    s = Tensor(rng.normal(size=(4,)))
    return _check_param(lambda t: T.tsum(T.mul(T.softmax_axis(t, 0), s)), x)


def check_softmax_matrix():
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    s = Tensor(rng.normal(size=(3, 5)))
    return _check_param(lambda t: T.tsum(T.mul(T.softmax_axis(t, 1), s)), x)


def check_conv2d():
    rng = np.random.default_rng(14)
    x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
    s = Tensor(rng.normal(size=(2, 6, 6)))
    err_x = _check_param(lambda t: T.tsum(T.mul(T.conv2d(t, w, 1, 1), s)), x)
    err_w = _check_param(lambda t: T.tsum(T.mul(T.conv2d(x, t, 1, 1), s)), w)
    return max(err_x, err_w)


def check_conv2d_strided():
    rng = np.random.default_rng(15)
    x = Tensor(rng.normal(size=(2, 7, 7)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    s = Tensor(rng.normal(size=(3, 3, 3)))
    err_x = _check_param(lambda t: T.tsum(T.mul(T.conv2d(t, w, 2, 0), s)), x)
    err_w = _check_param(lambda t: T.tsum(T.mul(T.conv2d(x, t, 2, 0), s)), w)
    return max(err_x, err_w)


def check_upsample():
    rng = np.random.default_rng(16)
    errs = []
    for factor in (2, 4):
        x = Tensor(rng.normal(size=(1, 3, 3)), requires_grad=True)
        s = Tensor(rng.normal(size=(1, 3 * factor, 3 * factor)))
        errs.append(_check_param(
            lambda t, f=factor, w=s: T.tsum(T.mul(T.upsample_bilinear(t, f), w)), x))
    return max(errs)


def check_sum_pool():
    rng = np.random.default_rng(17)
    x = Tensor(rng.normal(size=(2, 8, 8)), requires_grad=True)
    s = Tensor(rng.normal(size=(2, 4, 4)))
    return _check_param(lambda t: T.tsum(T.mul(T.sum_pool2d(t, 2), s)), x)


def check_concat():
    rng = np.random.default_rng(18)
    a = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 3, 3)), requires_grad=True)
    s = Tensor(rng.normal(size=(3, 3, 3)))
    err_a = _check_param(lambda t: T.tsum(T.mul(T.concat([t, b], 0), s)), a)
    err_b = _check_param(lambda t: T.tsum(T.mul(T.concat([a, t], 0), s)), b)
    return max(err_a, err_b)


def check_silu():
    rng = np.random.default_rng(19)
    x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    s = Tensor(rng.normal(size=(4, 4)))
    return _check_param(lambda t: T.tsum(T.mul(T.silu(t), s)), x)


def check_elementwise_chain():
    rng = np.random.default_rng(20)
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
    s = Tensor(rng.normal(size=(3, 3)))

    def f(t):
        y = T.div(T.mul(t, t), T.add(t, Tensor(1.0)))
        return T.tsum(T.mul(T.sqrt(y), s))
    return _check_param(f, x)


# --- model scope -----------------------------------------------------------

def _tiny_model(use_attention=True, use_nir=True, seed=100):
    cfg = ModelConfig(base_channels=4, num_categories=2, use_nir=use_nir,
                      use_dual_attention=use_attention, input_size=16)
    return MccModel(cfg, np.random.default_rng(seed))


def _tiny_inputs(seed=101, size=16):
    rng = np.random.default_rng(seed)
    return (Tensor(rng.uniform(0, 1, size=(3, size, size))),
            Tensor(rng.uniform(0, 1, size=(1, size, size))))


def check_encode():
    m = _tiny_model()
    rgb, nir = _tiny_inputs()
    x = M.assemble_input(rgb, nir, m.cfg)
    weighting = np.random.default_rng(102).normal(size=(16, 1, 1))

    def f(p):
        _, _, f3 = M.encode(x, m)
        return T.tsum(T.mul(f3, Tensor(weighting)))
    return _check_param(f, m.enc1a)


def check_fpn():
    m = _tiny_model()
    rgb, nir = _tiny_inputs()
    x = M.assemble_input(rgb, nir, m.cfg)

    def f(p):
        p1, p2, p3 = M.fpn(*M.encode(x, m), m)
        return T.tsum(T.add(T.tsum(p1), T.add(T.tsum(p2), T.tsum(p3))))
    return max(_check_param(f, m.lat3), _check_param(f, m.merge1))


def _attention_instance(seed, c=3, h=2, w=2):
    """Unit-scale params and input so the softmax is non-degenerate (the
    pipeline's fresh init gives near-uniform attention whose gradients sit
    below the fd noise floor)."""
    rng = np.random.default_rng(seed)
    params = M.DualAttentionParams(
        k1=Tensor(rng.normal(size=(c, c, 1, 1)), requires_grad=True),
        k2=Tensor(rng.normal(size=(c, c, 1, 1)), requires_grad=True),
        k3=Tensor(rng.normal(size=(c, c, 1, 1)), requires_grad=True),
        alpha=Tensor(0.7, requires_grad=True),
        beta=Tensor(-0.4, requires_grad=True),
        k_out=Tensor(rng.normal(size=(c, 2 * c, 1, 1)), requires_grad=True),
    )
    p = Tensor(rng.normal(size=(c, h, w)), requires_grad=True)
    s = Tensor(rng.normal(size=(c, h, w)))
    return p, params, s


def check_position_attention():
    p, params, s = _attention_instance(103)

    def f(_):
        return T.tsum(T.mul(M.position_attention(p, params), s))
    return max(_check_param(f, p), _check_param(f, params.k1),
               _check_param(f, params.k3), _check_param(f, params.alpha))


def check_channel_attention():
    p, params, s = _attention_instance(104)

    def f(_):
        return T.tsum(T.mul(M.channel_attention(p, params), s))
    return max(_check_param(f, p), _check_param(f, params.beta))


def check_dual_fuse():
    p, params, s = _attention_instance(105)

    def f(_):
        fused = M.dual_fuse(M.position_attention(p, params),
                            M.channel_attention(p, params), params)
        return T.tsum(T.mul(fused, s))
    return max(_check_param(f, p), _check_param(f, params.k_out))


def _composition_loss(m, rgb, nir, gt, mask, loss_cfg):
    pred = M.forward(rgb, nir, m)
    return losses.total_loss(pred, gt, mask, loss_cfg)


def check_full_composition():
    """Every parameter of the full forward+loss pipeline on a 16x16 scene.

    Attention kernels are re-drawn at unit scale and the gains moved off
    zero, so the softmax carries real structure instead of the degenerate
    near-uniform map a fresh init produces.
    """
    m = _tiny_model()
    rng = np.random.default_rng(107)
    for kern in (m.attention.k1, m.attention.k2, m.attention.k3,
                 m.attention.k_out):
        kern.data = rng.normal(size=kern.shape)
    m.attention.alpha.data = np.asarray(0.3)
    m.attention.beta.data = np.asarray(-0.2)
    rgb, nir = _tiny_inputs(seed=106)
    gt = DensityMap(m.category_order, Tensor(rng.uniform(0, 1, size=(2, 4, 4))))
    mask = IgnoreMask((rng.random((2, 4, 4)) > 0.2).astype(np.float64))
    loss_cfg = LossConfig(gamma=1e-2)

    def f(_):
        return _composition_loss(m, rgb, nir, gt, mask, loss_cfg)

    m.zero_grad()
    with GradTape() as tape:
        tape.backward(f(None))
    analytic = {name: p.grad.copy() for name, p in m.named_parameters()}
    worst = 0.0
    for name, p in m.named_parameters():
        # the query/key gradients are O(1e-6); eps=1e-4 keeps the oracle's
        # own roundoff (~1e-13 absolute) below the comparison cushion
        fd = T.finite_diff_grad(f, p, eps=1e-4).data
        worst = max(worst, T.relative_grad_error(analytic[name], fd))
    return worst


def check_forward_no_attention():
    m = _tiny_model(use_attention=False)
    rgb, nir = _tiny_inputs(seed=108)
    rng = np.random.default_rng(109)
    gt = DensityMap(m.category_order, Tensor(rng.uniform(0, 1, size=(2, 4, 4))))
    mask = IgnoreMask(np.ones((2, 4, 4)))
    loss_cfg = LossConfig(gamma=1e-3)
    f = lambda t: _composition_loss(m, rgb, nir, gt, mask, loss_cfg)
    return max(_check_param(f, m.reduce), _check_param(f, m.projector))


# --- losses scope ----------------------------------------------------------

def _random_maps(seed, n=3, h=4, w=4):
    rng = np.random.default_rng(seed)
    pred = DensityMap([f"c{i}" for i in range(n)],
                      Tensor(rng.normal(size=(n, h, w)), requires_grad=True))
    gt = DensityMap(pred.category_order,
                    Tensor(rng.uniform(0, 1, size=(n, h, w))))
    mask = IgnoreMask((rng.random((n, h, w)) > 0.25).astype(np.float64))
    return pred, gt, mask


def check_counting_loss():
    pred, gt, mask = _random_maps(30)

    def f(t):
        return losses.counting_loss(DensityMap(pred.category_order, t), gt, mask)
    return _check_param(f, pred.values)


def check_spatial_contrast_loss():
    pred, _, _ = _random_maps(31)
    cfg = LossConfig()

    def f(t):
        return losses.spatial_contrast_loss(DensityMap(pred.category_order, t), cfg)
    return _check_param(f, pred.values)


def check_total_loss():
    pred, gt, mask = _random_maps(32, n=2)
    cfg = LossConfig(gamma=1e-4)

    def f(t):
        return losses.total_loss(DensityMap(pred.category_order, t), gt, mask, cfg)
    # the gamma-scaled term puts some gradient entries near the fd noise
    # floor at eps=1e-6; 1e-5 balances truncation against roundoff there
    return _check_param(f, pred.values, eps=1e-5)


SCOPES = {
    "ops": [
        ("matmul", check_matmul),
        ("softmax_axis vector", check_softmax),
        ("softmax_axis matrix", check_softmax_matrix),
        ("conv2d stride 1 pad 1", check_conv2d),
        ("conv2d stride 2 pad 0", check_conv2d_strided),
        ("upsample_bilinear x2/x4", check_upsample),
        ("sum_pool2d", check_sum_pool),
        ("concat", check_concat),
        ("silu", check_silu),
        ("elementwise chain (mul/div/sqrt)", check_elementwise_chain),
    ],
    "model": [
        ("encode (first-stage kernel)", check_encode),
        ("fpn (lateral + merge)", check_fpn),
        ("position_attention (k1, alpha)", check_position_attention),
        ("channel_attention (beta, encoder)", check_channel_attention),
        ("dual_fuse (k_out)", check_dual_fuse),
        ("forward+loss, all parameters", check_full_composition),
        ("forward without attention", check_forward_no_attention),
    ],
    "losses": [
        ("counting_loss", check_counting_loss),
        ("spatial_contrast_loss", check_spatial_contrast_loss),
        ("total_loss", check_total_loss),
    ],
}


def run_gradcheck(scope="all", threshold=THRESHOLD):
    if scope == "all":
        names = ["ops", "model", "losses"]
    elif scope in SCOPES:
        names = [scope]
    else:
        raise ValueError(f"unknown gradcheck scope {scope!r}")
    t0 = time.perf_counter()
    results = []
    for group in names:
        for label, fn in SCOPES[group]:
            err = fn()
            results.append(CheckResult(f"{group}: {label}", err, err <= threshold))
    return GradCheckReport(scope, threshold, results, time.perf_counter() - t0)
