"""Toy training loop: AdamW-style updates, per-epoch learning-rate decay,
gradient accumulation over small batches, and deterministic augmentation.

Scenes are processed one at a time; gradients accumulate over
``batch_size`` scenes before each parameter update.  Everything is a pure
function of the seed.
"""

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses, metrics, model as M, taxonomy
from .density import GaussianKernelSpec, IgnoreMask, generate_gt, count_from_density
from .losses import LossConfig
from .model import MccModel, ModelConfig, OUTPUT_STRIDE
from .tensor import GradTape, Tensor, no_grad


class TrainingDiverged(ArithmeticError):
    """Raised when the loss goes non-finite; carries a diagnostic state dump."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-5
    lr_decay_per_epoch: float = 0.995
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-2
    batch_size: int = 1
    seed: int = 0
    augment: tuple = ("hflip",)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    kernel: GaussianKernelSpec = field(default_factory=lambda: GaussianKernelSpec(2.0, 5))

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError("lr_decay_per_epoch must lie in (0, 1]")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.loss.validate()
        self.model.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["augment"] = list(self.augment)
        d["model"]["channel_mean"] = list(self.model.channel_mean)
        d["model"]["channel_std"] = list(self.model.channel_std)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        mraw = dict(d.pop("model", {}))
        if "channel_mean" in mraw:
            mraw["channel_mean"] = tuple(mraw["channel_mean"])
        if "channel_std" in mraw:
            mraw["channel_std"] = tuple(mraw["channel_std"])
        model = ModelConfig(**mraw)
        kraw = d.pop("kernel", None)
        kernel = GaussianKernelSpec(**kraw) if kraw else GaussianKernelSpec(2.0, 5)
        d["augment"] = tuple(d.get("augment", ("hflip",)))
        return cls(loss=loss, model=model, kernel=kernel, **d)


@dataclass
class ExperimentResult:
    seed: int
    loss_counting: list
    loss_spatial: list
    loss_total: list
    mean_offdiag_similarity: float
    report: metrics.MetricReport
    wall_clock_s: float

    def to_dict(self):
        return {
            "seed": self.seed,
            "loss_counting": self.loss_counting,
            "loss_spatial": self.loss_spatial,
            "loss_total": self.loss_total,
            "mean_offdiag_similarity": self.mean_offdiag_similarity,
            "report": self.report.to_dict() if self.report else None,
            "wall_clock_s": self.wall_clock_s,
        }


class AdamW:
    """Adaptive moment estimates with decoupled weight decay."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, weight_decay=0.0,
                 eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = np.asarray(
                p.data - self.lr * (update + self.weight_decay * p.data))

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass
class Scene:
    """One training/eval sample: rasters plus annotations and cached GT."""

    rgb: np.ndarray          # (3, H, W)
    nir: np.ndarray          # (1, H, W)
    annotations: taxonomy.AnnotationSet
    gt: object = None        # DensityMap, rendered lazily
    mask: object = None      # IgnoreMask

    def render_gt(self, kernel_spec):
        if self.gt is None:
            self.gt, self.mask = generate_gt(
                self.annotations, kernel_spec, OUTPUT_STRIDE)
        return self.gt, self.mask


def _flip_scene(scene):
    """Mirror rasters, density and mask along the width axis; exact because
    the stamp kernel is symmetric."""
    gt_flipped = M.DensityMap(
        scene.gt.category_order,
        Tensor(np.flip(scene.gt.values.data, axis=2).copy()))
    mask_flipped = IgnoreMask(np.flip(scene.mask.mask, axis=2).copy())
    return (np.flip(scene.rgb, axis=2).copy(),
            np.flip(scene.nir, axis=2).copy(), gt_flipped, mask_flipped)


def train_model(cfg, scenes, category_order, eval_scenes=None, log=None):
    """Train a fresh model on ``scenes``; returns (model, ExperimentResult).

    Deterministic for a fixed config: model init, shuffling and flips all
    derive from ``cfg.seed``.  Raises :class:`TrainingDiverged` on a
    non-finite loss.
    """
    cfg.validate()
    t_start = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 0xA11])
    model = MccModel(cfg.model, np.random.default_rng([cfg.seed, 0x707]),
                     category_order)
    for s in scenes:
        s.render_gt(cfg.kernel)
    opt = AdamW(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2,
                cfg.weight_decay)
    hflip = "hflip" in cfg.augment

    loss_c_hist, loss_s_hist, loss_t_hist = [], [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(scenes))
        sum_c = sum_s = sum_t = 0.0
        since_step = 0
        opt.zero_grad()
        for si in order:
            scene = scenes[si]
            if hflip and rng.random() < 0.5:
                rgb, nir, gt, mask = _flip_scene(scene)
            else:
                rgb, nir, gt, mask = scene.rgb, scene.nir, scene.gt, scene.mask
            with GradTape() as tape:
                pred = M.forward(rgb, nir, model)
                l_c = losses.counting_loss(pred, gt, mask)
                if cfg.loss.gamma > 0:
                    l_s = losses.spatial_contrast_loss(pred, cfg.loss)
                    total = l_c + Tensor(cfg.loss.gamma) * l_s
                    l_s_val = l_s.item()
                else:
                    total = l_c
                    l_s_val = 0.0
                total_val = total.item()
                if not np.isfinite(total_val):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, scene {int(si)}",
                        state={
                            "epoch": epoch, "scene_index": int(si),
                            "loss_counting": l_c.item(), "loss_spatial": l_s_val,
                            "loss_history": loss_t_hist,
                            "learning_rate": opt.lr, "seed": cfg.seed,
                        })
                tape.backward(total)
            sum_c += l_c.item()
            sum_s += l_s_val
            sum_t += total_val
            since_step += 1
            if since_step == cfg.batch_size:
                opt.step()
                opt.zero_grad()
                since_step = 0
        if since_step:
            opt.step()
            opt.zero_grad()
        n = len(scenes)
        loss_c_hist.append(sum_c / n)
        loss_s_hist.append(sum_s / n)
        loss_t_hist.append(sum_t / n)
        opt.lr *= cfg.lr_decay_per_epoch
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs}: "
                f"L_C={loss_c_hist[-1]:.6g} L_S={loss_s_hist[-1]:.6g} "
                f"total={loss_t_hist[-1]:.6g}")

    report, _, offdiag = evaluate_model(
        model, eval_scenes if eval_scenes is not None else scenes, cfg.kernel)
    result = ExperimentResult(
        seed=cfg.seed,
        loss_counting=loss_c_hist,
        loss_spatial=loss_s_hist,
        loss_total=loss_t_hist,
        mean_offdiag_similarity=offdiag,
        report=report,
        wall_clock_s=time.perf_counter() - t_start,
    )
    return model, result


def offdiag_similarity(values):
    """Mean off-diagonal cosine similarity between channels of one map."""
    n = values.shape[0]
    if n < 2:
        return 0.0
    flat = values.reshape(n, -1)
    norms = np.maximum(np.sqrt((flat * flat).sum(axis=1)), 1e-12)
    m = (flat / norms[:, None]) @ (flat / norms[:, None]).T
    return float((m.sum() - np.trace(m)) / (n * n - n))


def evaluate_model(model, scenes, kernel_spec):
    """Forward every scene; counts come from masked density sums, ground
    truth from the annotations.  Returns (MetricReport, records, mean
    off-diagonal channel similarity of the predictions)."""
    records = []
    offdiags = []
    for i, scene in enumerate(scenes):
        scene.render_gt(kernel_spec)
        with no_grad():
            pred = M.forward(scene.rgb, scene.nir, model)
        pred_counts = count_from_density(pred, scene.mask)
        gt_counts = taxonomy.counts(scene.annotations)
        records.append(metrics.CountRecord(
            scene.annotations.image_id or f"scene_{i}",
            {c: float(gt_counts.get(c, 0)) for c in model.category_order},
            {c: pred_counts[c] for c in model.category_order}))
        offdiags.append(offdiag_similarity(pred.values.data))
    report = metrics.build_report(records, model.category_order)
    return report, records, float(np.mean(offdiags)) if offdiags else 0.0
