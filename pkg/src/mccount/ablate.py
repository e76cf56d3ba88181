"""Ablation sweeps: the contrast-loss weight grid and the 2x2
NIR / dual-attention component grid.

Each cell trains a fresh model under identical seeds and data so
comparisons are paired per seed; trends are reported with per-seed values
and a sign test rather than a single run.  Cells can run as independent
parallel processes, capped by the ``MOC_THREADS`` environment variable.
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace

import numpy as np

from .scenes import SceneConfig, synth_scene
from .training import Scene, TrainConfig, train_model

GAMMA_GRID = (0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)

# Table-style component grid: (use_nir, use_dual_attention)
COMPONENT_GRID = ((False, False), (True, False), (False, True), (True, True))


@dataclass
class AblationConfig:
    train: TrainConfig
    scene: SceneConfig
    n_train_scenes: int = 12
    n_eval_scenes: int = 6
    seeds: tuple = (1, 2, 3, 4, 5)

    def to_dict(self):
        d = {"train": self.train.to_dict(), "scene": asdict(self.scene),
             "n_train_scenes": self.n_train_scenes,
             "n_eval_scenes": self.n_eval_scenes, "seeds": list(self.seeds)}
        d["scene"]["nir_only_categories"] = (
            list(self.scene.nir_only_categories)
            if self.scene.nir_only_categories is not None else None)
        return d

    @classmethod
    def from_dict(cls, d):
        scene_raw = dict(d["scene"])
        if scene_raw.get("nir_only_categories") is not None:
            scene_raw["nir_only_categories"] = tuple(scene_raw["nir_only_categories"])
        return cls(
            train=TrainConfig.from_dict(d["train"]),
            scene=SceneConfig(**scene_raw),
            n_train_scenes=int(d.get("n_train_scenes", 12)),
            n_eval_scenes=int(d.get("n_eval_scenes", 6)),
            seeds=tuple(d.get("seeds", (1, 2, 3, 4, 5))),
        )


def build_scenes(scene_cfg, n, seed_offset=0):
    """n deterministic scenes seeded scene_cfg.seed + seed_offset + i."""
    out = []
    for i in range(n):
        cfg = replace(scene_cfg, seed=scene_cfg.seed + seed_offset + i)
        rgb, nir, anno = synth_scene(cfg)
        out.append(Scene(rgb.data, nir.data, anno))
    return out


def run_cell(cfg_dict, cell):
    """Train one ablation cell (picklable worker).

    ``cell`` carries the axis overrides: {"gamma": g} or
    {"use_nir": b, "use_dual_attention": b}, plus "seed".
    """
    cfg = AblationConfig.from_dict(cfg_dict)
    seed = int(cell["seed"])
    train_cfg = cfg.train
    train_cfg.seed = seed
    if "gamma" in cell:
        train_cfg.loss.gamma = float(cell["gamma"])
    if "use_nir" in cell:
        train_cfg.model.use_nir = bool(cell["use_nir"])
        train_cfg.model.use_dual_attention = bool(cell["use_dual_attention"])

    # data is a pure function of the run seed, shared by every cell of the
    # same seed so comparisons are paired
    data_offset = seed * 10_000
    train_scenes = build_scenes(cfg.scene, cfg.n_train_scenes, data_offset)
    eval_scenes = build_scenes(cfg.scene, cfg.n_eval_scenes,
                               data_offset + cfg.n_train_scenes)
    category_order = list(cfg.scene.category_intensities.keys())
    _, result = train_model(train_cfg, train_scenes, category_order,
                            eval_scenes=eval_scenes)
    out = dict(cell)
    out.update({
        "mse_mean": result.report.mse_mean,
        "wmse": result.report.wmse,
        "offdiag_similarity": result.mean_offdiag_similarity,
        "mae": result.report.mae,
        "final_loss_counting": result.loss_counting[-1],
    })
    return out


def _worker_count():
    raw = os.environ.get("MOC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_cells(cfg, cells):
    cfg_dict = cfg.to_dict()
    workers = min(_worker_count(), len(cells))
    if workers <= 1:
        return [run_cell(cfg_dict, cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, [cfg_dict] * len(cells), cells))


def sign_test(n_favorable, n_total):
    """One-sided binomial tail P(X >= n_favorable) under p = 1/2."""
    return sum(math.comb(n_total, k) for k in range(n_favorable, n_total + 1)) / 2 ** n_total


def run_gamma_ablation(cfg, gammas=GAMMA_GRID):
    """Sweep the contrast-loss weight over shared seeds."""
    cells = [{"gamma": g, "seed": s} for g in gammas for s in cfg.seeds]
    results = _run_cells(cfg, cells)
    by_gamma = {g: sorted((r for r in results if r["gamma"] == g),
                          key=lambda r: r["seed"]) for g in gammas}
    baseline = {r["seed"]: r for r in by_gamma[gammas[0]]} if 0.0 in gammas else {}
    rows = []
    for g in gammas:
        cellset = by_gamma[g]
        row = {
            "gamma": g,
            "mse_mean": float(np.mean([r["mse_mean"] for r in cellset])),
            "wmse": float(np.mean([r["wmse"] for r in cellset])),
            "offdiag_similarity": float(np.mean([r["offdiag_similarity"] for r in cellset])),
            "per_seed": cellset,
        }
        if baseline and g != 0.0:
            lower = sum(1 for r in cellset
                        if r["offdiag_similarity"]
                        < baseline[r["seed"]]["offdiag_similarity"])
            row["offdiag_below_baseline_seeds"] = lower
            row["offdiag_sign_test_p"] = sign_test(lower, len(cellset))
        rows.append(row)
    return {"axis": "gamma", "seeds": list(cfg.seeds), "rows": rows}


def run_component_ablation(cfg):
    """The 2x2 NIR x dual-attention grid over shared seeds."""
    cells = [{"use_nir": nir, "use_dual_attention": attn, "seed": s}
             for nir, attn in COMPONENT_GRID for s in cfg.seeds]
    results = _run_cells(cfg, cells)
    rows = []
    for nir, attn in COMPONENT_GRID:
        cellset = sorted((r for r in results
                          if r["use_nir"] == nir and r["use_dual_attention"] == attn),
                         key=lambda r: r["seed"])
        rows.append({
            "use_nir": nir,
            "use_dual_attention": attn,
            "mse_mean": float(np.mean([r["mse_mean"] for r in cellset])),
            "wmse": float(np.mean([r["wmse"] for r in cellset])),
            "offdiag_similarity": float(np.mean([r["offdiag_similarity"] for r in cellset])),
            "per_seed": cellset,
        })
    return {"axis": "components", "seeds": list(cfg.seeds), "rows": rows}


def table_to_csv(table):
    buf = io.StringIO()
    w = csv.writer(buf)
    if table["axis"] == "gamma":
        w.writerow(["gamma", "mse_mean", "wmse", "offdiag_similarity",
                    "offdiag_below_baseline_seeds"])
        for row in table["rows"]:
            w.writerow([row["gamma"], f"{row['mse_mean']:.6f}",
                        f"{row['wmse']:.6f}", f"{row['offdiag_similarity']:.6f}",
                        row.get("offdiag_below_baseline_seeds", "")])
    else:
        w.writerow(["use_nir", "use_dual_attention", "mse_mean", "wmse",
                    "offdiag_similarity"])
        for row in table["rows"]:
            w.writerow([row["use_nir"], row["use_dual_attention"],
                        f"{row['mse_mean']:.6f}", f"{row['wmse']:.6f}",
                        f"{row['offdiag_similarity']:.6f}"])
    return buf.getvalue()


def save_table(table, out_dir, stem):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
        json.dump(table, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, f"{stem}.csv"), "w") as fh:
        fh.write(table_to_csv(table))
