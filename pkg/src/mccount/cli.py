"""Command-line interface.

Verbs: ``synth`` (scene generation), ``densify`` (ground-truth density
rendering), ``train``, ``eval``, ``ablate`` and ``gradcheck``.  Every verb
takes ``--config <json>`` plus verb-specific flags.  Exit codes: 0 success,
1 validation failure, 2 numerical failure.  ``MOC_THREADS`` caps worker
parallelism for ablation cells.
"""

import argparse
import glob
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import ablate as ablate_mod
from . import density, gradcheck, taxonomy
from .model import OUTPUT_STRIDE, load_checkpoint, save_checkpoint
from .scenes import SceneConfig, synth_scene
from .tensor import read_array, write_array
from .training import Scene, TrainConfig, TrainingDiverged, train_model, evaluate_model


class ValidationFailure(Exception):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationFailure(f"cannot read config {path}: {exc}") from exc


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _save_png(path, array):
    from PIL import Image

    arr = np.clip(array, 0.0, 1.0)
    if arr.ndim == 3 and arr.shape[0] == 3:
        img = Image.fromarray(
            (arr.transpose(1, 2, 0) * 255).round().astype(np.uint8), "RGB")
    else:
        img = Image.fromarray(
            (arr.reshape(arr.shape[-2:]) * 255).round().astype(np.uint8), "L")
    img.save(path)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args):
    raw = _load_json(args.config)
    n_scenes = int(raw.pop("n_scenes", 1))
    want_png = bool(raw.pop("png", False)) or args.png
    if raw.get("nir_only_categories") is not None:
        raw["nir_only_categories"] = tuple(raw["nir_only_categories"])
    try:
        cfg = SceneConfig(**raw).validate()
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"invalid scene config: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    os.makedirs(args.out, exist_ok=True)

    manifest = {"config": {**raw, "seed": cfg.seed,
                           "nir_only_categories": (
                               list(cfg.nir_only_categories)
                               if cfg.nir_only_categories is not None else None)},
                "n_scenes": n_scenes, "scenes": []}
    from dataclasses import replace

    for i in range(n_scenes):
        scene_cfg = replace(cfg, seed=cfg.seed + i)
        rgb, nir, anno = synth_scene(scene_cfg)
        stem = f"scene_{i:04d}"
        anno.image_id = stem
        files = [f"{stem}.rgb.t64", f"{stem}.nir.t64", f"{stem}.anno.json"]
        with open(os.path.join(args.out, files[0]), "wb") as fh:
            write_array(fh, rgb.data)
        with open(os.path.join(args.out, files[1]), "wb") as fh:
            write_array(fh, nir.data)
        taxonomy.save_annotations(anno, os.path.join(args.out, files[2]))
        if want_png:
            _save_png(os.path.join(args.out, f"{stem}.rgb.png"), rgb.data)
            _save_png(os.path.join(args.out, f"{stem}.nir.png"), nir.data)
            files += [f"{stem}.rgb.png", f"{stem}.nir.png"]
        manifest["scenes"].append(
            {"stem": stem, "seed": scene_cfg.seed, "files": files})
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {n_scenes} scenes to {args.out}")
    return 0


def load_scene_dir(path):
    """Load scenes written by ``synth`` (manifest preferred, glob fallback)."""
    manifest_path = os.path.join(path, "manifest.json")
    if os.path.exists(manifest_path):
        stems = [s["stem"] for s in _load_json(manifest_path)["scenes"]]
    else:
        stems = sorted(os.path.basename(p)[: -len(".anno.json")]
                       for p in glob.glob(os.path.join(path, "*.anno.json")))
    if not stems:
        raise ValidationFailure(f"no scenes found in {path}")
    scenes = []
    for stem in stems:
        anno = taxonomy.load_annotations(os.path.join(path, f"{stem}.anno.json"))
        with open(os.path.join(path, f"{stem}.rgb.t64"), "rb") as fh:
            rgb = read_array(fh)
        with open(os.path.join(path, f"{stem}.nir.t64"), "rb") as fh:
            nir = read_array(fh)
        scenes.append(Scene(rgb, nir, anno))
    return scenes


# ---------------------------------------------------------------------------
# densify

def cmd_densify(args):
    raw = _load_json(args.config) if args.config else {}
    sigma = args.sigma if args.sigma is not None else raw.get("sigma", 2.0)
    size = args.size if args.size is not None else raw.get("size", 5)
    stride = args.stride if args.stride is not None else raw.get(
        "stride", OUTPUT_STRIDE)
    try:
        spec = density.GaussianKernelSpec(float(sigma), int(size))
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"invalid kernel spec: {exc}") from exc
    paths = sorted(glob.glob(os.path.join(args.annotations, "*.anno.json")))
    os.makedirs(args.out, exist_ok=True)
    failures = 0
    for path in paths:
        stem = os.path.basename(path)[: -len(".anno.json")]
        try:
            anno = taxonomy.load_annotations(path)
            dmap, mask = density.generate_gt(anno, spec, stride)
            expected = taxonomy.counts(anno)
            sums = density.count_from_density(dmap)
            for cat, total in sums.items():
                if abs(total - expected[cat]) > 1e-6 * max(1.0, expected[cat]):
                    print(f"{stem}: count drift on {cat!r}: "
                          f"rendered {total:.9f} vs annotated {expected[cat]}",
                          file=sys.stderr)
            density.save_density(os.path.join(args.out, stem), dmap, mask,
                                 spec, stride)
            print(f"{stem}: ok ({sum(expected.values())} points, "
                  f"{dmap.channels} channels)")
        except (taxonomy.AnnotationError, ValueError, OSError) as exc:
            failures += 1
            print(f"{stem}: FAILED: {exc}", file=sys.stderr)
    print(f"densified {len(paths) - failures}/{len(paths)} annotation files")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# train / eval

def _train_config(path):
    try:
        return TrainConfig.from_dict(_load_json(path)).validate()
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationFailure(f"invalid train config: {exc}") from exc


def cmd_train(args):
    cfg = _train_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    scenes = load_scene_dir(args.data)
    category_order = list(scenes[0].annotations.points.keys())
    if len(category_order) != cfg.model.num_categories:
        raise ValidationFailure(
            f"data has {len(category_order)} categories but model expects "
            f"{cfg.model.num_categories}")
    try:
        model, result = train_model(cfg, scenes, category_order,
                                    log=lambda msg: print(msg))
    except TrainingDiverged as exc:
        dump = f"{args.out}.diverged.json"
        _write_json(dump, exc.state)
        print(f"training diverged: {exc} (state dump: {dump})", file=sys.stderr)
        return 2
    save_checkpoint(args.out, model, training_step=cfg.epochs * len(scenes))
    payload = {"config": cfg.to_dict(), **result.to_dict()}
    # timing stays on the console; persisted artifacts are reproducible
    payload.pop("wall_clock_s", None)
    _write_json(f"{args.out}.result.json", payload)
    print(f"checkpoint: {args.out}.bin, result: {args.out}.result.json "
          f"({result.wall_clock_s:.1f}s)")
    return 0


def cmd_eval(args):
    model, _ = load_checkpoint(args.checkpoint)
    scenes = load_scene_dir(args.data)
    if args.taxonomy:
        tax = taxonomy.CategoryTaxonomy.from_json(args.taxonomy)
    else:
        tax = None
    if tax and set(model.category_order) == set(tax.group_names):
        fine = set(tax.fine_names)
        for s in scenes:
            if set(s.annotations.points) <= fine and \
               set(s.annotations.points) != set(tax.group_names):
                s.annotations = taxonomy.group_to_moc6(s.annotations, tax)
                s.gt = s.mask = None
    cfg = _train_config(args.config) if args.config else TrainConfig()
    report, records, offdiag = evaluate_model(model, scenes, cfg.kernel)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(report.to_csv())
    _write_json(os.path.join(args.out, "records.json"),
                [{"image_id": r.image_id, "gt": r.gt, "pred": r.pred}
                 for r in records])
    print(f"evaluated {len(records)} scenes: mean-MSE {report.mse_mean:.4f}, "
          f"WMSE {report.wmse:.4f}, mean off-diagonal similarity {offdiag:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate / gradcheck

def cmd_ablate(args):
    try:
        cfg = ablate_mod.AblationConfig.from_dict(_load_json(args.config))
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationFailure(f"invalid ablation config: {exc}") from exc
    if len(cfg.seeds) < 1:
        raise ValidationFailure("ablation needs at least one seed")
    if args.axis == "gamma":
        table = ablate_mod.run_gamma_ablation(cfg)
        stem = "gamma_ablation"
    else:
        table = ablate_mod.run_component_ablation(cfg)
        stem = "component_ablation"
    ablate_mod.save_table(table, args.out, stem)
    print(ablate_mod.table_to_csv(table))
    print(f"wrote {stem}.json / {stem}.csv to {args.out}")
    return 0


def cmd_gradcheck(args):
    report = gradcheck.run_gradcheck(args.scope)
    print(report.format_table())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
    return 0 if report.all_passed else 2


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="mccount",
        description="Multi-category object counting toolkit")
    sub = p.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("synth", help="generate synthetic scenes")
    sp.add_argument("--config", required=True, help="scene config JSON")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=None, help="override base seed")
    sp.add_argument("--png", action="store_true", help="also export PNGs")
    sp.set_defaults(fn=cmd_synth)

    dp = sub.add_parser("densify", help="render ground-truth density maps")
    dp.add_argument("--annotations", required=True, help="directory of *.anno.json")
    dp.add_argument("--config", default=None,
                    help="kernel config JSON (sigma, size, stride)")
    dp.add_argument("--sigma", type=float, default=None)
    dp.add_argument("--size", type=int, default=None)
    dp.add_argument("--stride", type=int, default=None)
    dp.add_argument("--out", required=True)
    dp.set_defaults(fn=cmd_densify)

    tp = sub.add_parser("train", help="train on a scene directory")
    tp.add_argument("--config", required=True, help="train config JSON")
    tp.add_argument("--data", required=True, help="scene directory")
    tp.add_argument("--out", required=True, help="checkpoint stem")
    tp.add_argument("--seed", type=int, default=None, help="override seed")
    tp.set_defaults(fn=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint")
    ep.add_argument("--checkpoint", required=True, help="checkpoint stem")
    ep.add_argument("--data", required=True, help="scene directory")
    ep.add_argument("--taxonomy", default=None, help="taxonomy JSON")
    ep.add_argument("--config", default=None,
                    help="train config JSON (kernel spec for GT rendering)")
    ep.add_argument("--out", required=True, help="report directory")
    ep.set_defaults(fn=cmd_eval)

    ap = sub.add_parser("ablate", help="run an ablation sweep")
    ap.add_argument("--axis", required=True,
                    choices=("gamma", "nir", "dual-attention"))
    ap.add_argument("--config", required=True, help="ablation config JSON")
    ap.add_argument("--out", required=True)
    ap.set_defaults(fn=cmd_ablate)

    gp = sub.add_parser("gradcheck", help="verify gradients against the "
                        "finite-difference oracle")
    gp.add_argument("--scope", default="all",
                    choices=("ops", "model", "losses", "all"))
    gp.add_argument("--out", default=None, help="write JSON report here")
    gp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (taxonomy.AnnotationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
