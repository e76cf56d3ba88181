"""Counting error metrics and the long-tail-aware weighted aggregate.

Per-category MAE and RMSE over a set of images, the inter-category mean of
per-category MSE, and a weighted MSE whose weights come from a softmax over
reciprocal log count-to-median ratios, so rare categories weigh more.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class CountRecord:
    """Ground-truth and predicted counts for one image.

    Predictions may be negative (density sums are unconstrained); ground
    truth is nonnegative.
    """

    image_id: str
    gt: dict
    pred: dict

    def validate(self):
        if set(self.gt) != set(self.pred):
            raise ValueError(
                f"{self.image_id}: gt and pred category sets differ")
        return self


@dataclass
class CategoryWeights:
    categories: list
    weights: dict          # category -> w_i, sums to 1
    source_counts: dict    # category -> C_i
    median: float
    mode: str              # "log_median_ratio" | "inverse_frequency"


@dataclass
class MetricReport:
    categories: list
    mae: dict
    rmse: dict
    mse: dict
    mse_mean: float        # (1/N) sum of per-category MSE
    rmse_mean: float       # auxiliary: plain mean of per-category RMSE
    wmse: float
    weights: CategoryWeights
    n_images: int
    negative_prediction_categories: list = field(default_factory=list)
    empty_categories: list = field(default_factory=list)

    def to_dict(self):
        return {
            "categories": self.categories,
            "mae": self.mae,
            "rmse": self.rmse,
            "mse": self.mse,
            "mse_mean": self.mse_mean,
            "rmse_mean": self.rmse_mean,
            "wmse": self.wmse,
            "weights": {
                "categories": self.weights.categories,
                "weights": self.weights.weights,
                "source_counts": self.weights.source_counts,
                "median": self.weights.median,
                "mode": self.weights.mode,
            },
            "n_images": self.n_images,
            "negative_prediction_categories": self.negative_prediction_categories,
            "empty_categories": self.empty_categories,
        }

    @classmethod
    def from_dict(cls, d):
        w = d["weights"]
        return cls(
            categories=list(d["categories"]),
            mae=dict(d["mae"]), rmse=dict(d["rmse"]), mse=dict(d["mse"]),
            mse_mean=d["mse_mean"], rmse_mean=d["rmse_mean"], wmse=d["wmse"],
            weights=CategoryWeights(list(w["categories"]), dict(w["weights"]),
                                    dict(w["source_counts"]), w["median"], w["mode"]),
            n_images=d["n_images"],
            negative_prediction_categories=list(d["negative_prediction_categories"]),
            empty_categories=list(d["empty_categories"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["category", "MAE", "RMSE", "MSE", "weight"])
        for cat in self.categories:
            w.writerow([cat, f"{self.mae[cat]:.6f}", f"{self.rmse[cat]:.6f}",
                        f"{self.mse[cat]:.6f}", f"{self.weights.weights[cat]:.6f}"])
        w.writerow(["mean-MSE", f"{self.mse_mean:.6f}", "", "", ""])
        w.writerow(["WMSE", f"{self.wmse:.6f}", "", "", ""])
        return buf.getvalue()


def _errors(records, category):
    vals = [r.pred[category] - r.gt[category] for r in records if category in r.gt]
    return vals


def mae(records, category):
    """Mean absolute count error for one category."""
    errs = _errors(records, category)
    if not errs:
        raise ValueError(f"no records for category {category!r}")
    return float(np.mean(np.abs(errs)))


def mse(records, category):
    errs = _errors(records, category)
    if not errs:
        raise ValueError(f"no records for category {category!r}")
    return float(np.mean(np.square(errs)))


def rmse(records, category):
    """Root mean squared count error for one category."""
    return math.sqrt(mse(records, category))


def mse_bar(records, categories):
    """Mean over categories of per-category MSE; categories with no records
    contribute 0 (callers flag them)."""
    if not categories:
        raise ValueError("no categories")
    total = 0.0
    for cat in categories:
        errs = _errors(records, cat)
        total += float(np.mean(np.square(errs))) if errs else 0.0
    return total / len(categories)


def category_weights(counts, eps=1e-6, mode="log_median_ratio"):
    """Softmax weights over per-category totals.

    ``log_median_ratio`` inverts the log ratio of each total to the median
    total, with two guards: +1 inside the ratio (zero counts) and a
    magnitude clamp at ``eps`` (totals equal to the median, where the
    reciprocal diverges), sign preserved.  ``inverse_frequency`` is the
    plain softmax over -ln(C_i + 1).
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    cats = list(counts.keys())
    c = np.asarray([counts[k] for k in cats], dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("counts must be >= 0")
    med = float(np.median(c))
    if mode == "log_median_ratio":
        d = np.log((c + 1.0) / (med + 1.0))
        sign = np.where(d >= 0, 1.0, -1.0)
        fr = 1.0 / (sign * np.maximum(np.abs(d), eps))
    elif mode == "inverse_frequency":
        fr = -np.log(c + 1.0)
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    z = fr - fr.max()
    ez = np.exp(z)
    w = ez / ez.sum()
    return CategoryWeights(cats, {k: float(v) for k, v in zip(cats, w)},
                           {k: float(v) for k, v in zip(cats, c)}, med, mode)


def wmse(records, weights):
    """(1/N) sum over categories of w_i * MSE_i."""
    cats = weights.categories
    total = 0.0
    for cat in cats:
        errs = _errors(records, cat)
        if not errs:
            raise ValueError(f"records and weights disagree: no records for {cat!r}")
        total += weights.weights[cat] * float(np.mean(np.square(errs)))
    return total / len(cats)


def build_report(records, categories, eps=1e-6, weight_mode="log_median_ratio"):
    """Assemble the full metric table for a record set."""
    categories = list(categories)
    for r in records:
        r.validate()
    mae_d, rmse_d, mse_d = {}, {}, {}
    empty, negative = [], []
    for cat in categories:
        errs = _errors(records, cat)
        if errs:
            mse_i = float(np.mean(np.square(errs)))
            mae_d[cat] = float(np.mean(np.abs(errs)))
        else:
            mse_i = 0.0
            mae_d[cat] = 0.0
            empty.append(cat)
        mse_d[cat] = mse_i
        rmse_d[cat] = math.sqrt(mse_i)
        if any(r.pred.get(cat, 0.0) < 0 for r in records):
            negative.append(cat)
        if records and not any(r.gt.get(cat, 0.0) > 0 for r in records):
            if cat not in empty:
                empty.append(cat)
    totals = {cat: float(sum(r.gt.get(cat, 0.0) for r in records)) for cat in categories}
    weights = category_weights(totals, eps=eps, mode=weight_mode)
    n = len(categories)
    return MetricReport(
        categories=categories,
        mae=mae_d, rmse=rmse_d, mse=mse_d,
        mse_mean=sum(mse_d.values()) / n,
        rmse_mean=sum(rmse_d.values()) / n,
        wmse=sum(weights.weights[c] * mse_d[c] for c in categories) / n,
        weights=weights,
        n_images=len(records),
        negative_prediction_categories=negative,
        empty_categories=empty,
    )
