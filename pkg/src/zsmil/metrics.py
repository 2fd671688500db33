"""Balanced accuracy, run summaries, table rendering, attention export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyBag, EmptyClass, EmptyList, ShapeMismatch

SCHEMA_VERSION = 1


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # S x S int64, rows = true class, cols = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeMismatch(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ShapeMismatch("confusion counts must be nonnegative")

    @classmethod
    def from_labels(cls, y_true, y_pred, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        for t, p in zip(y_true, y_pred, strict=True):
            counts[t, p] += 1
        return cls(counts)

    def per_class_recall(self) -> list[float]:
        row_sums = self.counts.sum(axis=1)
        if (row_sums == 0).any():
            missing = int(np.argmax(row_sums == 0))
            raise EmptyClass(f"class {missing} has no true samples")
        return [float(self.counts[c, c] / row_sums[c]) for c in range(self.counts.shape[0])]


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean over classes of per-class recall."""
    recalls = cm.per_class_recall()
    return float(sum(recalls) / len(recalls))


def summarize(values) -> tuple[float, float, bool]:
    """(mean, sample std with n-1 denominator, degenerate-flag). n=1 gives std 0, flagged."""
    values = [float(v) for v in values]
    if not values:
        raise EmptyList("cannot summarize an empty list")
    mean = sum(values) / len(values)
    if len(values) == 1:
        return mean, 0.0, True
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, float(np.sqrt(var)), False


def render_table(report: dict) -> str:
    """Plain-text table: one row per arm, one mean+-std cell per k, percent, 2 decimals."""
    k_values = report["k_values"]
    rows = []
    name_w = max([len("zero-shot")] + [len(a["name"]) for a in report["arms"]]) + 2
    header = "arm".ljust(name_w) + "".join(f"k={k}".rjust(16) for k in k_values)
    rows.append(header)
    rows.append("-" * len(header))
    if "zero_shot" in report:
        zs = f"{100.0 * report['zero_shot']['balanced_accuracy']:.2f}"
        rows.append("zero-shot".ljust(name_w) + "".join(zs.rjust(16) for _ in k_values))
    arm_names = []
    for arm in report["arms"]:
        if arm["name"] not in arm_names:
            arm_names.append(arm["name"])
    for name in arm_names:
        cells = []
        for k in k_values:
            arm = next(a for a in report["arms"] if a["name"] == name and a["k"] == k)
            cell = f"{100.0 * arm['mean']:.2f}±{100.0 * arm['std']:.2f}"
            if arm.get("std_degenerate"):
                cell += "*"
            cells.append(cell.rjust(16))
        rows.append(name.ljust(name_w) + "".join(cells))
    if any(a.get("std_degenerate") for a in report["arms"]):
        rows.append("* std over a single repeat, reported as 0 by convention")
    return "\n".join(rows) + "\n"


def attention_for_export(kind_value: str, bag: np.ndarray, attention) -> tuple[np.ndarray, str]:
    """Uniform weights for mean pooling, argmax-frequency surrogate for max pooling.

    Aggregators with learned attention pass their attention vector through;
    the surrogate note in the sidecar keeps the two cases distinguishable.
    """
    n = bag.shape[0]
    if kind_value == "bgap":
        return np.full(n, 1.0 / n), "uniform (mean pooling has no learned attention)"
    if kind_value == "bgmp":
        hits = np.zeros(n)
        amax = bag.argmax(axis=0)
        for r in amax:
            hits[r] += 1.0
        return hits / bag.shape[1], ("per-coordinate argmax frequency surrogate, "
                                     "not learned attention")
    if attention is None:
        raise EmptyBag("aggregator produced no attention vector")
    return np.asarray(attention, dtype=np.float64), "attention weights, softmax-normalized"


def export_attention(kind_value: str, bag: np.ndarray, attention, slide_id: str,
                     path) -> dict:
    """Write per-patch attention as CSV plus a JSON sidecar; returns the sidecar."""
    weights, note = attention_for_export(kind_value, bag, attention)
    total = float(weights.sum())
    if abs(total - 1.0) > 1e-9 or (weights < 0).any():
        raise ShapeMismatch(f"attention weights must be a distribution, sum={total!r}")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_index", "attention_weight"])
        for i, w in enumerate(weights):
            writer.writerow([i, repr(float(w))])
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "slide_id": slide_id,
        "aggregator": kind_value,
        "n_patches": int(bag.shape[0]),
        "normalization": note,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return sidecar
