"""Zero-shot slide classification by pooled patch-prototype similarities.

Each patch is unit-normalized, its cosine similarity to every class
prototype is averaged over the bag, and the slide is assigned the class
with the highest mean similarity (lowest class index on ties). This is the
training-free baseline the prototype-initialized classifier starts from.
"""

from __future__ import annotations

import numpy as np

from . import dataio
from .errors import DimMismatch, EmptyBag, ZeroNorm
from .prototypes import PrototypeSet

ROW_NORM_WARN = 1e-4


def _unit_rows_counted(bag: np.ndarray) -> tuple[np.ndarray, int]:
    norms = np.sqrt((bag * bag).sum(axis=1))
    if (norms <= 1e-12).any():
        raise ZeroNorm("bag contains a zero patch vector")
    off = int((np.abs(norms - 1.0) > ROW_NORM_WARN).sum())
    return bag / norms[:, None], off


def zero_shot_scores(bag, protos: PrototypeSet) -> np.ndarray:
    scores, _ = zero_shot_scores_with_stats(bag, protos)
    return scores


def zero_shot_scores_with_stats(bag, protos: PrototypeSet) -> tuple[np.ndarray, int]:
    """Per-class mean cosine similarity, plus how many rows needed renormalizing."""
    bag = np.ascontiguousarray(bag, dtype=np.float64)
    if bag.ndim != 2 or bag.shape[0] < 1:
        raise EmptyBag("bag must be a nonempty N x d matrix")
    if bag.shape[1] != protos.dim:
        raise DimMismatch(f"bag dim {bag.shape[1]} vs prototype dim {protos.dim}")
    unit, off = _unit_rows_counted(bag)
    scores = unit.mean(axis=0) @ protos.weights.T
    return scores, off


def zero_shot_predict(entries, protos: PrototypeSet, split: str = "test") -> dict:
    """Score every bag of one split; returns predictions and balanced accuracy."""
    from .metrics import ConfusionMatrix, balanced_accuracy

    subset = [e for e in entries if e.split == split]
    if not subset:
        raise EmptyBag(f"manifest has no bags in split {split!r}")
    y_true, y_pred, per_bag = [], [], []
    renormalized = 0
    for entry in subset:
        bag = dataio.load_bag(entry)
        scores, off = zero_shot_scores_with_stats(bag, protos)
        renormalized += off
        pred = int(np.argmax(scores))  # argmax takes the lowest index on ties
        y_true.append(entry.label)
        y_pred.append(pred)
        per_bag.append({"slide_id": entry.slide_id, "label": entry.label,
                        "prediction": pred, "scores": [float(s) for s in scores]})
    cm = ConfusionMatrix.from_labels(y_true, y_pred, protos.n_classes)
    return {
        "split": split,
        "balanced_accuracy": balanced_accuracy(cm),
        "per_class_recall": cm.per_class_recall(),
        "confusion": cm.counts.tolist(),
        "renormalized_rows": renormalized,
        "per_bag": per_bag,
    }
