"""Few-shot episodes, the optimization loop, and the repeated-run protocol.

One episode samples k support bags per class from the train pool (uniform,
without replacement, seeded by (base_seed, repeat_index)), trains with
full-batch gradient steps, and keeps the parameters of the epoch with the
best validation balanced accuracy (early stopping with patience). The
protocol repeats this for every (k, repeat, arm) cell and reports the mean
and sample standard deviation per cell next to the training-free zero-shot
baseline.

The validation split comes from the manifest and is fixed across repeats;
when a manifest has none, a fixed fraction of the train pool is carved off
per class (seeded by base_seed only, so it also stays fixed across repeats)
before support sampling.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dataio
from .aggregators import AggregatorKind, backward, forward, init_params
from .errors import (
    InsufficientBags,
    NonFiniteLoss,
    NonFiniteValue,
    ShapeMismatch,
    ZeroNorm,
)
from .head import HeadParams, InitStrategy, head_backward, head_forward, init_head
from .linalg import stable_log
from .metrics import ConfusionMatrix, balanced_accuracy, summarize
from .prototypes import DEFAULT_TEMPERATURE, PrototypeSet
from .zeroshot import zero_shot_predict


@dataclass
class EpisodeSpec:
    k_shots: int
    repeat_index: int
    base_seed: int
    val_fraction: float = 0.2

    def validate(self):
        if self.k_shots < 1:
            raise InsufficientBags("k_shots must be >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ShapeMismatch("val_fraction must be in (0, 1)")


@dataclass
class TrainConfig:
    aggregator: AggregatorKind = AggregatorKind.ABMIL
    hidden: int | None = None          # attention hidden size / transformer head width
    init: InitStrategy = InitStrategy.ZERO_SHOT
    optimizer: str = "adam"            # "adam" | "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    patience: int = 20
    tau: float = DEFAULT_TEMPERATURE
    learn_tau: bool = False
    freeze_head: bool = False
    head_seed: object = None           # int or int sequence for SeedSequence
    agg_seed: object = None

    def validate(self):
        if self.lr <= 0:
            raise ShapeMismatch("learning rate must be positive")
        if self.epochs < 1:
            raise ShapeMismatch("epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ShapeMismatch(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        return {
            "aggregator": self.aggregator.value, "hidden": self.hidden,
            "init": self.init.value, "optimizer": self.optimizer, "lr": self.lr,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "epochs": self.epochs, "patience": self.patience, "tau": self.tau,
            "learn_tau": self.learn_tau, "freeze_head": self.freeze_head,
        }


@dataclass
class TrainedModel:
    aggregator: AggregatorKind
    agg_params: object
    head: HeadParams
    class_names: list[str]
    train_loss: list[float]
    val_metric: list[float]
    best_epoch: int
    config: dict
    episode: dict


class Sgd:
    def __init__(self, tensors: dict, lr: float):
        self.lr = lr

    def step(self, tensors: dict, grads: dict) -> None:
        for name, g in grads.items():
            tensors[name] -= self.lr * g


class Adam:
    def __init__(self, tensors: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: TrainConfig, tensors: dict):
    if config.optimizer == "sgd":
        return Sgd(tensors, config.lr)
    return Adam(tensors, config.lr, config.beta1, config.beta2, config.eps)


# --- episode sampling --------------------------------------------------------


def _pools_by_class(entries) -> dict:
    pools: dict[int, list] = {}
    for e in entries:
        if e.split == "train_pool":
            pools.setdefault(e.label, []).append(e)
    return pools


def sample_episode(entries, spec: EpisodeSpec):
    """Returns (support entries, val entries), deterministic in (base_seed, repeat)."""
    spec.validate()
    pools = _pools_by_class(entries)
    if not pools:
        raise InsufficientBags("manifest has no train_pool bags")
    n_classes = max(pools) + 1
    val = [e for e in entries if e.split == "val"]
    if not val:
        carve_rng = np.random.default_rng(np.random.SeedSequence([spec.base_seed]))
        for c in sorted(pools):
            pool = pools[c]
            n_val = max(1, int(round(spec.val_fraction * len(pool))))
            if n_val >= len(pool):
                raise InsufficientBags(f"class {c}: pool too small to carve validation bags")
            picked = sorted(carve_rng.choice(len(pool), size=n_val, replace=False).tolist())
            val.extend(pool[i] for i in picked)
            pools[c] = [e for i, e in enumerate(pool) if i not in set(picked)]
    rng = np.random.default_rng(np.random.SeedSequence([spec.base_seed, spec.repeat_index]))
    support = []
    for c in range(n_classes):
        pool = pools.get(c, [])
        if len(pool) < spec.k_shots:
            raise InsufficientBags(
                f"class {c}: {len(pool)} bags in pool, need k={spec.k_shots}")
        picked = rng.choice(len(pool), size=spec.k_shots, replace=False)
        support.extend(pool[i] for i in sorted(picked.tolist()))
    return support, val


# --- training ----------------------------------------------------------------


def _load(entries) -> list:
    return [(e.slide_id, e.label, dataio.load_bag(e)) for e in entries]


def _trainable_tensors(config: TrainConfig, agg_params, head: HeadParams) -> dict:
    tensors = {}
    if agg_params is not None:
        tensors.update(agg_params.tensors())
    if not config.freeze_head:
        tensors.update(head.tensors())
        if config.learn_tau:
            tensors["head.tau"] = np.array(head.tau)
    return tensors


def _epoch_pass(config, agg_params, head, bags, want_grads: bool):
    """Mean cross-entropy over bags; optionally mean parameter gradients."""
    n_classes = head.weights.shape[0]
    total = 0.0
    grads: dict[str, np.ndarray] = {}
    for slide_id, label, bag in bags:
        try:
            z, record, _ = forward(config.aggregator, agg_params, bag)
            probs, _, cache = head_forward(head, z)
        except (NonFiniteValue, ZeroNorm) as exc:
            raise NonFiniteLoss(f"bag {slide_id!r}: {exc}") from exc
        loss = -stable_log(float(probs[label])) / n_classes
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"bag {slide_id!r} produced loss {loss!r}")
        total += loss
        if not want_grads:
            continue
        g_w, g_tau, g_z = head_backward(head, cache, label)
        bag_grads = {}
        if not config.freeze_head:
            bag_grads["head.weights"] = g_w
            if config.learn_tau:
                bag_grads["head.tau"] = np.array(g_tau)
        if agg_params is not None:
            agg_grads, _ = backward(config.aggregator, agg_params, record, g_z)
            bag_grads.update(agg_grads)
        for name, g in bag_grads.items():
            if name in grads:
                grads[name] += g
            else:
                grads[name] = g.astype(np.float64, copy=True)
    n = len(bags)
    mean_loss = total / n
    if not np.isfinite(mean_loss):
        raise NonFiniteLoss(f"epoch loss {mean_loss!r}")
    for name in grads:
        grads[name] /= n
    return mean_loss, grads


def _predict(config, agg_params, head, bags) -> list[int]:
    preds = []
    for _, _, bag in bags:
        z, _, _ = forward(config.aggregator, agg_params, bag)
        probs, _, _ = head_forward(head, z)
        preds.append(int(np.argmax(probs)))
    return preds


def _val_metric(config, agg_params, head, bags, n_classes) -> float:
    preds = _predict(config, agg_params, head, bags)
    cm = ConfusionMatrix.from_labels([b[1] for b in bags], preds, n_classes)
    return balanced_accuracy(cm)


def _snapshot(agg_params, head) -> dict:
    snap = {"head.weights": head.weights.copy(), "head.tau": head.tau}
    if agg_params is not None:
        snap.update({k: v.copy() for k, v in agg_params.tensors().items()})
    return snap


def _restore(snap, agg_params, head) -> None:
    head.weights[...] = snap["head.weights"]
    head.tau = snap["head.tau"]
    if agg_params is not None:
        for k, v in agg_params.tensors().items():
            v[...] = snap[k]


def train(support, val, config: TrainConfig, protos: PrototypeSet) -> TrainedModel:
    """Full-batch training over preloaded or manifest-entry support bags."""
    config.validate()
    if not support:
        raise InsufficientBags("empty support set")
    if support and not isinstance(support[0], tuple):
        support = _load(support)
        val = _load(val)
    support = sorted(support, key=lambda b: b[0])  # fixed bag order: sorted slide_id
    dim = support[0][2].shape[1]
    n_classes = protos.n_classes

    agg_params = init_params(config.aggregator, dim, config.hidden, config.agg_seed)
    head = init_head(config.init, n_classes, dim, prototypes=protos,
                     seed=config.head_seed, tau=config.tau, learn_tau=config.learn_tau)

    tensors = _trainable_tensors(config, agg_params, head)
    optimizer = make_optimizer(config, tensors)

    train_loss: list[float] = []
    val_metric: list[float] = []
    best = _snapshot(agg_params, head)
    best_epoch = 0
    best_metric = -np.inf
    for epoch in range(1, config.epochs + 1):
        loss, grads = _epoch_pass(config, agg_params, head, support, want_grads=True)
        grads = {k: v for k, v in grads.items() if k in tensors}
        optimizer.step(tensors, grads)
        if config.learn_tau and not config.freeze_head:
            head.tau = max(float(tensors["head.tau"]), 1e-6)
            tensors["head.tau"][...] = head.tau
        train_loss.append(loss)
        if val:
            metric = _val_metric(config, agg_params, head, val, n_classes)
            val_metric.append(metric)
            if metric > best_metric:
                best_metric = metric
                best_epoch = epoch
                best = _snapshot(agg_params, head)
            elif epoch - best_epoch >= config.patience:
                break
        else:
            # no validation split: no early stopping, keep the final epoch
            best_epoch = epoch
            best = _snapshot(agg_params, head)
    _restore(best, agg_params, head)

    return TrainedModel(
        aggregator=config.aggregator,
        agg_params=agg_params,
        head=head,
        class_names=list(protos.class_names),
        train_loss=train_loss,
        val_metric=val_metric,
        best_epoch=best_epoch,
        config=config.to_json(),
        episode={},
    )


def evaluate(model: TrainedModel, bags) -> dict:
    """Balanced accuracy and per-bag argmax predictions on preloaded bags."""
    if bags and not isinstance(bags[0], tuple):
        bags = _load(bags)
    if not bags:
        raise InsufficientBags("no bags to evaluate")
    config = TrainConfig(aggregator=model.aggregator)
    preds = _predict(config, model.agg_params, model.head, bags)
    n_classes = model.head.weights.shape[0]
    cm = ConfusionMatrix.from_labels([b[1] for b in bags], preds, n_classes)
    return {
        "balanced_accuracy": balanced_accuracy(cm),
        "per_class_recall": cm.per_class_recall(),
        "confusion": cm.counts.tolist(),
        "predictions": [
            {"slide_id": b[0], "label": b[1], "prediction": p}
            for b, p in zip(bags, preds)
        ],
    }


# --- repeated-run protocol ----------------------------------------------------


def _arm_config(base: TrainConfig, arm: dict, k: int, repeat: int, base_seed: int,
                arm_index: int) -> TrainConfig:
    config = replace(base, **arm.get("overrides", {}))
    # episode-specific seeds: head init varies per (k, repeat, arm); the
    # aggregator init is shared across arms so only the head init differs
    config.head_seed = [base_seed, k, repeat, arm_index, 1]
    config.agg_seed = [base_seed, k, repeat, 2]
    return config


def _run_cell(args) -> dict:
    (entries, protos, base, arm, arm_index, k, repeat, base_seed, val_fraction) = args
    episode = EpisodeSpec(k, repeat, base_seed, val_fraction)
    support, val = sample_episode(entries, episode)
    config = _arm_config(base, arm, k, repeat, base_seed, arm_index)
    model = train(support, val, config, protos)
    model.episode = {"k": k, "repeat": repeat, "base_seed": base_seed,
                     "support": [e.slide_id for e in support]}
    test = [e for e in entries if e.split == "test"]
    result = evaluate(model, test)
    return {
        "arm": arm["name"], "k": k, "repeat": repeat,
        "balanced_accuracy": result["balanced_accuracy"],
        "per_class_recall": result["per_class_recall"],
        "best_epoch": model.best_epoch,
        "epochs_run": len(model.train_loss),
        "final_train_loss": model.train_loss[-1],
        "model": model,
    }


def run_protocol(entries, protos: PrototypeSet, config: TrainConfig,
                 k_list, repeats: int = 5, base_seed: int = 0,
                 arms: list[dict] | None = None, jobs: int = 1,
                 val_fraction: float = 0.2, keep_models: bool = False) -> dict:
    """Train and evaluate every (arm, k, repeat) cell; returns the run report.

    ``arms`` is a list of {"name", "overrides"} dicts applied on top of
    ``config``; the default is a single arm named after the init strategy.
    Results are deterministic functions of (manifest content, prototypes,
    config, base_seed), independent of ``jobs``.
    """
    config.validate()
    if arms is None:
        arms = [{"name": config.init.value, "overrides": {}}]
    tasks = [
        (entries, protos, config, arm, ai, k, r, base_seed, val_fraction)
        for ai, arm in enumerate(arms) for k in k_list for r in range(repeats)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    report_arms = []
    models = []
    for ai, arm in enumerate(arms):
        for k in k_list:
            runs = [r for r in results if r["arm"] == arm["name"] and r["k"] == k]
            runs.sort(key=lambda r: r["repeat"])
            accs = [r["balanced_accuracy"] for r in runs]
            mean, std, degenerate = summarize(accs)
            report_arms.append({
                "name": arm["name"], "k": k, "mean": mean, "std": std,
                "std_degenerate": degenerate,
                "runs": [{key: r[key] for key in
                          ("repeat", "balanced_accuracy", "per_class_recall",
                           "best_epoch", "epochs_run", "final_train_loss")}
                         for r in runs],
            })
    if keep_models:
        models = [(r["arm"], r["k"], r["repeat"], r["model"]) for r in results]

    report = {
        "schema_version": 1,
        "config": config.to_json(),
        "base_seed": base_seed,
        "k_values": list(k_list),
        "repeats": repeats,
        "val_fraction": val_fraction,
        "arms": report_arms,
        "zero_shot": zero_shot_predict(entries, protos, "test"),
    }
    return (report, models) if keep_models else report


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_report(path) -> dict:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
