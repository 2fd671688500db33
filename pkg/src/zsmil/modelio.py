"""Trained-model persistence.

A model is stored as a pair: ``<base>.zsml.bin`` holds every parameter
tensor as concatenated embedding-format blocks (vectors as 1 x n), and
``<base>.json`` is the index mapping tensor names to byte offsets plus the
aggregator/head metadata, config echo, episode info, and training trace.
Parameters are quantized to float32 on disk like every other artifact file.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from . import dataio
from .aggregators import AbmilParams, AggregatorKind, SimpleTransformerParams
from .errors import MissingFile, SidecarMismatch
from .head import HeadParams
from .trainer import TrainedModel


def _param_tensors(model: TrainedModel) -> dict:
    tensors = {}
    if model.agg_params is not None:
        tensors.update(model.agg_params.tensors())
    tensors.update(model.head.tensors())
    return tensors


def model_to_bytes(model: TrainedModel) -> tuple[bytes, dict]:
    blob = io.BytesIO()
    index = []
    tensors = _param_tensors(model)
    for name in sorted(tensors):
        tensor = tensors[name]
        m = tensor if tensor.ndim == 2 else tensor.reshape(1, -1)
        start = blob.tell()
        dataio.write_embeddings_stream(blob, m)
        index.append({"name": name, "offset": start, "length": blob.tell() - start,
                      "rows": int(m.shape[0]), "cols": int(m.shape[1]),
                      "ndim": int(tensor.ndim)})
    meta = {
        "schema_version": 1,
        "aggregator": model.aggregator.value,
        "head": {"n_classes": int(model.head.weights.shape[0]),
                 "dim": int(model.head.weights.shape[1]),
                 "tau": model.head.tau, "learn_tau": model.head.learn_tau},
        "class_names": model.class_names,
        "params": index,
        "config": model.config,
        "episode": model.episode,
        "trace": {"train_loss": model.train_loss, "val_metric": model.val_metric,
                  "best_epoch": model.best_epoch},
    }
    return blob.getvalue(), meta


def save_model(model: TrainedModel, base_path) -> None:
    base = Path(base_path)
    payload, meta = model_to_bytes(model)
    with open(base.parent / (base.name + ".zsml.bin"), "wb") as fh:
        fh.write(payload)
    with open(base.parent / (base.name + ".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_model(base_path) -> TrainedModel:
    base = Path(base_path)
    meta_path = base.parent / (base.name + ".json")
    bin_path = base.parent / (base.name + ".zsml.bin")
    for p in (meta_path, bin_path):
        if not p.is_file():
            raise MissingFile(str(p))
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    tensors = {}
    with open(bin_path, "rb") as fh:
        for rec in meta["params"]:
            fh.seek(rec["offset"])
            m = dataio.read_embeddings_stream(fh)
            if m.shape != (rec["rows"], rec["cols"]):
                raise SidecarMismatch(
                    f"tensor {rec['name']!r}: index says {rec['rows']}x{rec['cols']}, "
                    f"block is {m.shape[0]}x{m.shape[1]}")
            tensors[rec["name"]] = m[0] if rec["ndim"] == 1 else m

    kind = AggregatorKind.from_flag(meta["aggregator"])
    if kind is AggregatorKind.ABMIL:
        agg_params = AbmilParams(tensors["abmil.v_proj"], tensors["abmil.u_proj"],
                                 tensors["abmil.w"])
    elif kind is AggregatorKind.SIMPLE_TRANSFORMER:
        agg_params = SimpleTransformerParams(
            tensors["xf.wq"], tensors["xf.wk"], tensors["xf.wv"], tensors["xf.wo"],
            tensors["xf.token"], tensors["xf.gamma"], tensors["xf.beta"])
    else:
        agg_params = None
    head = HeadParams(np.ascontiguousarray(tensors["head.weights"]),
                      float(meta["head"]["tau"]), bool(meta["head"]["learn_tau"]))
    trace = meta.get("trace", {})
    return TrainedModel(
        aggregator=kind,
        agg_params=agg_params,
        head=head,
        class_names=list(meta["class_names"]),
        train_loss=list(trace.get("train_loss", [])),
        val_metric=list(trace.get("val_metric", [])),
        best_epoch=int(trace.get("best_epoch", 0)),
        config=dict(meta.get("config", {})),
        episode=dict(meta.get("episode", {})),
    )
