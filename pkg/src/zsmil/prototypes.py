"""Class prototypes built from per-template text embeddings.

The ensemble reduction normalizes each template embedding, averages them per
class, and renormalizes the mean, which makes the result invariant to
positive rescaling of any template vector. Prototypes are persisted as a
file pair: ``<name>.zsml`` (matrix) + ``<name>.json`` (sidecar).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .errors import (
    DimMismatch,
    DuplicateClass,
    EmptyTemplates,
    EnsembleDegenerate,
    InvalidPrototypes,
    MissingFile,
    SidecarMismatch,
)
from .linalg import ZERO_NORM_EPS, as_matrix, row_normalized

DEFAULT_TEMPERATURE = 0.07


@dataclass
class PrototypeSet:
    class_names: list[str]
    weights: np.ndarray  # S x d, unit-norm rows
    temperature_default: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.weights = as_matrix(self.weights, "prototype weights")
        if len(self.class_names) < 2:
            raise InvalidPrototypes("need at least 2 classes")
        if len(self.class_names) != self.weights.shape[0]:
            raise SidecarMismatch(
                f"{len(self.class_names)} class names vs {self.weights.shape[0]} weight rows")
        if len(set(self.class_names)) != len(self.class_names):
            raise DuplicateClass("class names must be unique")
        norms = np.sqrt((self.weights ** 2).sum(axis=1))
        if np.abs(norms - 1.0).max() > 1e-9:
            raise InvalidPrototypes("prototype rows must be unit-norm within 1e-9")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class TemplateEmbeddings:
    class_name: str
    vectors: np.ndarray  # T x d, one row per prompt template
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = as_matrix(self.vectors, f"templates for {self.class_name!r}")
        if self.vectors.shape[0] < 1:
            raise EmptyTemplates(f"class {self.class_name!r} has no templates")


def ensemble(per_class: list[TemplateEmbeddings],
             temperature_default: float = DEFAULT_TEMPERATURE) -> PrototypeSet:
    """Reduce per-template embeddings to one unit-norm prototype per class."""
    if not per_class:
        raise EmptyTemplates("no classes given")
    names = [t.class_name for t in per_class]
    if len(set(names)) != len(names):
        raise DuplicateClass("duplicate class names in template set")
    dim = per_class[0].vectors.shape[1]
    rows = []
    for t in per_class:
        if t.vectors.shape[1] != dim:
            raise DimMismatch(
                f"class {t.class_name!r} has dim {t.vectors.shape[1]}, expected {dim}")
        mean = row_normalized(t.vectors).mean(axis=0)
        norm = float(np.sqrt(np.dot(mean, mean)))
        if norm <= ZERO_NORM_EPS:
            raise EnsembleDegenerate(
                f"class {t.class_name!r}: template mean norm {norm:g} below {ZERO_NORM_EPS:g}")
        rows.append(mean / norm)
    return PrototypeSet(names, np.vstack(rows), temperature_default)


def save_prototypes(protos: PrototypeSet, base_path) -> None:
    base = Path(base_path)
    dataio.write_embeddings(protos.weights, base.with_suffix(".zsml"))
    sidecar = {"schema_version": 1, "class_names": protos.class_names,
               "temperature_default": protos.temperature_default}
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_prototypes(base_path) -> PrototypeSet:
    """Load a prototype pair; rows are renormalized to undo float32 quantization."""
    base = Path(base_path)
    sidecar_path = base.with_suffix(".json")
    if not sidecar_path.is_file():
        raise MissingFile(str(sidecar_path))
    with open(sidecar_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    weights = dataio.read_embeddings(base.with_suffix(".zsml"))
    names = sidecar.get("class_names")
    if not isinstance(names, list) or len(names) != weights.shape[0]:
        raise SidecarMismatch(
            f"sidecar lists {0 if not isinstance(names, list) else len(names)} names "
            f"for {weights.shape[0]} rows")
    return PrototypeSet(names, row_normalized(weights),
                        float(sidecar.get("temperature_default", DEFAULT_TEMPERATURE)))


def load_template_embeddings(index_path) -> list[TemplateEmbeddings]:
    """Read a template-embedding index: JSON listing one .zsml file per class."""
    index_path = Path(index_path)
    if not index_path.is_file():
        raise MissingFile(str(index_path))
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    classes = index.get("classes")
    if not isinstance(classes, list) or not classes:
        raise EmptyTemplates(f"{index_path}: no classes listed")
    out = []
    for rec in classes:
        vectors = dataio.read_embeddings(index_path.parent / rec["path"])
        out.append(TemplateEmbeddings(rec["class_name"], vectors, source=dict(rec)))
    return out
