"""Embedding-file codec, dataset manifests, and the synthetic data generator.

File format (`.zsml`), all integers little-endian:

    magic   4 bytes  b"ZSML"
    version u16      1
    dtype   u8       0 = float32 little-endian
    rows    u64
    cols    u64
    payload rows*cols float32, row-major

Values are stored float32 and widened to float64 in memory. The reader
validates the header and payload but never renormalizes rows; whether rows
are unit-norm is the producer's contract.

Manifests are JSON lines (UTF-8), one entry per line with fields
``slide_id``, ``label``, ``split``, ``path``, ``n_patches``. Unknown fields
are carried through untouched. ``path`` is relative to the manifest's
directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InvalidSpec,
    LabelOutOfRange,
    MissingFile,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedVersion,
)
from .linalg import as_matrix

MAGIC = b"ZSML"
VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sHBQQ")

SPLITS = ("train_pool", "val", "test")

# LUSC:LUAD slide-count shape used as the default class-imbalance template.
IMBALANCE_TEMPLATE = (445, 291)


def write_embeddings_stream(fh, m: np.ndarray) -> None:
    m = as_matrix(m, "embedding matrix")
    with np.errstate(over="ignore"):
        payload = m.astype(np.float32)
    if not np.isfinite(payload).all():
        raise NonFiniteValue("values overflow float32 storage")
    fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, m.shape[0], m.shape[1]))
    fh.write(payload.tobytes(order="C"))


def write_embeddings(m: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        write_embeddings_stream(fh, m)


def read_embeddings_stream(fh) -> np.ndarray:
    header = fh.read(_HEADER.size)
    if len(header) < 4 or header[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {header[:4]!r}")
    if len(header) < _HEADER.size:
        raise TruncatedPayload(f"header is {len(header)} bytes, expected {_HEADER.size}")
    _, version, dtype, rows, cols = _HEADER.unpack(header)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}, this reader supports {VERSION}")
    if dtype != DTYPE_FLOAT32:
        raise UnsupportedVersion(f"dtype code {dtype}, this reader supports {DTYPE_FLOAT32}")
    n_bytes = rows * cols * 4
    payload = fh.read(n_bytes)
    if len(payload) < n_bytes:
        raise TruncatedPayload(f"payload is {len(payload)} bytes, expected {n_bytes}")
    m = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if not np.isfinite(m).all():
        raise NonFiniteValue("payload contains NaN/Inf")
    return m


def read_embeddings(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, "rb") as fh:
        m = read_embeddings_stream(fh)
        if fh.read(1):
            raise TruncatedPayload("file longer than header declares")
    return m


@dataclass
class ManifestEntry:
    slide_id: str
    label: int
    split: str
    path: str
    n_patches: int
    resolved_path: Path | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        rec = {"slide_id": self.slide_id, "label": self.label, "split": self.split,
               "path": self.path, "n_patches": self.n_patches}
        rec.update(self.extra)
        return rec


_REQUIRED = {"slide_id": str, "label": int, "split": str, "path": str, "n_patches": int}


def load_manifest(path, n_classes: int | None = None) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest, preserving file order.

    Labels are validated against ``n_classes`` when given; referenced
    embedding files must exist (contents are checked at read time).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise ParseError(line_no, "entry is not a JSON object")
            for key, typ in _REQUIRED.items():
                if key not in rec:
                    raise ParseError(line_no, f"missing field {key!r}")
                if not isinstance(rec[key], typ) or isinstance(rec[key], bool):
                    raise ParseError(line_no, f"field {key!r} has wrong type")
            if rec["split"] not in SPLITS:
                raise ParseError(line_no, f"unknown split {rec['split']!r}")
            label = rec["label"]
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise LabelOutOfRange(f"line {line_no}: label {label}")
            resolved = (path.parent / rec["path"]).resolve()
            if not resolved.is_file():
                raise MissingFile(f"line {line_no}: {resolved}")
            extra = {k: v for k, v in rec.items() if k not in _REQUIRED}
            entries.append(ManifestEntry(rec["slide_id"], label, rec["split"],
                                         rec["path"], rec["n_patches"], resolved, extra))
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def load_bag(entry: ManifestEntry) -> np.ndarray:
    m = read_embeddings(entry.resolved_path if entry.resolved_path else entry.path)
    if m.shape[0] != entry.n_patches:
        raise ShapeMismatch(
            f"{entry.slide_id}: manifest says {entry.n_patches} patches, file has {m.shape[0]}")
    return m


@dataclass
class SyntheticSpec:
    """Desk-scale stand-in for a two-subtype slide-embedding dataset.

    Each class gets a random unit direction; evidence patches are gaussian
    around ``class_separation`` times that direction, the rest come from a
    shared zero-mean background, and every patch row is stored unit-norm.
    Prototypes are noisy copies of the class directions, emulating imperfect
    text-derived class embeddings. Per-class bag counts follow
    ``class_ratios`` (default: the 445:291 imbalance template, alternating).
    """

    seed: int
    n_classes: int = 2
    dim: int = 64
    bags_per_class: dict = field(
        default_factory=lambda: {"train_pool": 60, "val": 12, "test": 15})
    patches_per_bag: tuple = (32, 72)
    evidence_fraction: float = 0.3
    class_separation: float = 1.0
    noise_sigma: float = 1.0
    prototype_noise: float = 0.3
    class_ratios: list | None = None

    def validate(self) -> None:
        if self.n_classes < 2:
            raise InvalidSpec("need at least 2 classes")
        if self.dim < 2:
            raise InvalidSpec("dim must be >= 2")
        lo, hi = self.patches_per_bag
        if not (1 <= lo <= hi):
            raise InvalidSpec(f"bad patches_per_bag range [{lo}, {hi}]")
        if not (0.0 < self.evidence_fraction <= 1.0):
            raise InvalidSpec("evidence_fraction must be in (0, 1]")
        if self.noise_sigma < 0 or self.prototype_noise < 0 or self.class_separation < 0:
            raise InvalidSpec("noise/separation parameters must be >= 0")
        for split in self.bags_per_class:
            if split not in SPLITS:
                raise InvalidSpec(f"unknown split {split!r}")
        if self.bags_per_class.get("train_pool", 0) < 1 or self.bags_per_class.get("test", 0) < 1:
            raise InvalidSpec("train_pool and test need at least one bag per class")
        if self.ratios().shape[0] != self.n_classes or (self.ratios() <= 0).any():
            raise InvalidSpec("class_ratios must be positive, one per class")

    def ratios(self) -> np.ndarray:
        if self.class_ratios is not None:
            return np.asarray(self.class_ratios, dtype=np.float64)
        t = IMBALANCE_TEMPLATE
        return np.array([t[c % 2] / t[0] for c in range(self.n_classes)])

    def counts(self, split: str) -> list[int]:
        base = self.bags_per_class.get(split, 0)
        return [max(1, round(base * r)) if base > 0 else 0 for r in self.ratios()]

    def to_json(self) -> dict:
        return {
            "seed": self.seed, "n_classes": self.n_classes, "dim": self.dim,
            "bags_per_class": dict(self.bags_per_class),
            "patches_per_bag": list(self.patches_per_bag),
            "evidence_fraction": self.evidence_fraction,
            "class_separation": self.class_separation,
            "noise_sigma": self.noise_sigma,
            "prototype_noise": self.prototype_noise,
            "class_ratios": None if self.class_ratios is None else list(self.class_ratios),
        }

    @classmethod
    def from_json(cls, rec: dict) -> "SyntheticSpec":
        spec = cls(seed=rec["seed"])
        for key in ("n_classes", "dim", "bags_per_class", "evidence_fraction",
                    "class_separation", "noise_sigma", "prototype_noise", "class_ratios"):
            if key in rec and rec[key] is not None:
                setattr(spec, key, rec[key])
        if "patches_per_bag" in rec:
            spec.patches_per_bag = tuple(rec["patches_per_bag"])
        return spec


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
    if (norms <= 1e-12).any():
        raise InvalidSpec("degenerate zero patch generated; "
                          "noise_sigma=0 requires evidence_fraction=1 and class_separation>0")
    return m / norms


def generate_synthetic(spec: SyntheticSpec, out_dir):
    """Write a synthetic dataset and its prototypes; returns (entries, prototypes).

    Layout under ``out_dir``: ``embeddings/*.zsml``, ``manifest.jsonl``,
    ``prototypes.zsml`` + ``prototypes.json``, ``synthetic_spec.json``.
    Fully determined by ``spec.seed``: the draw order is class directions,
    prototype noise, then bags in (split, class, index) order.
    """
    from .prototypes import PrototypeSet, save_prototypes

    spec.validate()
    out_dir = Path(out_dir)
    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    directions = _unit_rows(rng.standard_normal((spec.n_classes, spec.dim)))
    proto_raw = directions + spec.prototype_noise * rng.standard_normal(directions.shape)
    protos = PrototypeSet(
        class_names=[f"class_{c}" for c in range(spec.n_classes)],
        weights=_unit_rows(proto_raw),
    )

    lo, hi = spec.patches_per_bag
    entries = []
    for split in SPLITS:
        counts = spec.counts(split)
        for c in range(spec.n_classes):
            for i in range(counts[c]):
                n = int(rng.integers(lo, hi + 1))
                n_ev = n if spec.evidence_fraction >= 1.0 else max(
                    1, round(spec.evidence_fraction * n))
                evidence = (spec.class_separation * directions[c]
                            + spec.noise_sigma * rng.standard_normal((n_ev, spec.dim)))
                background = spec.noise_sigma * rng.standard_normal((n - n_ev, spec.dim))
                bag = _unit_rows(np.vstack([evidence, background]))
                slide_id = f"synth_{split}_c{c}_{i:03d}"
                rel = f"embeddings/{slide_id}.zsml"
                write_embeddings(bag, out_dir / rel)
                entries.append(ManifestEntry(
                    slide_id, c, split, rel, n,
                    resolved_path=(out_dir / rel).resolve(),
                    extra={"n_evidence": n_ev}))

    write_manifest(entries, out_dir / "manifest.jsonl")
    save_prototypes(protos, out_dir / "prototypes")
    with open(out_dir / "synthetic_spec.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return entries, protos
