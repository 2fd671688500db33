import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zsmil.dataio import SyntheticSpec, generate_synthetic, load_manifest
from zsmil.prototypes import load_prototypes

DEFAULT_SEED = 11


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The stock synthetic dataset: imbalanced two-class, d=64, seed fixed."""
    out = tmp_path_factory.mktemp("default_dataset")
    spec = SyntheticSpec(seed=DEFAULT_SEED)
    generate_synthetic(spec, out)
    entries = load_manifest(out / "manifest.jsonl", n_classes=spec.n_classes)
    protos = load_prototypes(out / "prototypes")
    return {"dir": out, "spec": spec, "entries": entries, "protos": protos}


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Tiny, fast dataset for trainer and CLI plumbing tests."""
    out = tmp_path_factory.mktemp("small_dataset")
    spec = SyntheticSpec(
        seed=5,
        bags_per_class={"train_pool": 10, "val": 4, "test": 6},
        patches_per_bag=(8, 20),
        dim=16,
    )
    generate_synthetic(spec, out)
    entries = load_manifest(out / "manifest.jsonl", n_classes=spec.n_classes)
    protos = load_prototypes(out / "prototypes")
    return {"dir": out, "spec": spec, "entries": entries, "protos": protos}
