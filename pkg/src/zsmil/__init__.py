"""Few-shot multiple-instance learning over precomputed patch embeddings.

The pipeline: per-slide patch embeddings (bags) are pooled by an aggregator
into one unit-norm slide embedding, classified by a temperature-scaled
cosine head, and trained with cross-entropy on a handful of labeled slides
per class. The head can start from text-derived class prototypes instead of
a random draw, which is the point: it keeps few-shot training at or above
the zero-shot baseline instead of far below it.

Hot per-bag kernels run through a compiled extension when built, with a
numpy fallback selected at import (see ``zsmil._backend``).
"""

from ._backend import backend_name
from .aggregators import AggregatorKind, forward, backward, param_count
from .dataio import (
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
    read_embeddings,
    write_embeddings,
)
from .head import HeadParams, InitStrategy, head_backward, head_forward, init_head
from .linalg import l2_normalize, matmul, softmax, stable_log
from .metrics import ConfusionMatrix, balanced_accuracy, summarize
from .prototypes import PrototypeSet, TemplateEmbeddings, ensemble
from .trainer import EpisodeSpec, TrainConfig, run_protocol, sample_episode, train
from .zeroshot import zero_shot_predict, zero_shot_scores

__version__ = "0.1.0"

__all__ = [
    "AggregatorKind", "ConfusionMatrix", "EpisodeSpec", "HeadParams",
    "InitStrategy", "PrototypeSet", "SyntheticSpec", "TemplateEmbeddings",
    "TrainConfig", "backend_name", "backward", "balanced_accuracy", "ensemble",
    "forward", "generate_synthetic", "head_backward", "head_forward",
    "init_head", "l2_normalize", "load_manifest", "matmul", "param_count",
    "read_embeddings", "run_protocol", "sample_episode", "softmax",
    "stable_log", "summarize", "train", "write_embeddings",
    "zero_shot_predict", "zero_shot_scores",
]
