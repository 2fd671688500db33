"""Temperature-scaled cosine-similarity classifier head.

Logits are dot products between the unit bag embedding and row-normalized
class weights, divided by a temperature. Rows are normalized functionally at
forward time, so the optimizer stays unconstrained while the geometry stays
cosine-exact: rescaling any weight row by a positive constant leaves the
probabilities unchanged.

The default temperature 0.07 follows the dual-encoder convention the
embeddings come from; it is fixed unless ``learn_tau`` is set.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DimMismatch, ShapeMismatch, StaleCache
from .linalg import as_vector
from .prototypes import DEFAULT_TEMPERATURE, PrototypeSet


class InitStrategy(enum.Enum):
    ZERO_SHOT = "zeroshot"
    KAIMING_UNIFORM = "kaiming-uniform"
    KAIMING_NORMAL = "kaiming-normal"
    XAVIER_UNIFORM = "xavier-uniform"
    XAVIER_NORMAL = "xavier-normal"

    @classmethod
    def from_flag(cls, name: str) -> "InitStrategy":
        for s in cls:
            if s.value == name:
                return s
        raise ShapeMismatch(f"unknown init strategy {name!r}")


RANDOM_STRATEGIES = (InitStrategy.KAIMING_UNIFORM, InitStrategy.KAIMING_NORMAL,
                     InitStrategy.XAVIER_UNIFORM, InitStrategy.XAVIER_NORMAL)


@dataclass
class HeadParams:
    weights: np.ndarray  # S x d
    tau: float = DEFAULT_TEMPERATURE
    learn_tau: bool = False

    def tensors(self) -> dict:
        return {"head.weights": self.weights}


@dataclass
class HeadCache:
    z: np.ndarray
    probs: np.ndarray
    logits: np.ndarray
    w_unit: np.ndarray
    w_norms: np.ndarray
    tau: float


def init_head(strategy: InitStrategy, n_classes: int, dim: int,
              prototypes: PrototypeSet | None = None, seed: int | None = None,
              tau: float = DEFAULT_TEMPERATURE, learn_tau: bool = False) -> HeadParams:
    """Build head weights per strategy; draws come from a seeded PCG64 generator.

    Fan convention for the S x d weight matrix: fan_in = dim, fan_out = S.
    Kaiming uses the rectifier gain sqrt(2) of the scheme it is named after,
    even though this head has no rectifier.
    """
    if n_classes < 2 or dim < 1:
        raise ShapeMismatch(f"need n_classes >= 2 and dim >= 1, got {n_classes}, {dim}")
    if tau <= 0:
        raise ShapeMismatch(f"temperature must be positive, got {tau}")
    if strategy is InitStrategy.ZERO_SHOT:
        if prototypes is None:
            raise DimMismatch("zero-shot init needs a prototype set")
        if prototypes.weights.shape != (n_classes, dim):
            raise DimMismatch(
                f"prototypes are {prototypes.weights.shape}, head needs ({n_classes}, {dim})")
        return HeadParams(prototypes.weights.copy(), tau, learn_tau)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if strategy is InitStrategy.KAIMING_UNIFORM:
        bound = np.sqrt(6.0 / dim)
        w = rng.uniform(-bound, bound, (n_classes, dim))
    elif strategy is InitStrategy.KAIMING_NORMAL:
        w = rng.normal(0.0, np.sqrt(2.0 / dim), (n_classes, dim))
    elif strategy is InitStrategy.XAVIER_UNIFORM:
        bound = np.sqrt(6.0 / (dim + n_classes))
        w = rng.uniform(-bound, bound, (n_classes, dim))
    else:
        w = rng.normal(0.0, np.sqrt(2.0 / (dim + n_classes)), (n_classes, dim))
    return HeadParams(w, tau, learn_tau)


def head_forward(params: HeadParams, z) -> tuple[np.ndarray, np.ndarray, HeadCache]:
    """Probabilities and logits for one unit bag embedding."""
    z = as_vector(z, "bag embedding")
    if z.shape[0] != params.weights.shape[1]:
        raise DimMismatch(f"embedding dim {z.shape[0]} vs head dim {params.weights.shape[1]}")
    probs, logits, w_unit, w_norms = kernels.head_forward(params.weights, params.tau, z)
    return probs, logits, HeadCache(z, probs, logits, w_unit, w_norms, params.tau)


def head_backward(params: HeadParams, cache: HeadCache, target: int):
    """Gradient of the mean-over-classes cross-entropy at one target label.

    Returns (g_weights, g_tau, g_z); g_tau is 0.0 when tau is not learned.
    """
    if cache.w_unit.shape != params.weights.shape or cache.tau != params.tau:
        raise StaleCache("cache does not match current head parameters")
    if not 0 <= target < params.weights.shape[0]:
        raise DimMismatch(f"target {target} outside [0, {params.weights.shape[0]})")
    g_w, g_tau, g_z = kernels.head_backward(
        cache.w_unit, cache.w_norms, params.tau, cache.z, cache.probs,
        cache.logits, target, params.learn_tau)
    return g_w, g_tau, g_z
