"""Bag-level aggregation functions: an N x d bag -> one unit-norm embedding.

Four kinds:

* ``BGAP``    mean over rows, then l2-normalized (no parameters)
* ``BGMP``    elementwise max over rows, then l2-normalized (no parameters)
* ``ABMIL``   gated attention (tanh(Vx) * sigmoid(Ux), scored by w),
              attention-weighted sum of rows, l2-normalized
* ``SIMPLE_TRANSFORMER``  one pre-norm single-head attention block where a
              learned class token attends over the instances, with residual
              and output projection, l2-normalized

Every forward returns a record caching the intermediates its backward needs;
backward produces exact analytic gradients, including through the final
normalization. For BGMP the subgradient routes to the first maximal row per
coordinate. The final normalization makes the downstream dot product with
unit prototypes a true cosine similarity for every kind.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import EmptyBag, ShapeMismatch, StaleRecord
from .linalg import as_matrix

ABMIL_HIDDEN_DEFAULT = 128


class AggregatorKind(enum.Enum):
    BGAP = "bgap"
    BGMP = "bgmp"
    ABMIL = "abmil"
    SIMPLE_TRANSFORMER = "transformer"

    @classmethod
    def from_flag(cls, name: str) -> "AggregatorKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ShapeMismatch(f"unknown aggregator {name!r}")


@dataclass
class AbmilParams:
    v_proj: np.ndarray  # Da x d
    u_proj: np.ndarray  # Da x d
    w: np.ndarray       # Da

    def tensors(self) -> dict:
        return {"abmil.v_proj": self.v_proj, "abmil.u_proj": self.u_proj, "abmil.w": self.w}


@dataclass
class SimpleTransformerParams:
    wq: np.ndarray      # d x dh
    wk: np.ndarray      # d x dh
    wv: np.ndarray      # d x dh
    wo: np.ndarray      # dh x d
    token: np.ndarray   # d
    gamma: np.ndarray   # d, layer-norm scale
    beta: np.ndarray    # d, layer-norm shift

    def tensors(self) -> dict:
        return {"xf.wq": self.wq, "xf.wk": self.wk, "xf.wv": self.wv, "xf.wo": self.wo,
                "xf.token": self.token, "xf.gamma": self.gamma, "xf.beta": self.beta}


@dataclass
class BagForwardRecord:
    kind: AggregatorKind
    n_rows: int
    dim: int
    cache: tuple


def init_params(kind: AggregatorKind, dim: int, hidden: int | None = None,
                seed: int | None = None):
    """Fresh aggregator parameters; Xavier-uniform projections, zero w/shift, unit scale.

    The class token is drawn Xavier-style as well: a constant token would be
    degenerate under layer norm. Held fixed across head-init arms so the
    classifier initialization is the only varying factor in ablations.
    """
    if kind in (AggregatorKind.BGAP, AggregatorKind.BGMP):
        return None
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if kind is AggregatorKind.ABMIL:
        da = hidden or ABMIL_HIDDEN_DEFAULT
        bound = np.sqrt(6.0 / (dim + da))
        return AbmilParams(
            v_proj=rng.uniform(-bound, bound, (da, dim)),
            u_proj=rng.uniform(-bound, bound, (da, dim)),
            w=np.zeros(da),
        )
    dh = hidden or dim
    if dh > dim:
        raise ShapeMismatch(f"transformer hidden {dh} must be <= dim {dim}")
    bound = np.sqrt(6.0 / (dim + dh))
    return SimpleTransformerParams(
        wq=rng.uniform(-bound, bound, (dim, dh)),
        wk=rng.uniform(-bound, bound, (dim, dh)),
        wv=rng.uniform(-bound, bound, (dim, dh)),
        wo=rng.uniform(-bound, bound, (dh, dim)),
        token=rng.uniform(-np.sqrt(6.0 / (dim + 1)), np.sqrt(6.0 / (dim + 1)), dim),
        gamma=np.ones(dim),
        beta=np.zeros(dim),
    )


def param_count(kind: AggregatorKind, dim: int, hidden: int | None = None) -> int:
    """Number of trainable scalars in one aggregator."""
    if kind in (AggregatorKind.BGAP, AggregatorKind.BGMP):
        return 0
    if kind is AggregatorKind.ABMIL:
        da = hidden or ABMIL_HIDDEN_DEFAULT
        return 2 * da * dim + da
    dh = hidden or dim
    return 3 * dim * dh + dh * dim + dim + 2 * dim


def _check_bag(bag, params, kind):
    bag = as_matrix(bag, "bag")
    if bag.shape[0] < 1:
        raise EmptyBag("bag has no instances")
    if kind is AggregatorKind.ABMIL:
        if params.v_proj.shape[1] != bag.shape[1]:
            raise ShapeMismatch(
                f"bag dim {bag.shape[1]} vs abmil projection dim {params.v_proj.shape[1]}")
    elif kind is AggregatorKind.SIMPLE_TRANSFORMER:
        if params.wq.shape[0] != bag.shape[1]:
            raise ShapeMismatch(
                f"bag dim {bag.shape[1]} vs transformer dim {params.wq.shape[0]}")
    return bag


def forward(kind: AggregatorKind, params, bag):
    """Returns (z, record, attention). Attention is None for BGAP/BGMP."""
    bag = _check_bag(bag, params, kind)
    n, d = bag.shape
    if kind is AggregatorKind.BGAP:
        z, vnorm = kernels.bgap_forward(bag)
        return z, BagForwardRecord(kind, n, d, (z, vnorm)), None
    if kind is AggregatorKind.BGMP:
        z, vnorm, amax = kernels.bgmp_forward(bag)
        return z, BagForwardRecord(kind, n, d, (z, vnorm, amax)), None
    if kind is AggregatorKind.ABMIL:
        z, attn, tanh_act, sig_act, vnorm = kernels.abmil_forward(
            bag, params.v_proj, params.u_proj, params.w)
        rec = BagForwardRecord(kind, n, d, (bag, attn, tanh_act, sig_act, z, vnorm))
        return z, rec, attn
    out = kernels.xformer_forward(bag, params.wq, params.wk, params.wv, params.wo,
                                  params.token, params.gamma, params.beta)
    z, attn = out[0], out[1]
    return z, BagForwardRecord(kind, n, d, out), attn


def backward(kind: AggregatorKind, params, record: BagForwardRecord, g_z):
    """Gradients of (z . g_z): returns (param-gradient dict, bag gradient)."""
    if record.kind is not kind:
        raise StaleRecord(f"record is for {record.kind.value}, not {kind.value}")
    if g_z.shape != (record.dim,):
        raise StaleRecord(f"gradient dim {g_z.shape} vs record dim {record.dim}")
    if kind is AggregatorKind.BGAP:
        z, vnorm = record.cache
        return {}, kernels.bgap_backward(z, vnorm, record.n_rows, g_z)
    if kind is AggregatorKind.BGMP:
        z, vnorm, amax = record.cache
        return {}, kernels.bgmp_backward(z, vnorm, amax, record.n_rows, g_z)
    if kind is AggregatorKind.ABMIL:
        bag, attn, tanh_act, sig_act, z, vnorm = record.cache
        if bag.shape[1] != params.v_proj.shape[1]:
            raise StaleRecord("record does not match parameter shapes")
        g_v, g_u, g_w, g_bag = kernels.abmil_backward(
            bag, params.v_proj, params.u_proj, params.w,
            attn, tanh_act, sig_act, z, vnorm, g_z)
        return {"abmil.v_proj": g_v, "abmil.u_proj": g_u, "abmil.w": g_w}, g_bag
    (z, attn, t_hat, t_istd, x_hat, x_istd, q, keys, vals, ctx, zr_norm) = record.cache
    if q.shape[0] != params.wq.shape[1]:
        raise StaleRecord("record does not match parameter shapes")
    g_wq, g_wk, g_wv, g_wo, g_token, g_gamma, g_beta, g_bag = kernels.xformer_backward(
        params.wq, params.wk, params.wv, params.wo, params.token, params.gamma,
        params.beta, z, attn, t_hat, t_istd, x_hat, x_istd, q, keys, vals, ctx,
        zr_norm, g_z)
    grads = {"xf.wq": g_wq, "xf.wk": g_wk, "xf.wv": g_wv, "xf.wo": g_wo,
             "xf.token": g_token, "xf.gamma": g_gamma, "xf.beta": g_beta}
    return grads, g_bag
