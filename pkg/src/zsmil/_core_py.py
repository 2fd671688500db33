"""Pure-python (numpy) implementations of the per-bag compute kernels.

This is the fallback backend: `zsmil._backend` prefers the compiled
extension `zsmil._core` when it is importable and drops back to this module
otherwise. Both backends expose identical signatures and must agree to
float64 roundoff; `tests/test_backend_parity.py` enforces that whenever the
extension is present.

All arrays are C-contiguous float64. Kernels assume shape-valid inputs
(the wrapping modules validate); data-dependent degeneracies (zero norms)
are still raised here.
"""

from __future__ import annotations

import numpy as np

from .errors import ZeroNorm

NORM_EPS = 1e-12
LN_EPS = 1e-5

BACKEND_NAME = "python"


def _softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _sigmoid(x):
    # branch-free stable form: exp(-|x|) never overflows
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def _unit(v):
    norm = float(np.sqrt(np.dot(v, v)))
    if norm <= NORM_EPS:
        raise ZeroNorm(f"vector norm {norm:g} below {NORM_EPS:g}")
    return v / norm, norm


def _norm_backward(z, vnorm, g_z):
    # z = v / |v|  =>  dv = (g - z (z.g)) / |v|
    return (g_z - z * float(np.dot(z, g_z))) / vnorm


def matmul(a, b):
    return np.ascontiguousarray(a @ b)


# --- mean pooling -----------------------------------------------------------

def bgap_forward(bag):
    v = bag.mean(axis=0)
    z, vnorm = _unit(v)
    return z, vnorm


def bgap_backward(z, vnorm, n_rows, g_z):
    g_v = _norm_backward(z, vnorm, g_z)
    return np.tile(g_v / n_rows, (n_rows, 1))


# --- max pooling ------------------------------------------------------------

def bgmp_forward(bag):
    amax = bag.argmax(axis=0).astype(np.int64)  # first maximal row per column
    v = bag[amax, np.arange(bag.shape[1])]
    z, vnorm = _unit(v)
    return z, vnorm, amax


def bgmp_backward(z, vnorm, amax, n_rows, g_z):
    g_v = _norm_backward(z, vnorm, g_z)
    g_bag = np.zeros((n_rows, g_z.shape[0]))
    g_bag[amax, np.arange(g_z.shape[0])] = g_v
    return g_bag


# --- gated attention --------------------------------------------------------

def abmil_forward(bag, v_proj, u_proj, w):
    tanh_act = np.tanh(bag @ v_proj.T)           # N x Da
    sig_act = _sigmoid(bag @ u_proj.T)           # N x Da
    scores = (tanh_act * sig_act) @ w            # N
    attn = _softmax(scores)
    v = attn @ bag
    z, vnorm = _unit(v)
    return z, attn, tanh_act, sig_act, vnorm


def abmil_backward(bag, v_proj, u_proj, w, attn, tanh_act, sig_act, z, vnorm, g_z):
    g_v = _norm_backward(z, vnorm, g_z)
    g_attn = bag @ g_v
    g_bag = np.outer(attn, g_v)
    # softmax jacobian applied to the attention gradient
    g_scores = attn * (g_attn - float(np.dot(attn, g_attn)))
    gated = tanh_act * sig_act
    g_w = gated.T @ g_scores
    g_gated = np.outer(g_scores, w)
    g_pre_v = g_gated * sig_act * (1.0 - tanh_act * tanh_act)
    g_pre_u = g_gated * tanh_act * sig_act * (1.0 - sig_act)
    g_vp = g_pre_v.T @ bag
    g_up = g_pre_u.T @ bag
    g_bag += g_pre_v @ v_proj + g_pre_u @ u_proj
    return g_vp, g_up, g_w, g_bag


# --- single-head attention block with class token ---------------------------

def _layer_norm(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + LN_EPS)
    return (x - mu) * istd, istd


def _layer_norm_backward(x_hat, istd, gamma, g_y):
    # y = gamma*x_hat + beta; returns (g_x, g_gamma_contrib, g_beta_contrib)
    g_h = g_y * gamma
    d = x_hat.shape[-1]
    g_x = istd * (g_h - g_h.sum(axis=-1, keepdims=True) / d
                  - x_hat * (g_h * x_hat).sum(axis=-1, keepdims=True) / d)
    return g_x


def xformer_forward(bag, wq, wk, wv, wo, token, gamma, beta):
    t_hat, t_istd = _layer_norm(token)
    x_hat, x_istd = _layer_norm(bag)
    tln = gamma * t_hat + beta
    xln = gamma * x_hat + beta
    q = tln @ wq                                  # dh
    keys = xln @ wk                               # N x dh
    vals = xln @ wv                               # N x dh
    scale = 1.0 / np.sqrt(wq.shape[1])
    attn = _softmax(keys @ q * scale)
    ctx = attn @ vals                             # dh
    zr = token + ctx @ wo                         # residual on the class token
    z, zr_norm = _unit(zr)
    return (z, attn, t_hat, float(t_istd[0]), x_hat, x_istd[:, 0],
            q, keys, vals, ctx, zr_norm)


def xformer_backward(wq, wk, wv, wo, token, gamma, beta,
                     z, attn, t_hat, t_istd, x_hat, x_istd,
                     q, keys, vals, ctx, zr_norm, g_z):
    g_zr = _norm_backward(z, zr_norm, g_z)
    g_token = g_zr.copy()
    g_wo = np.outer(ctx, g_zr)
    g_ctx = wo @ g_zr
    g_attn = vals @ g_ctx
    g_vals = np.outer(attn, g_ctx)
    g_scores = attn * (g_attn - float(np.dot(attn, g_attn)))
    scale = 1.0 / np.sqrt(wq.shape[1])
    g_q = (keys.T @ g_scores) * scale
    g_keys = np.outer(g_scores, q) * scale

    tln = gamma * t_hat + beta
    xln = gamma * x_hat + beta
    g_wq = np.outer(tln, g_q)
    g_tln = wq @ g_q
    g_wk = xln.T @ g_keys
    g_wv = xln.T @ g_vals
    g_xln = g_keys @ wk.T + g_vals @ wv.T

    g_gamma = g_tln * t_hat + (g_xln * x_hat).sum(axis=0)
    g_beta = g_tln + g_xln.sum(axis=0)
    g_token += _layer_norm_backward(t_hat, t_istd, gamma, g_tln)
    g_bag = _layer_norm_backward(x_hat, x_istd[:, None], gamma, g_xln)
    return g_wq, g_wk, g_wv, g_wo, g_token, g_gamma, g_beta, g_bag


# --- cosine classifier head --------------------------------------------------

def head_forward(w_rows, tau, z):
    w_norms = np.sqrt((w_rows * w_rows).sum(axis=1))
    if (w_norms <= NORM_EPS).any():
        raise ZeroNorm("classifier weight row degenerated to zero norm")
    w_unit = w_rows / w_norms[:, None]
    logits = (w_unit @ z) / tau
    probs = _softmax(logits)
    return probs, logits, w_unit, w_norms


def head_backward(w_unit, w_norms, tau, z, probs, logits, target, learn_tau):
    n_classes = probs.shape[0]
    g_logits = probs.copy()
    g_logits[target] -= 1.0
    g_logits /= n_classes
    g_z = (g_logits @ w_unit) / tau
    g_wu = np.outer(g_logits, z) / tau
    g_w = (g_wu - w_unit * (w_unit * g_wu).sum(axis=1, keepdims=True)) / w_norms[:, None]
    g_tau = -float(np.dot(g_logits, logits)) / tau if learn_tau else 0.0
    return g_w, g_tau, g_z
