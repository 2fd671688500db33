# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-bag kernels: the hot path of training and evaluation.

Semantic twin of `zsmil._core_py`; same signatures, same math, loops fused
and ordered left-to-right so reductions have a fixed accumulation order.
Agreement between the two backends is enforced by tests to float64 roundoff.
"""

from libc.math cimport exp, sqrt, tanh

import numpy as np

from .errors import ZeroNorm

NORM_EPS = 1e-12
LN_EPS = 1e-5
BACKEND_NAME = "c"

cdef double _NORM_EPS = 1e-12
cdef double _LN_EPS = 1e-5


cdef inline double _sigmoid_scalar(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef void _softmax_from(double[::1] src, double[::1] dst) noexcept nogil:
    cdef Py_ssize_t i, n = src.shape[0]
    cdef double m = src[0], s = 0.0
    for i in range(1, n):
        if src[i] > m:
            m = src[i]
    for i in range(n):
        dst[i] = exp(src[i] - m)
        s += dst[i]
    for i in range(n):
        dst[i] /= s


cdef double _final_norm(object arr) except -1.0:
    # the final normalization shares numpy's dot so both backends hand the
    # head bit-identical embeddings for single-instance bags
    return float(np.sqrt(np.dot(arr, arr)))


cdef double _dot(double[::1] a, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            c[i, j] = acc
    return out


cdef _norm_backward(double[::1] z, double vnorm, double[::1] g_z):
    out = np.empty(z.shape[0])
    cdef double[::1] g_v = out
    cdef double zg = _dot(z, g_z)
    cdef Py_ssize_t i
    for i in range(z.shape[0]):
        g_v[i] = (g_z[i] - z[i] * zg) / vnorm
    return out


# --- mean pooling -----------------------------------------------------------

def bgap_forward(double[:, ::1] bag):
    cdef Py_ssize_t n = bag.shape[0], d = bag.shape[1], i, j
    z_arr = np.zeros(d)
    cdef double[::1] z = z_arr
    for i in range(n):
        for j in range(d):
            z[j] += bag[i, j]
    for j in range(d):
        z[j] /= n
    cdef double vnorm = _final_norm(z_arr)
    if vnorm <= _NORM_EPS:
        raise ZeroNorm(f"vector norm {vnorm:g} below {_NORM_EPS:g}")
    for j in range(d):
        z[j] /= vnorm
    return z_arr, vnorm


def bgap_backward(double[::1] z, double vnorm, Py_ssize_t n_rows, double[::1] g_z):
    g_v = _norm_backward(z, vnorm, g_z)
    cdef double[::1] gv = g_v
    out = np.empty((n_rows, z.shape[0]))
    cdef double[:, ::1] g_bag = out
    cdef Py_ssize_t i, j
    for i in range(n_rows):
        for j in range(z.shape[0]):
            g_bag[i, j] = gv[j] / n_rows
    return out


# --- max pooling ------------------------------------------------------------

def bgmp_forward(double[:, ::1] bag):
    cdef Py_ssize_t n = bag.shape[0], d = bag.shape[1], i, j
    z_arr = np.empty(d)
    amax_arr = np.zeros(d, dtype=np.int64)
    cdef double[::1] z = z_arr
    cdef long long[::1] amax = amax_arr
    for j in range(d):
        z[j] = bag[0, j]
    for i in range(1, n):
        for j in range(d):
            if bag[i, j] > z[j]:
                z[j] = bag[i, j]
                amax[j] = i
    cdef double vnorm = _final_norm(z_arr)
    if vnorm <= _NORM_EPS:
        raise ZeroNorm(f"vector norm {vnorm:g} below {_NORM_EPS:g}")
    for j in range(d):
        z[j] /= vnorm
    return z_arr, vnorm, amax_arr


def bgmp_backward(double[::1] z, double vnorm, long long[::1] amax,
                  Py_ssize_t n_rows, double[::1] g_z):
    g_v = _norm_backward(z, vnorm, g_z)
    cdef double[::1] gv = g_v
    out = np.zeros((n_rows, z.shape[0]))
    cdef double[:, ::1] g_bag = out
    cdef Py_ssize_t j
    for j in range(z.shape[0]):
        g_bag[amax[j], j] = gv[j]
    return out


# --- gated attention --------------------------------------------------------

def _np_sigmoid(x):
    # branch-free stable form, identical to the fallback backend's expression
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def abmil_forward(double[:, ::1] bag, double[:, ::1] v_proj,
                  double[:, ::1] u_proj, double[::1] w):
    # the two big products and the transcendentals go through numpy (BLAS,
    # SIMD); gating, softmax, pooling and the norm are fused C loops
    bag_arr = np.asarray(bag)
    tanh_arr = np.tanh(np.matmul(bag_arr, np.asarray(v_proj).T))
    sig_arr = _np_sigmoid(np.matmul(bag_arr, np.asarray(u_proj).T))
    cdef Py_ssize_t n = bag.shape[0], d = bag.shape[1], da = v_proj.shape[0]
    cdef Py_ssize_t i, a, k
    scores_arr = np.empty(n)
    attn_arr = np.empty(n)
    z_arr = np.zeros(d)
    cdef double[:, ::1] tanh_act = tanh_arr
    cdef double[:, ::1] sig_act = sig_arr
    cdef double[::1] scores = scores_arr
    cdef double[::1] attn = attn_arr
    cdef double[::1] z = z_arr
    cdef double s
    for i in range(n):
        s = 0.0
        for a in range(da):
            s += tanh_act[i, a] * sig_act[i, a] * w[a]
        scores[i] = s
    _softmax_from(scores, attn)
    for i in range(n):
        for k in range(d):
            z[k] += attn[i] * bag[i, k]
    cdef double vnorm = _final_norm(z_arr)
    if vnorm <= _NORM_EPS:
        raise ZeroNorm(f"vector norm {vnorm:g} below {_NORM_EPS:g}")
    for k in range(d):
        z[k] /= vnorm
    return z_arr, attn_arr, tanh_arr, sig_arr, vnorm


def abmil_backward(double[:, ::1] bag, double[:, ::1] v_proj, double[:, ::1] u_proj,
                   double[::1] w, double[::1] attn, double[:, ::1] tanh_act,
                   double[:, ::1] sig_act, double[::1] z, double vnorm,
                   double[::1] g_z):
    cdef Py_ssize_t n = bag.shape[0], d = bag.shape[1], da = v_proj.shape[0]
    cdef Py_ssize_t i, a, k
    g_v_arr = _norm_backward(z, vnorm, g_z)
    cdef double[::1] g_v = g_v_arr
    g_w_arr = np.zeros(da)
    g_bag_arr = np.empty((n, d))
    g_pre_v_arr = np.empty((n, da))
    g_pre_u_arr = np.empty((n, da))
    cdef double[::1] g_w = g_w_arr
    cdef double[:, ::1] g_bag = g_bag_arr
    cdef double[:, ::1] g_pre_v = g_pre_v_arr
    cdef double[:, ::1] g_pre_u = g_pre_u_arr
    cdef double dot_ag = 0.0, g_attn_i, g_score, g_gated, t, s

    g_attn_arr = np.empty(n)
    cdef double[::1] g_attn = g_attn_arr
    for i in range(n):
        g_attn_i = 0.0
        for k in range(d):
            g_attn_i += bag[i, k] * g_v[k]
            g_bag[i, k] = attn[i] * g_v[k]
        g_attn[i] = g_attn_i
        dot_ag += attn[i] * g_attn_i
    for i in range(n):
        g_score = attn[i] * (g_attn[i] - dot_ag)
        for a in range(da):
            t = tanh_act[i, a]
            s = sig_act[i, a]
            g_w[a] += g_score * t * s
            g_gated = g_score * w[a]
            g_pre_v[i, a] = g_gated * s * (1.0 - t * t)
            g_pre_u[i, a] = g_gated * t * s * (1.0 - s)
    bag_arr = np.asarray(bag)
    g_vp_arr = np.matmul(g_pre_v_arr.T, bag_arr)
    g_up_arr = np.matmul(g_pre_u_arr.T, bag_arr)
    g_bag_arr += np.matmul(g_pre_v_arr, np.asarray(v_proj))
    g_bag_arr += np.matmul(g_pre_u_arr, np.asarray(u_proj))
    return np.ascontiguousarray(g_vp_arr), np.ascontiguousarray(g_up_arr), \
        g_w_arr, g_bag_arr


# --- single-head attention block with class token ---------------------------

def xformer_forward(double[:, ::1] bag, double[:, ::1] wq, double[:, ::1] wk,
                    double[:, ::1] wv, double[:, ::1] wo, double[::1] token,
                    double[::1] gamma, double[::1] beta):
    cdef Py_ssize_t n = bag.shape[0], d = bag.shape[1], dh = wq.shape[1]
    cdef Py_ssize_t i, j, h
    cdef double mu, var, istd, acc, scale

    t_hat_arr = np.empty(d)
    x_hat_arr = np.empty((n, d))
    x_istd_arr = np.empty(n)
    xln_arr = np.empty((n, d))
    tln_arr = np.empty(d)
    cdef double[::1] t_hat = t_hat_arr
    cdef double[:, ::1] x_hat = x_hat_arr
    cdef double[::1] x_istd = x_istd_arr
    cdef double[:, ::1] xln = xln_arr
    cdef double[::1] tln = tln_arr

    mu = 0.0
    for j in range(d):
        mu += token[j]
    mu /= d
    var = 0.0
    for j in range(d):
        var += (token[j] - mu) * (token[j] - mu)
    var /= d
    cdef double t_istd = 1.0 / sqrt(var + _LN_EPS)
    for j in range(d):
        t_hat[j] = (token[j] - mu) * t_istd
        tln[j] = gamma[j] * t_hat[j] + beta[j]

    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += bag[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            var += (bag[i, j] - mu) * (bag[i, j] - mu)
        var /= d
        istd = 1.0 / sqrt(var + _LN_EPS)
        x_istd[i] = istd
        for j in range(d):
            x_hat[i, j] = (bag[i, j] - mu) * istd
            xln[i, j] = gamma[j] * x_hat[i, j] + beta[j]

    # projections through BLAS
    q_arr = np.matmul(tln_arr, np.asarray(wq))
    keys_arr = np.matmul(xln_arr, np.asarray(wk))
    vals_arr = np.matmul(xln_arr, np.asarray(wv))
    cdef double[::1] q = q_arr
    cdef double[:, ::1] keys = keys_arr
    cdef double[:, ::1] vals = vals_arr

    scores_arr = np.empty(n)
    attn_arr = np.empty(n)
    cdef double[::1] scores = scores_arr
    cdef double[::1] attn = attn_arr
    scale = 1.0 / sqrt(<double> dh)
    for i in range(n):
        acc = 0.0
        for h in range(dh):
            acc += keys[i, h] * q[h]
        scores[i] = acc * scale
    _softmax_from(scores, attn)

    ctx_arr = np.zeros(dh)
    cdef double[::1] ctx = ctx_arr
    for i in range(n):
        for h in range(dh):
            ctx[h] += attn[i] * vals[i, h]

    z_arr = np.empty(d)
    cdef double[::1] z = z_arr
    for j in range(d):
        acc = 0.0
        for h in range(dh):
            acc += ctx[h] * wo[h, j]
        z[j] = token[j] + acc
    cdef double zr_norm = _final_norm(z_arr)
    if zr_norm <= _NORM_EPS:
        raise ZeroNorm(f"vector norm {zr_norm:g} below {_NORM_EPS:g}")
    for j in range(d):
        z[j] /= zr_norm
    return (z_arr, attn_arr, t_hat_arr, t_istd, x_hat_arr, x_istd_arr,
            q_arr, keys_arr, vals_arr, ctx_arr, zr_norm)


def xformer_backward(double[:, ::1] wq, double[:, ::1] wk, double[:, ::1] wv,
                     double[:, ::1] wo, double[::1] token, double[::1] gamma,
                     double[::1] beta, double[::1] z, double[::1] attn,
                     double[::1] t_hat, double t_istd, double[:, ::1] x_hat,
                     double[::1] x_istd, double[::1] q, double[:, ::1] keys,
                     double[:, ::1] vals, double[::1] ctx, double zr_norm,
                     double[::1] g_z):
    cdef Py_ssize_t n = x_hat.shape[0], d = x_hat.shape[1], dh = q.shape[0]
    cdef Py_ssize_t i, j, h
    cdef double acc, scale, dot_ag, mean_gh, mean_ghx

    g_zr_arr = _norm_backward(z, zr_norm, g_z)
    cdef double[::1] g_zr = g_zr_arr

    g_token_arr = np.empty(d)
    g_wo_arr = np.empty((dh, d))
    g_ctx_arr = np.empty(dh)
    cdef double[::1] g_token = g_token_arr
    cdef double[:, ::1] g_wo = g_wo_arr
    cdef double[::1] g_ctx = g_ctx_arr
    for j in range(d):
        g_token[j] = g_zr[j]
    for h in range(dh):
        acc = 0.0
        for j in range(d):
            g_wo[h, j] = ctx[h] * g_zr[j]
            acc += wo[h, j] * g_zr[j]
        g_ctx[h] = acc

    g_attn_arr = np.empty(n)
    g_vals_arr = np.empty((n, dh))
    cdef double[::1] g_attn = g_attn_arr
    cdef double[:, ::1] g_vals = g_vals_arr
    dot_ag = 0.0
    for i in range(n):
        acc = 0.0
        for h in range(dh):
            acc += vals[i, h] * g_ctx[h]
            g_vals[i, h] = attn[i] * g_ctx[h]
        g_attn[i] = acc
        dot_ag += attn[i] * acc

    scale = 1.0 / sqrt(<double> dh)
    g_scores_arr = np.empty(n)
    g_keys_arr = np.empty((n, dh))
    cdef double[::1] g_scores = g_scores_arr
    cdef double[:, ::1] g_keys = g_keys_arr
    g_q_arr = np.zeros(dh)
    cdef double[::1] g_q = g_q_arr
    for i in range(n):
        g_scores[i] = attn[i] * (g_attn[i] - dot_ag)
        for h in range(dh):
            g_q[h] += keys[i, h] * g_scores[i]
            g_keys[i, h] = g_scores[i] * q[h] * scale
    for h in range(dh):
        g_q[h] *= scale

    # recompute the normalized inputs once, then BLAS for the big products
    tln_arr = np.asarray(gamma) * np.asarray(t_hat) + np.asarray(beta)
    xln_arr = np.asarray(gamma)[None, :] * np.asarray(x_hat) + np.asarray(beta)[None, :]
    g_wq_arr = np.outer(tln_arr, g_q_arr)
    g_tln_arr = np.matmul(np.asarray(wq), g_q_arr)
    g_wk_arr = np.matmul(xln_arr.T, g_keys_arr)
    g_wv_arr = np.matmul(xln_arr.T, g_vals_arr)
    g_xln_arr = np.matmul(g_keys_arr, np.asarray(wk).T)
    g_xln_arr += np.matmul(g_vals_arr, np.asarray(wv).T)
    g_xln_arr = np.ascontiguousarray(g_xln_arr)
    cdef double[::1] g_tln = g_tln_arr
    cdef double[:, ::1] g_xln = g_xln_arr

    g_gamma_arr = np.empty(d)
    g_beta_arr = np.empty(d)
    cdef double[::1] g_gamma = g_gamma_arr
    cdef double[::1] g_beta = g_beta_arr
    for j in range(d):
        acc = 0.0
        for i in range(n):
            acc += g_xln[i, j] * x_hat[i, j]
        g_gamma[j] = g_tln[j] * t_hat[j] + acc
        acc = 0.0
        for i in range(n):
            acc += g_xln[i, j]
        g_beta[j] = g_tln[j] + acc

    # layer-norm backward, token row
    mean_gh = 0.0
    mean_ghx = 0.0
    for j in range(d):
        acc = g_tln[j] * gamma[j]
        mean_gh += acc
        mean_ghx += acc * t_hat[j]
    mean_gh /= d
    mean_ghx /= d
    for j in range(d):
        g_token[j] += t_istd * (g_tln[j] * gamma[j] - mean_gh - t_hat[j] * mean_ghx)

    # layer-norm backward, instance rows
    g_bag_arr = np.empty((n, d))
    cdef double[:, ::1] g_bag = g_bag_arr
    for i in range(n):
        mean_gh = 0.0
        mean_ghx = 0.0
        for j in range(d):
            acc = g_xln[i, j] * gamma[j]
            mean_gh += acc
            mean_ghx += acc * x_hat[i, j]
        mean_gh /= d
        mean_ghx /= d
        for j in range(d):
            g_bag[i, j] = x_istd[i] * (g_xln[i, j] * gamma[j] - mean_gh
                                       - x_hat[i, j] * mean_ghx)
    return (np.ascontiguousarray(g_wq_arr), np.ascontiguousarray(g_wk_arr),
            np.ascontiguousarray(g_wv_arr), g_wo_arr, g_token_arr, g_gamma_arr,
            g_beta_arr, g_bag_arr)


# --- cosine classifier head --------------------------------------------------

def head_forward(double[:, ::1] w_rows, double tau, double[::1] z):
    cdef Py_ssize_t s = w_rows.shape[0], d = w_rows.shape[1], c, k
    w_norms_arr = np.empty(s)
    w_unit_arr = np.empty((s, d))
    logits_arr = np.empty(s)
    probs_arr = np.empty(s)
    cdef double[::1] w_norms = w_norms_arr
    cdef double[:, ::1] w_unit = w_unit_arr
    cdef double[::1] logits = logits_arr
    cdef double[::1] probs = probs_arr
    cdef double acc
    for c in range(s):
        acc = 0.0
        for k in range(d):
            acc += w_rows[c, k] * w_rows[c, k]
        acc = sqrt(acc)
        if acc <= _NORM_EPS:
            raise ZeroNorm("classifier weight row degenerated to zero norm")
        w_norms[c] = acc
        for k in range(d):
            w_unit[c, k] = w_rows[c, k] / acc
    for c in range(s):
        acc = 0.0
        for k in range(d):
            acc += w_unit[c, k] * z[k]
        logits[c] = acc / tau
    _softmax_from(logits, probs)
    return probs_arr, logits_arr, w_unit_arr, w_norms_arr


def head_backward(double[:, ::1] w_unit, double[::1] w_norms, double tau,
                  double[::1] z, double[::1] probs, double[::1] logits,
                  Py_ssize_t target, bint learn_tau):
    cdef Py_ssize_t s = w_unit.shape[0], d = w_unit.shape[1], c, k
    g_w_arr = np.empty((s, d))
    g_z_arr = np.zeros(d)
    cdef double[:, ::1] g_w = g_w_arr
    cdef double[::1] g_z = g_z_arr
    cdef double g_logit, rowdot, g_wu, g_tau = 0.0
    for c in range(s):
        g_logit = probs[c]
        if c == target:
            g_logit -= 1.0
        g_logit /= s
        for k in range(d):
            g_z[k] += g_logit * w_unit[c, k]
        rowdot = 0.0
        for k in range(d):
            rowdot += w_unit[c, k] * (g_logit * z[k] / tau)
        for k in range(d):
            g_wu = g_logit * z[k] / tau
            g_w[c, k] = (g_wu - w_unit[c, k] * rowdot) / w_norms[c]
        if learn_tau:
            g_tau -= g_logit * logits[c]
    for k in range(d):
        g_z[k] /= tau
    if learn_tau:
        g_tau /= tau
    return g_w_arr, g_tau, g_z_arr
