"""Shared test oracles: central finite differences and gradient comparison."""

import numpy as np


def fd_gradient(f, x, h=1e-6):
    """Central-difference gradient of scalar f at array x (any shape)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-5):
    """Worst-case |a - n| / max(|a|, |n|, floor).

    Central differences at h=1e-6 carry ~1e-10 roundoff noise, so entries
    below the floor are judged against the floor (an absolute criterion of
    floor * rtol) instead of drowning in that noise.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max())


def random_unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.sqrt((m * m).sum(axis=1, keepdims=True))
