"""Compiled and fallback kernels must agree to float64 roundoff."""

import numpy as np
import pytest

from zsmil import _core_py

core = pytest.importorskip("zsmil._core", reason="compiled extension not built")

RTOL = 1e-12
ATOL = 1e-12


def agree(a, b):
    if isinstance(a, tuple):
        for x, y in zip(a, b, strict=True):
            agree(x, y)
    elif isinstance(a, float):
        np.testing.assert_allclose(a, b, rtol=RTOL, atol=ATOL)
    else:
        np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=RTOL, atol=ATOL)


@pytest.fixture(params=range(5))
def rng(request):
    return np.random.default_rng(1000 + request.param)


def test_matmul(rng):
    a = rng.standard_normal((int(rng.integers(1, 20)), int(rng.integers(1, 20))))
    b = rng.standard_normal((a.shape[1], int(rng.integers(1, 20))))
    agree(core.matmul(a, b), _core_py.matmul(a, b))


def test_bgap(rng):
    bag = rng.standard_normal((int(rng.integers(1, 30)), 12))
    fc, fp = core.bgap_forward(bag), _core_py.bgap_forward(bag)
    agree(fc, fp)
    g = rng.standard_normal(12)
    agree(core.bgap_backward(fc[0], fc[1], bag.shape[0], g),
          _core_py.bgap_backward(fp[0], fp[1], bag.shape[0], g))


def test_bgmp(rng):
    bag = rng.standard_normal((int(rng.integers(1, 30)), 12))
    fc, fp = core.bgmp_forward(bag), _core_py.bgmp_forward(bag)
    agree(fc[:2], fp[:2])
    np.testing.assert_array_equal(fc[2], fp[2])
    g = rng.standard_normal(12)
    agree(core.bgmp_backward(fc[0], fc[1], fc[2], bag.shape[0], g),
          _core_py.bgmp_backward(fp[0], fp[1], fp[2], bag.shape[0], g))


def test_abmil(rng):
    n, d, da = int(rng.integers(1, 20)), 10, 6
    bag = rng.standard_normal((n, d))
    v, u, w = (rng.standard_normal((da, d)), rng.standard_normal((da, d)),
               rng.standard_normal(da))
    fc, fp = core.abmil_forward(bag, v, u, w), _core_py.abmil_forward(bag, v, u, w)
    agree(fc, fp)
    g = rng.standard_normal(d)
    agree(core.abmil_backward(bag, v, u, w, fc[1], fc[2], fc[3], fc[0], fc[4], g),
          _core_py.abmil_backward(bag, v, u, w, fp[1], fp[2], fp[3], fp[0], fp[4], g))


def test_xformer(rng):
    n, d, dh = int(rng.integers(1, 20)), 10, 6
    bag = rng.standard_normal((n, d))
    wq, wk, wv = (rng.standard_normal((d, dh)) for _ in range(3))
    wo = rng.standard_normal((dh, d))
    token = rng.standard_normal(d)
    gamma, beta = rng.standard_normal(d), rng.standard_normal(d)
    fc = core.xformer_forward(bag, wq, wk, wv, wo, token, gamma, beta)
    fp = _core_py.xformer_forward(bag, wq, wk, wv, wo, token, gamma, beta)
    agree(fc, fp)
    g = rng.standard_normal(d)
    agree(core.xformer_backward(wq, wk, wv, wo, token, gamma, beta, *fc, g),
          _core_py.xformer_backward(wq, wk, wv, wo, token, gamma, beta, *fp, g))


def test_head(rng):
    s, d = int(rng.integers(2, 6)), 10
    w = rng.standard_normal((s, d))
    z = rng.standard_normal(d)
    z /= np.linalg.norm(z)
    fc, fp = core.head_forward(w, 0.07, z), _core_py.head_forward(w, 0.07, z)
    agree(fc, fp)
    target = int(rng.integers(0, s))
    agree(core.head_backward(fc[2], fc[3], 0.07, z, fc[0], fc[1], target, True),
          _core_py.head_backward(fp[2], fp[3], 0.07, z, fp[0], fp[1], target, True))


def test_zero_norm_raised_by_both():
    from zsmil.errors import ZeroNorm

    bag = np.zeros((3, 4))
    for mod in (core, _core_py):
        with pytest.raises(ZeroNorm):
            mod.bgap_forward(bag)


def test_sigmoid_semantics_match():
    x = np.array([-750.0, -30.0, -1e-12, 0.0, 1e-12, 30.0, 750.0])
    expected = _core_py._sigmoid(x)
    assert np.isfinite(expected).all()
    got = core._np_sigmoid(x)
    np.testing.assert_array_equal(got, expected)
