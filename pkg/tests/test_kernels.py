import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ellmix import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not available")


def _inputs(rng, n=257, d=3):
    x = rng.normal(size=(n, d)) * [100.0, 50.0, 20.0][:d]
    w = rng.random(n)
    a = rng.normal(size=(d, d))
    chol = np.linalg.cholesky(a @ a.T + d * np.eye(d))
    mu = rng.normal(size=d)
    return x, w, mu, chol


@needs_numba
@pytest.mark.parametrize("d", [2, 3])
def test_backends_agree(rng, d):
    x, w, mu, chol = _inputs(rng, d=d)
    nb, npk = _kernels.numba_kernels, _kernels.numpy_kernels
    np.testing.assert_allclose(nb.mahal_sq(x, mu, chol), npk.mahal_sq(x, mu, chol), rtol=1e-12)
    np.testing.assert_allclose(nb.weighted_mean(x, w), npk.weighted_mean(x, w), rtol=1e-12)
    np.testing.assert_allclose(nb.weighted_scatter(x, w, mu), npk.weighted_scatter(x, w, mu), rtol=1e-12)
    np.testing.assert_allclose(nb.center_update(x, w, mu, chol, 1e-9),
                               npk.center_update(x, w, mu, chol, 1e-9), rtol=1e-12, atol=1e-12)
    logp = rng.normal(size=(100, 4)) * 50
    logp[3] = -np.inf
    r1, l1, b1 = nb.row_softmax(logp)
    r2, l2, b2 = npk.row_softmax(logp)
    np.testing.assert_allclose(r1, r2, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(l1, l2, rtol=1e-12)
    assert b1 == b2 == 1


def test_backend_flag_reported():
    assert _kernels.BACKEND in ("numba", "numpy")
    if _kernels.DISABLED_BY_ENV:
        assert _kernels.BACKEND == "numpy"


def test_env_flag_forces_numpy_backend():
    import subprocess
    import sys
    out = subprocess.run(
        [sys.executable, "-c", "from ellmix import _kernels; print(_kernels.BACKEND)"],
        env={**__import__("os").environ, "ELLMIX_DISABLE_NUMBA": "1"},
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_softmax_all_minus_inf_row_is_uniform():
    logp = np.array([[-np.inf, -np.inf, -np.inf], [0.0, -np.inf, 0.0]])
    resp, lse, nbad = _kernels.row_softmax(logp)
    np.testing.assert_allclose(resp[0], 1 / 3)
    np.testing.assert_allclose(resp[1], [0.5, 0.0, 0.5])
    assert nbad == 1
    assert lse[0] == -np.inf


def test_center_update_on_exact_sphere_is_zero():
    x = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0], [0, 0, -1.0]])
    mu = _kernels.center_update(x, np.ones(6), np.zeros(3), np.eye(3), 1e-9)
    np.testing.assert_array_equal(mu, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(logp=arrays(float, (7, 3), elements=st.floats(-1e4, 1e4)))
def test_prop_softmax_rows_sum_to_one(logp):
    resp, lse, nbad = _kernels.row_softmax(logp)
    np.testing.assert_allclose(resp.sum(axis=1), 1.0, rtol=1e-12)
    assert np.all(resp >= 0)
    assert np.all(lse >= logp.max(axis=1) - 1e-9)
    assert nbad == 0


@settings(max_examples=50, deadline=None)
@given(x=arrays(float, (9, 2), elements=st.floats(-100, 100)),
       w=arrays(float, 9, elements=st.floats(0.01, 10)))
def test_prop_weighted_scatter_is_psd(x, w):
    s = _kernels.weighted_scatter(x, w, _kernels.weighted_mean(x, w))
    np.testing.assert_allclose(s, s.T, atol=1e-9)
    assert np.linalg.eigvalsh(s).min() >= -1e-8 * max(1.0, np.trace(s))
