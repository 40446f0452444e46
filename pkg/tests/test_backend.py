"""The compiled kernels and the numpy fallback must agree on every input."""

import os
import subprocess
import sys

import numpy as np
import pytest

from cov2pose import _backend, _fallback

pytestmark = pytest.mark.skipif(_backend.compiled is None, reason="compiled kernels not built")


def _spd_stack(rng, b, n):
    a = rng.standard_normal((b, n, n))
    return a @ np.swapaxes(a, 1, 2) + np.eye(n)


@pytest.mark.parametrize("n", [1, 2, 4, 6, 7, 12, 16, 24])
def test_sym_eig_agree(rng, n):
    a = rng.standard_normal((5, n, n))
    a = a + np.swapaxes(a, 1, 2)
    lc, Uc = _backend.compiled.sym_eig_batch(a)
    lp, Up = _fallback.sym_eig_batch(a)
    assert np.allclose(lc, lp, atol=1e-12 * max(1, np.abs(lp).max()))
    for b in range(5):
        assert np.allclose((Uc[b] * lc[b]) @ Uc[b].T, a[b], atol=1e-11)


def test_sym_eig_lapack_path_agrees(rng):
    a = rng.standard_normal((3, 5, 5))
    a = a + np.swapaxes(a, 1, 2)
    lj, _ = _backend.compiled.sym_eig_batch(a)
    ll, _ = _backend.compiled.sym_eig_lapack_batch(a)
    assert np.allclose(lj, ll, atol=1e-12)


def test_cholesky_agree(rng):
    a = _spd_stack(rng, 6, 4)
    Lc, bc = _backend.compiled.cholesky_batch(a)
    Lp, bp = _fallback.cholesky_batch(a)
    assert bc == bp == -1
    assert np.allclose(Lc, Lp, atol=1e-13)
    a[3] = -np.eye(4)
    assert _backend.compiled.cholesky_batch(a)[1] == _fallback.cholesky_batch(a)[1] == 3


@pytest.mark.parametrize("shape", [(3, 3), (7, 2), (16, 12)])
def test_qr_agree(rng, shape):
    a = rng.standard_normal(shape)
    Qc, Rc, rc = _backend.compiled.qr_reduced(a)
    Qp, Rp, rp = _fallback.qr_reduced(a)
    assert np.allclose(Qc, Qp, atol=1e-13) and np.allclose(Rc, Rp, atol=1e-13)
    assert np.isclose(rc, rp)


def test_cov_pool_agree(rng):
    x = rng.standard_normal((4, 9, 16))
    Sc, Xc = _backend.compiled.cov_pool_batch(x)
    Sp, Xp = _fallback.cov_pool_batch(x)
    assert np.allclose(Sc, Sp, atol=1e-13) and np.allclose(Xc, Xp, atol=1e-14)
    assert np.array_equal(Sc, np.swapaxes(Sc, 1, 2))
    g = rng.standard_normal((4, 16, 16))
    assert np.allclose(_backend.compiled.cov_pool_backward_batch(Xc, g), _fallback.cov_pool_backward_batch(Xp, g), atol=1e-13)


def test_render_agree(rng):
    uv = rng.uniform(3, 28, (12, 2))
    inten = np.linspace(1, 0.3, 12)
    assert np.allclose(_backend.compiled.render_points(uv, inten, 32, 32, 1.2),
                       _fallback.render_points(uv, inten, 32, 32, 1.2), atol=1e-14)


def test_nn_agree(rng):
    a = rng.standard_normal((30, 3))
    b = rng.standard_normal((20, 3))
    assert np.allclose(_backend.compiled.nn_min_dist(a, b), _fallback.nn_min_dist(a, b), atol=1e-14)


def test_env_var_forces_python():
    code = "from cov2pose import _backend; print(_backend.NAME)"
    env = dict(os.environ, COV2POSE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env["COV2POSE_PURE_PYTHON"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "compiled"


def test_batch_equals_sequential(rng):
    x = rng.standard_normal((5, 6, 9))
    S, _ = _backend.kernels.cov_pool_batch(x)
    for b in range(5):
        Sb, _ = _backend.kernels.cov_pool_batch(x[b:b + 1])
        assert np.array_equal(S[b], Sb[0])
