"""Pure numpy twins of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def sym_eig_batch(a):
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    lam, U = np.linalg.eigh(sym)
    return np.ascontiguousarray(lam[:, ::-1]), np.ascontiguousarray(U[:, :, ::-1])


def cholesky_batch(a):
    try:
        return np.linalg.cholesky(a), -1
    except np.linalg.LinAlgError:
        for b in range(a.shape[0]):
            try:
                np.linalg.cholesky(a[b])
            except np.linalg.LinAlgError:
                return np.zeros_like(a), b
        raise


def qr_reduced(a):
    Q, R = np.linalg.qr(np.asarray(a, dtype=np.float64), mode="reduced")
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    Q = Q * signs
    R = R * signs[:, None]
    rmin = float(np.min(np.abs(np.diag(R)))) if R.size else 0.0
    return Q, R, rmin


def cov_pool_batch(x):
    xc = x - x.mean(axis=1, keepdims=True)
    s = np.einsum("bcp,bcq->bpq", xc, xc) / (x.shape[1] - 1)
    s = np.triu(s)
    s = s + np.swapaxes(np.triu(s, 1), -1, -2)
    return s, xc


def cov_pool_backward_batch(xc, g):
    gs = (g + np.swapaxes(g, -1, -2)) / (xc.shape[1] - 1)
    return xc @ gs


def render_points(uv, inten, height, width, sigma):
    rows = np.arange(height, dtype=np.float64)[:, None, None]
    cols = np.arange(width, dtype=np.float64)[None, :, None]
    d2 = (cols - uv[:, 0]) ** 2 + (rows - uv[:, 1]) ** 2
    img = np.sum(inten * np.exp(-d2 / (2.0 * sigma * sigma)), axis=-1)
    return np.clip(img, 0.0, 1.0)


def nn_min_dist(a, b):
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.sqrt(d2.min(axis=1))
