"""Forward and backward passes of the SPD layers.

Feature maps are ``(C, H, W)`` or batched ``(B, C, H, W)``. SPD inputs are
``(n, n)`` or ``(B, n, n)``; BiMap weights are shared across the batch.
Incoming adjoints of symmetric-valued outputs are symmetrized before use.
"""

import numpy as np

from . import _backend
from .errors import InvalidInput
from .linalg import spectral_backward, sym, sym_eig


def _flatten_features(F):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim not in (3, 4):
        raise InvalidInput(f"feature map must be (C,H,W) or (B,C,H,W), got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise InvalidInput("feature map has non-finite entries")
    batched = F.ndim == 4
    X = F.reshape((-1,) + F.shape[-3:])
    return X.reshape(X.shape[0], X.shape[1], -1), batched


def _adjoint(dS, batch, n):
    dS = np.asarray(dS, dtype=np.float64)
    if dS.shape[-2:] != (n, n) or dS.size != batch * n * n:
        raise InvalidInput(f"adjoint shape {dS.shape} does not match {batch} matrices of size {n}x{n}")
    return dS.reshape(batch, n, n)


def cov_pool(F):
    """Spatial covariance over the ``N = H*W`` locations, channels as samples.

    Output is symmetric PSD with rank at most ``C - 1``.
    """
    X, batched = _flatten_features(F)
    if X.shape[1] < 2:
        raise InvalidInput("cov_pool needs at least two channels")
    S, _ = _backend.kernels.cov_pool_batch(np.ascontiguousarray(X))
    return S if batched else S[0]


def cov_pool_backward(F, dS):
    X, batched = _flatten_features(F)
    N = X.shape[2]
    dS = _adjoint(dS, X.shape[0], N)
    Xc = X - X.mean(axis=1, keepdims=True)
    dX = _backend.kernels.cov_pool_backward_batch(np.ascontiguousarray(Xc), np.ascontiguousarray(dS))
    dF = dX.reshape(np.shape(F) if batched else (1,) + np.shape(F))
    return dF if batched else dF[0]


def channel_cov_pool(F):
    """Channel covariance ``C x C`` with the per-channel spatial mean removed."""
    X, batched = _flatten_features(F)
    if X.shape[2] < 2:
        raise InvalidInput("channel_cov_pool needs at least two spatial locations")
    S, _ = _backend.kernels.cov_pool_batch(np.ascontiguousarray(np.swapaxes(X, 1, 2)))
    return S if batched else S[0]


def channel_cov_pool_backward(F, dS):
    X, batched = _flatten_features(F)
    C = X.shape[1]
    dS = _adjoint(dS, X.shape[0], C)
    Xt = np.swapaxes(X, 1, 2)
    Xc = Xt - Xt.mean(axis=1, keepdims=True)
    dXt = _backend.kernels.cov_pool_backward_batch(np.ascontiguousarray(Xc), np.ascontiguousarray(dS))
    dF = np.swapaxes(dXt, 1, 2).reshape(np.shape(F) if batched else (1,) + np.shape(F))
    return dF if batched else dF[0]


def _check_bimap(X, W):
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or X.shape[-1] != W.shape[0] or X.shape[-2] != W.shape[0]:
        raise InvalidInput(f"BiMap shape mismatch: X {X.shape}, W {W.shape}")
    if W.shape[1] > W.shape[0]:
        raise InvalidInput("BiMap weight must satisfy m <= n")
    return X, W


def bimap_forward(X, W):
    """Congruence ``W^T X W`` reducing ``n x n`` to ``m x m``."""
    X, W = _check_bimap(X, W)
    return sym(W.T @ X @ W)


def bimap_backward(X, W, dY):
    """Returns ``(dX, dW)``; ``dW`` is the Euclidean gradient summed over the batch."""
    X, W = _check_bimap(X, W)
    dY = sym(np.asarray(dY, dtype=np.float64))
    dX = W @ dY @ W.T
    dW = 2.0 * X @ W @ dY
    if dW.ndim == 3:
        dW = dW.sum(axis=0)
    return dX, dW


def _check_eps(eps):
    if not eps > 0:
        raise InvalidInput(f"ReEig floor must be positive, got {eps}")


def reeig_forward(X, eps, pair=None):
    """Clamp eigenvalues from below at ``eps``: ``U max(lam, eps) U^T``."""
    _check_eps(eps)
    U, lam = pair if pair is not None else sym_eig(X)
    return sym((U * np.maximum(lam, eps)[..., None, :]) @ np.swapaxes(U, -1, -2))


def reeig_backward(X, eps, dY, pair=None):
    """Clamped eigenvalues pass no gradient, including exactly at the kink."""
    _check_eps(eps)
    pair = pair if pair is not None else sym_eig(X)
    lam = pair.lam
    return spectral_backward(pair, np.maximum(lam, eps), (lam > eps).astype(np.float64), dY)


def log_eig(X, pair=None):
    """Matrix logarithm of an SPD matrix, ``U log(lam) U^T``."""
    U, lam = pair if pair is not None else sym_eig(X)
    if np.any(lam <= 0):
        raise InvalidInput("log_eig needs a positive definite input")
    return sym((U * np.log(lam)[..., None, :]) @ np.swapaxes(U, -1, -2))


def log_eig_backward(X, dY, pair=None):
    pair = pair if pair is not None else sym_eig(X)
    lam = pair.lam
    return spectral_backward(pair, np.log(lam), 1.0 / lam, dY)


def log_euclidean_distance(A, B):
    """Frobenius distance between matrix logarithms."""
    return float(np.linalg.norm(log_eig(A) - log_eig(B)))
