"""Small dense kernels with the backward rules the SPD layers need.

All functions accept a single matrix ``(n, n)`` or a stack ``(..., n, n)`` and
work in float64. Gradients with respect to symmetric inputs are returned as
symmetric matrices ``G`` such that ``df = <G, dM>`` for symmetric ``dM``.
"""

from typing import NamedTuple

import numpy as np

from . import _backend
from .errors import InvalidInput, NotPositiveDefinite, RankDeficient


class SymEigPair(NamedTuple):
    U: np.ndarray
    lam: np.ndarray


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _as_stack(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise InvalidInput(f"expected square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInput("matrix has non-finite entries")
    return m.reshape((-1,) + m.shape[-2:]), m.shape[:-2]


def sym_eig(m):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized before factorization.
    """
    stack, lead = _as_stack(m)
    n = stack.shape[-1]
    lam, U = _backend.kernels.sym_eig_batch(stack)
    return SymEigPair(U.reshape(lead + (n, n)), lam.reshape(lead + (n,)))


def _loewner(lam, tie_tol=None):
    diff = lam[..., None, :] - lam[..., :, None]  # lam_j - lam_i
    if tie_tol is None:
        tie_tol = 1e-8 * np.max(np.abs(lam), axis=-1, keepdims=True)[..., None]
    with np.errstate(divide="ignore"):
        K = np.where(np.abs(diff) > tie_tol, 1.0 / np.where(diff == 0, 1.0, diff), 0.0)
    return K


def sym_eig_backward(pair, dlam, dU):
    """Reverse-mode rule for :func:`sym_eig`.

    ``dM = U (diag(dlam) + K o (U^T dU)) U^T`` symmetrized, where
    ``K_ij = 1/(lam_j - lam_i)`` off the diagonal. Pairs closer than
    ``1e-8 * max|lam|`` get ``K_ij = 0``.
    """
    U, lam = pair
    dlam = np.asarray(dlam, dtype=np.float64)
    dU = np.asarray(dU, dtype=np.float64)
    if dlam.shape != lam.shape or dU.shape != U.shape:
        raise InvalidInput("adjoint shapes do not match the eigendecomposition")
    Ut = np.swapaxes(U, -1, -2)
    inner = _loewner(lam) * (Ut @ dU)
    idx = np.arange(lam.shape[-1])
    inner[..., idx, idx] += dlam
    return sym(U @ inner @ Ut)


def spectral_backward(pair, f_lam, df_lam, dY):
    """Backward pass of ``Y = U f(lam) U^T`` via divided differences.

    Equivalent to chaining :func:`sym_eig_backward`, but stays exact inside
    clusters of equal eigenvalues where the plain eigenvector adjoint is
    undefined. ``f_lam`` and ``df_lam`` are ``f`` and ``f'`` at the eigenvalues.
    """
    U, lam = pair
    diff = lam[..., :, None] - lam[..., None, :]
    fdiff = f_lam[..., :, None] - f_lam[..., None, :]
    tol = 1e-8 * np.maximum(np.max(np.abs(lam), axis=-1, keepdims=True)[..., None], 1e-300)
    close = np.abs(diff) <= tol
    avg = 0.5 * (df_lam[..., :, None] + df_lam[..., None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        D = np.where(close, avg, fdiff / np.where(close, 1.0, diff))
    Ut = np.swapaxes(U, -1, -2)
    return sym(U @ (D * (Ut @ sym(dY) @ U)) @ Ut)


def qr_reduced(a):
    """Reduced QR of a tall matrix with a nonnegative diagonal on R."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise InvalidInput(f"qr_reduced needs n >= m, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    Q, R, rmin = _backend.kernels.qr_reduced(a)
    if rmin <= 1e-12 * np.linalg.norm(a):
        raise RankDeficient(f"column rank deficiency, min |R_ii| = {rmin:.3e}")
    return Q, R


def cholesky_lower(m):
    """Lower Cholesky factor with positive diagonal."""
    stack, lead = _as_stack(m)
    L, bad = _backend.kernels.cholesky_batch(stack)
    if bad >= 0:
        raise NotPositiveDefinite(f"non-positive pivot in matrix {bad} of the batch")
    return L.reshape(lead + stack.shape[-2:])


def cholesky_backward(L, dL):
    """Gradient w.r.t. ``M = L L^T`` given the adjoint of its Cholesky factor."""
    L = np.asarray(L, dtype=np.float64)
    P = np.tril(np.swapaxes(L, -1, -2) @ np.tril(dL))
    idx = np.arange(L.shape[-1])
    P[..., idx, idx] *= 0.5
    Linv = np.linalg.inv(L)
    return sym(np.swapaxes(Linv, -1, -2) @ P @ Linv)


def assert_spd(m, floor=0.0):
    """Raise :class:`NotPositiveDefinite` unless every eigenvalue exceeds ``floor``."""
    lam = sym_eig(m).lam
    worst = float(np.min(lam))
    if not worst > floor:
        raise NotPositiveDefinite(f"min eigenvalue {worst:.3e} <= {floor:.3e}")
    return worst
