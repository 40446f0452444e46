"""Training objectives with hand-written gradients.

Batched inputs carry a leading sample axis. Returned losses are batch means
and the returned gradients are gradients of that mean.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .codec import gram_schmidt_backward, gram_schmidt_so3
from .errors import InvalidInput
from .spd import log_eig, log_eig_backward
from .linalg import sym_eig

ARCCOS_MARGIN = 1e-7
DEFAULT_LAMBDA = 1e-3


@dataclass(frozen=True)
class LossBreakdown:
    rotation_geodesic: float
    translation_l2: float
    regularizer: float
    total: float
    lam: float
    # only the log-tangent ablation fills this term
    tangent_frobenius: float = 0.0

    def as_row(self):
        row = asdict(self)
        row["lambda"] = row.pop("lam")
        return row


def _check_rotation(R, name):
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise InvalidInput(f"{name} must be 3x3, got {R.shape}")
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max() if R.size else 0.0
    if ortho > 1e-6 or np.any(np.abs(np.linalg.det(R) - 1.0) > 1e-6):
        raise InvalidInput(f"{name} is not a rotation matrix")
    return R


def geodesic_rotation_loss(R_hat, R_gt, check=True):
    """Angle of ``R_hat^T R_gt`` with its gradient w.r.t. ``R_hat``.

    The arccos argument is clamped ``1e-7`` inside ``[-1, 1]``; on the clamp
    the gradient is zero. Works per sample on stacked inputs.
    """
    if check:
        R_hat = _check_rotation(R_hat, "R_hat")
        R_gt = _check_rotation(R_gt, "R_gt")
    tr = np.sum(R_hat * R_gt, axis=(-2, -1))
    c = 0.5 * (tr - 1.0)
    cc = np.clip(c, -1.0 + ARCCOS_MARGIN, 1.0 - ARCCOS_MARGIN)
    angle = np.arccos(cc)
    slope = np.where(cc == c, -0.5 / np.sqrt(1.0 - cc * cc), 0.0)
    return angle, slope[..., None, None] * R_gt


def orthonormality_penalty(u, v):
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    dot = np.sum(u * v, axis=-1)
    value = dot ** 2 + (nu - 1.0) ** 2 + (nv - 1.0) ** 2
    du = 2.0 * dot[..., None] * v + 2.0 * ((nu - 1.0) / nu)[..., None] * u
    dv = 2.0 * dot[..., None] * u + 2.0 * ((nv - 1.0) / nv)[..., None] * v
    return value, du, dv


def translation_l2(t_hat, t_gt):
    diff = np.asarray(t_hat, dtype=np.float64) - t_gt
    norm = np.linalg.norm(diff, axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    return norm, np.where(norm[..., None] > 0, diff / safe[..., None], 0.0)


def _batch_mean(x):
    return float(np.mean(x))


def pose_loss(u, v, t, R_gt, t_gt, lam=DEFAULT_LAMBDA):
    """Geodesic + translation L2 + ``lam`` times the orthonormality penalty.

    Returns ``(LossBreakdown, (du, dv, dt))``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    R_hat = gram_schmidt_so3(u, v)
    rot, dR = geodesic_rotation_loss(R_hat, np.asarray(R_gt, dtype=np.float64), check=False)
    trans, dt = translation_l2(t, t_gt)
    reg, du_reg, dv_reg = orthonormality_penalty(u, v)
    du, dv = gram_schmidt_backward(u, v, dR)
    scale = 1.0 / max(rot.size, 1)
    du = (du + lam * du_reg) * scale
    dv = (dv + lam * dv_reg) * scale
    dt = dt * scale
    breakdown = LossBreakdown(
        rotation_geodesic=_batch_mean(rot),
        translation_l2=_batch_mean(trans),
        regularizer=_batch_mean(reg),
        total=_batch_mean(rot + trans + lam * reg),
        lam=lam,
    )
    return breakdown, (du, dv, dt)


def log_tangent_frobenius_loss(Z_pred, Z_gt, pair=None):
    """``|log Z_pred - log Z_gt|_F^2`` and its gradient w.r.t. ``Z_pred``."""
    Z_pred = np.asarray(Z_pred, dtype=np.float64)
    pair = pair if pair is not None else sym_eig(Z_pred)
    diff = log_eig(Z_pred, pair=pair) - log_eig(Z_gt)
    value = np.sum(diff * diff, axis=(-2, -1))
    scale = 1.0 / max(value.size, 1)
    grad = log_eig_backward(Z_pred, 2.0 * diff * scale, pair=pair)
    return value, grad
