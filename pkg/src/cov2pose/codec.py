"""Structured Cholesky pose codec and the rotation constructions.

Pose parameters are ``u, v`` (6D rotation) and ``t`` (normalized translation),
each of shape ``(..., 3)``. The 4x4 factor stores them as::

    [[e^tx, 0,    0,    0             ],
     [u1,   e^ty, 0,    0             ],
     [u2,   v1,   e^tz, 0             ],
     [u3,   v2,   v3,   e^-(tx+ty+tz) ]]
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateRotation, InvalidInput, Overflow
from .linalg import cholesky_lower

EXP_GUARD = 50.0
GS_EPS = 1e-8
RANGE_FLOOR = 1e-6

# (row, col) positions of u and v inside the 4x4 factor
U_SLOTS = ((1, 0), (2, 0), (3, 0))
V_SLOTS = ((2, 1), (3, 1), (3, 2))


class PoseParams6D(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class TranslationStats:
    t_min: np.ndarray
    t_range: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t_min", np.asarray(self.t_min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "t_range", np.asarray(self.t_range, dtype=np.float64).reshape(3))
        if np.any(self.t_range <= 0):
            raise InvalidInput("translation range must be positive on every axis")

    def to_text(self):
        lines = []
        for name, vec in (("t_min", self.t_min), ("t_range", self.t_range)):
            for axis, val in zip("xyz", vec):
                lines.append(f"{name}_{axis} = {val:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            if "=" in line:
                key, val = line.split("=", 1)
                vals[key.strip()] = float(val)
        try:
            return cls(
                [vals[f"t_min_{a}"] for a in "xyz"],
                [vals[f"t_range_{a}"] for a in "xyz"],
            )
        except KeyError as exc:
            raise InvalidInput(f"translation stats missing key {exc}") from None


def _params(p):
    u, v, t = (np.asarray(x, dtype=np.float64) for x in p)
    if u.shape[-1:] != (3,) or u.shape != v.shape or u.shape != t.shape:
        raise InvalidInput("pose parameters must be three arrays of shape (..., 3)")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(t))):
        raise InvalidInput("pose parameters must be finite")
    return u, v, t


def build_factor(p):
    u, v, t = _params(p)
    if np.any(np.abs(t) > EXP_GUARD):
        raise Overflow(f"|t| exceeds {EXP_GUARD}; exponential diagonal would overflow")
    L = np.zeros(u.shape[:-1] + (4, 4))
    L[..., 0, 0] = np.exp(t[..., 0])
    L[..., 1, 1] = np.exp(t[..., 1])
    L[..., 2, 2] = np.exp(t[..., 2])
    L[..., 3, 3] = np.exp(-(t[..., 0] + t[..., 1] + t[..., 2]))
    for k, (i, j) in enumerate(U_SLOTS):
        L[..., i, j] = u[..., k]
    for k, (i, j) in enumerate(V_SLOTS):
        L[..., i, j] = v[..., k]
    return L


def encode_pose_to_spd(p):
    L = build_factor(p)
    return L @ np.swapaxes(L, -1, -2)


def decode_factor(L):
    """Read ``(u, v, t)`` out of a lower-triangular 4x4 factor."""
    L = np.asarray(L)
    u = np.stack([L[..., i, j] for i, j in U_SLOTS], axis=-1)
    v = np.stack([L[..., i, j] for i, j in V_SLOTS], axis=-1)
    t = np.log(np.stack([L[..., k, k] for k in range(3)], axis=-1))
    return PoseParams6D(u, v, t)


def decode_factor_backward(L, du, dv, dt):
    dL = np.zeros_like(L)
    for k, (i, j) in enumerate(U_SLOTS):
        dL[..., i, j] = du[..., k]
    for k, (i, j) in enumerate(V_SLOTS):
        dL[..., i, j] = dv[..., k]
    for k in range(3):
        dL[..., k, k] = dt[..., k] / L[..., k, k]
    return dL


def decode_spd_to_params(S):
    return decode_factor(cholesky_lower(S))


def _gs_check(u, v):
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    bad = (nu < GS_EPS) | (cross < GS_EPS * nu * nv) | (nv < GS_EPS)
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise DegenerateRotation("Gram-Schmidt input is degenerate (zero or collinear vectors)", index=idx)


def gram_schmidt_so3(u, v):
    """Rotation with columns ``r1 = u/|u|``, ``r2`` from ``v`` orthogonalized, ``r3 = r1 x r2``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _gs_check(u, v)
    r1 = u / np.linalg.norm(u, axis=-1, keepdims=True)
    w = v - np.sum(r1 * v, axis=-1, keepdims=True) * r1
    r2 = w / np.linalg.norm(w, axis=-1, keepdims=True)
    r3 = np.cross(r1, r2)
    return np.stack([r1, r2, r3], axis=-1)


def gram_schmidt_backward(u, v, dR):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    r1 = u / nu
    proj = np.sum(r1 * v, axis=-1, keepdims=True)
    w = v - proj * r1
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    r2 = w / nw
    g1, g2, g3 = dR[..., :, 0], dR[..., :, 1], dR[..., :, 2]
    dr1 = g1 + np.cross(r2, g3)
    dr2 = g2 + np.cross(g3, r1)
    dw = (dr2 - r2 * np.sum(r2 * dr2, axis=-1, keepdims=True)) / nw
    r1_dw = np.sum(r1 * dw, axis=-1, keepdims=True)
    dv = dw - r1 * r1_dw
    dr1 = dr1 - v * r1_dw - proj * dw
    du = (dr1 - r1 * np.sum(r1 * dr1, axis=-1, keepdims=True)) / nu
    return du, dv


def rotation_to_6d(R):
    """First two columns of ``R``: the ``(u, v)`` that rebuild it exactly."""
    R = np.asarray(R, dtype=np.float64)
    return R[..., :, 0].copy(), R[..., :, 1].copy()


def normalize_translation(t_raw, stats):
    return (np.asarray(t_raw, dtype=np.float64) - stats.t_min) / stats.t_range


def denormalize_translation(t_norm, stats):
    return np.asarray(t_norm, dtype=np.float64) * stats.t_range + stats.t_min


def compute_translation_stats(translations, lower=1.0, upper=99.0):
    """Robust per-axis minima and ranges from the 1st/99th percentiles."""
    t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
    if t.shape[0] == 0:
        raise InvalidInput("need at least one translation")
    lo = np.percentile(t, lower, axis=0)
    hi = np.percentile(t, upper, axis=0)
    return TranslationStats(lo, np.maximum(hi - lo, RANGE_FLOOR))


# Euler variant: 3x3 factor with diag exp(theta) and the translation below it.

EULER_T_SLOTS = ((1, 0), (2, 0), (2, 1))


def build_factor_euler(theta, t):
    theta = np.asarray(theta, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(np.abs(theta) > EXP_GUARD):
        raise Overflow(f"|theta| exceeds {EXP_GUARD}")
    L = np.zeros(theta.shape[:-1] + (3, 3))
    for k in range(3):
        L[..., k, k] = np.exp(theta[..., k])
    for k, (i, j) in enumerate(EULER_T_SLOTS):
        L[..., i, j] = t[..., k]
    return L


def decode_euler_factor(L):
    theta = np.log(np.stack([L[..., k, k] for k in range(3)], axis=-1))
    t = np.stack([L[..., i, j] for i, j in EULER_T_SLOTS], axis=-1)
    return theta, t


def decode_euler_factor_backward(L, dtheta, dt):
    dL = np.zeros_like(L)
    for k in range(3):
        dL[..., k, k] = dtheta[..., k] / L[..., k, k]
    for k, (i, j) in enumerate(EULER_T_SLOTS):
        dL[..., i, j] = dt[..., k]
    return dL


def decode_euler(S):
    return decode_euler_factor(cholesky_lower(S))


def _axis_rotations(theta):
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    one, zero = np.ones_like(c[..., 0]), np.zeros_like(c[..., 0])

    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    Rx = mat([[one, zero, zero], [zero, cx, -sx], [zero, sx, cx]])
    Ry = mat([[cy, zero, sy], [zero, one, zero], [-sy, zero, cy]])
    Rz = mat([[cz, -sz, zero], [sz, cz, zero], [zero, zero, one]])
    dRx = mat([[zero, zero, zero], [zero, -sx, -cx], [zero, cx, -sx]])
    dRy = mat([[-sy, zero, cy], [zero, zero, zero], [-cy, zero, -sy]])
    dRz = mat([[-sz, -cz, zero], [cz, -sz, zero], [zero, zero, zero]])
    return (Rx, Ry, Rz), (dRx, dRy, dRz)


def euler_to_rotation(theta):
    """``R = Rz(theta_z) Ry(theta_y) Rx(theta_x)``."""
    (Rx, Ry, Rz), _ = _axis_rotations(theta)
    return Rz @ Ry @ Rx


def euler_to_rotation_backward(theta, dR):
    (Rx, Ry, Rz), (dRx, dRy, dRz) = _axis_rotations(theta)
    parts = (Rz @ Ry @ dRx, Rz @ dRy @ Rx, dRz @ Ry @ Rx)
    return np.stack([np.sum(dR * p, axis=(-2, -1)) for p in parts], axis=-1)
