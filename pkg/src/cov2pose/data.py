"""Deterministic desk-scale dataset: a rigid asymmetric point object under random
SE(3) poses, rendered as Gaussian blobs through a pinhole camera."""

import hashlib
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _backend
from .codec import TranslationStats, compute_translation_stats
from .errors import InvalidInput

IMAGE_SIZE = 32
BLOB_SIGMA = 1.2
# 16-bit quantization makes the on-disk images an exact copy of the in-memory ones
QUANT = 65535.0


class PoseSE3(NamedTuple):
    R: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class CameraModel:
    focal: float = 70.0
    cx: float = (IMAGE_SIZE - 1) / 2.0
    cy: float = (IMAGE_SIZE - 1) / 2.0
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE

    def __post_init__(self):
        if not self.focal > 0:
            raise InvalidInput("focal length must be positive")

    def project(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return np.stack(
            [self.focal * pts[:, 0] / pts[:, 2] + self.cx, self.focal * pts[:, 1] / pts[:, 2] + self.cy],
            axis=1,
        )


@dataclass(frozen=True)
class ToyObject:
    points: np.ndarray
    intensities: np.ndarray

    @property
    def diameter(self):
        d = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())


# Irregular 12-vertex polyhedron, metres, centred near the origin.
_TOY_POINTS = np.array(
    [
        [0.050, 0.000, 0.000],
        [-0.030, 0.022, 0.004],
        [0.008, 0.041, -0.012],
        [-0.012, -0.036, 0.020],
        [0.021, -0.015, 0.033],
        [-0.041, -0.006, -0.019],
        [0.014, 0.011, -0.044],
        [-0.006, 0.030, 0.029],
        [0.033, 0.027, 0.015],
        [-0.024, -0.029, -0.031],
        [0.003, -0.047, -0.004],
        [-0.019, 0.006, 0.046],
    ]
)


def toy_object():
    pts = _TOY_POINTS - _TOY_POINTS.mean(axis=0)
    inten = np.linspace(1.0, 0.3, len(pts))
    return ToyObject(pts, inten)


def rotation_angle(R):
    c = np.clip(0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    return np.arccos(c)


def _kabsch(P, Q):
    H = P.T @ Q
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def symmetry_rotations(points, tol=1e-6):
    """Rotations about the centroid mapping the point set onto itself.

    Brute force over ordered triples matched by pairwise distances.
    """
    pts = np.asarray(points, dtype=np.float64)
    pts = pts - pts.mean(axis=0)
    n = len(pts)
    D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    a, b = 0, 1
    while b < n and D[a, b] < tol:
        b += 1
    c = next(k for k in range(n) if k not in (a, b) and np.linalg.norm(np.cross(pts[b] - pts[a], pts[k] - pts[a])) > tol)
    found = []
    for i, j, k in itertools.permutations(range(n), 3):
        if abs(D[i, j] - D[a, b]) > tol or abs(D[i, k] - D[a, c]) > tol or abs(D[j, k] - D[b, c]) > tol:
            continue
        R = _kabsch(pts[[a, b, c]], pts[[i, j, k]])
        moved = pts @ R.T
        if np.all(np.min(np.sqrt(((moved[:, None] - pts[None]) ** 2).sum(-1)), axis=1) < tol):
            found.append(R)
    return found


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


DEFAULT_BOX = ((-0.03, 0.03), (-0.03, 0.03), (0.5, 0.8))


def sample_pose(rng, translation_box=DEFAULT_BOX):
    """Uniform rotation on SO(3) and uniform translation inside the box."""
    R = random_rotation(rng)
    box = np.asarray(translation_box, dtype=np.float64)
    t = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(3)
    return PoseSE3(R, t)


def render(obj, pose, cam=None):
    cam = cam or CameraModel()
    pts = obj.points @ pose.R.T + pose.t
    if np.any(pts[:, 2] <= 0):
        raise InvalidInput("object behind the camera")
    uv = cam.project(pts)
    return _backend.kernels.render_points(uv, obj.intensities, cam.height, cam.width, BLOB_SIGMA)


def projection_fits(obj, pose, cam=None, margin=1.0):
    cam = cam or CameraModel()
    uv = cam.project(obj.points @ pose.R.T + pose.t)
    return bool(
        np.all(uv[:, 0] >= margin) and np.all(uv[:, 0] <= cam.width - 1 - margin)
        and np.all(uv[:, 1] >= margin) and np.all(uv[:, 1] <= cam.height - 1 - margin)
    )


def check_box_fits(obj, translation_box=DEFAULT_BOX, cam=None, margin=1.0):
    """Worst case over the box corners with the object radius around each."""
    cam = cam or CameraModel()
    radius = float(np.linalg.norm(obj.points, axis=1).max())
    box = np.asarray(translation_box, dtype=np.float64)
    z = box[2, 0] - radius
    if z <= 0:
        return False
    for axis, half in ((0, cam.cx), (1, cam.cy)):
        reach = cam.focal * (max(abs(box[axis, 0]), abs(box[axis, 1])) + radius) / z
        if reach > half - margin:
            return False
    return True


def se3_distance(P1, P2, scale):
    """``sqrt(angle^2 + (|t1 - t2| / scale)^2)`` with the angle in radians."""
    theta = rotation_angle(np.asarray(P1.R).T @ np.asarray(P2.R))
    dt = np.linalg.norm(np.asarray(P1.t) - np.asarray(P2.t)) / scale
    return float(np.sqrt(theta ** 2 + dt ** 2))


@dataclass
class Split:
    ids: list
    images: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.ids)

    def pose(self, i):
        return PoseSE3(self.R[i], self.t[i])


@dataclass
class Dataset:
    splits: dict
    stats: TranslationStats
    obj: ToyObject
    translation_box: tuple

    @property
    def extent(self):
        box = np.asarray(self.translation_box, dtype=np.float64)
        return float(np.linalg.norm(box[:, 1] - box[:, 0]))

    def fingerprint(self):
        h = hashlib.sha256()
        for name in ("train", "val", "test"):
            s = self.splits[name]
            h.update(name.encode())
            h.update(np.ascontiguousarray(s.images).tobytes())
            h.update(np.ascontiguousarray(s.R).tobytes())
            h.update(np.ascontiguousarray(s.t).tobytes())
        return h.hexdigest()


def _sample(seed, index, obj, cam, box):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    pose = sample_pose(rng, box)
    img = np.round(render(obj, pose, cam) * QUANT) / QUANT
    return img, pose


def generate_dataset(n_train=2000, n_val=200, n_test=500, seed=0, translation_box=DEFAULT_BOX, cam=None):
    """Pure function of its arguments; sample ``i`` uses its own RNG stream."""
    obj = toy_object()
    cam = cam or CameraModel()
    if not check_box_fits(obj, translation_box, cam):
        raise InvalidInput("translation box lets the object leave the image")
    splits = {}
    offset = 0
    for name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        images = np.empty((count, cam.height, cam.width))
        Rs = np.empty((count, 3, 3))
        ts = np.empty((count, 3))
        for k in range(count):
            images[k], (Rs[k], ts[k]) = _sample(seed, offset + k, obj, cam, translation_box)
        splits[name] = Split([f"{name}_{k:06d}" for k in range(count)], images, Rs, ts)
        offset += count
    if n_train < 1:
        raise InvalidInput("need at least one training sample")
    stats = compute_translation_stats(splits["train"].t)
    return Dataset(splits, stats, obj, tuple(map(tuple, translation_box)))


# -- on-disk format ---------------------------------------------------------

def write_pgm(path, img):
    arr = np.round(np.clip(img, 0.0, 1.0) * QUANT).astype(">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise InvalidInput(f"{path}: not a binary PGM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w)
    return arr.astype(np.float64) / maxval


def save_dataset(ds, out_dir):
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    lines = ["# id r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz (metres)"]
    for name in ("train", "val", "test"):
        s = ds.splits[name]
        for k, sid in enumerate(s.ids):
            nums = list(s.R[k].ravel()) + list(s.t[k])
            lines.append(sid + " " + " ".join(f"{x:.17g}" for x in nums))
            write_pgm(out / "images" / f"{sid}.pgm", s.images[k])
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    (out / "stats.txt").write_text(ds.stats.to_text())
    box = "\n".join(f"{lo:.17g} {hi:.17g}" for lo, hi in ds.translation_box)
    (out / "box.txt").write_text(box + "\n")
    return out


def load_dataset(data_dir):
    root = Path(data_dir)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise InvalidInput(f"no manifest.txt in {root}")
    rows = {"train": [], "val": [], "test": []}
    for line in manifest.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        split = parts[0].rsplit("_", 1)[0]
        rows[split].append((parts[0], np.array([float(x) for x in parts[1:]])))
    splits = {}
    for name, recs in rows.items():
        ids = [r[0] for r in recs]
        nums = np.array([r[1] for r in recs]).reshape(len(recs), 12)
        images = np.array([read_pgm(root / "images" / f"{sid}.pgm") for sid in ids]).reshape(len(ids), IMAGE_SIZE, IMAGE_SIZE)
        splits[name] = Split(ids, images, nums[:, :9].reshape(-1, 3, 3), nums[:, 9:].copy())
    stats = TranslationStats.from_text((root / "stats.txt").read_text())
    box = tuple(tuple(float(x) for x in line.split()) for line in (root / "box.txt").read_text().split("\n") if line.strip())
    return Dataset(splits, stats, toy_object(), box)
