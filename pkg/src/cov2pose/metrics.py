"""Pose accuracy metrics and the covariance / pose-distance correlation study."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _backend, spd
from .data import rotation_angle
from .errors import InvalidInput

AUC_MAX_THRESHOLD = 0.10
ACCURACY_FRACTION = 0.1


def _transform(points, pose):
    R, t = pose
    return np.asarray(points, dtype=np.float64) @ np.asarray(R, dtype=np.float64).T + np.asarray(t, dtype=np.float64)


def add_metric(points, pose_hat, pose_gt):
    """Mean distance between model points under the two poses (point i to point i)."""
    a = _transform(points, pose_hat)
    b = _transform(points, pose_gt)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def adds_metric(points, pose_hat, pose_gt):
    """Like ADD but each predicted point is matched to its nearest ground-truth point."""
    a = np.ascontiguousarray(_transform(points, pose_hat))
    b = np.ascontiguousarray(_transform(points, pose_gt))
    return float(np.mean(_backend.kernels.nn_min_dist(a, b)))


def add_accuracy(errors, diameter):
    """Fraction of samples whose error is strictly below 10% of the diameter."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise InvalidInput("no errors to score")
    if not diameter > 0:
        raise InvalidInput("diameter must be positive")
    return float(np.mean(e < ACCURACY_FRACTION * diameter))


def auc_add(errors, max_threshold=AUC_MAX_THRESHOLD):
    """Exact area under the accuracy-vs-threshold curve on ``[0, max_threshold]``.

    The empirical accuracy is a step function, so the normalized integral is
    the mean of ``max(0, 1 - e / T)``.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise InvalidInput("no errors to score")
    if not max_threshold > 0:
        raise InvalidInput("threshold must be positive")
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise InvalidInput("errors must be finite and non-negative")
    # per-sample credit stays in [0, 1] so perfect predictions give exactly 1
    return float(np.mean(np.maximum(0.0, 1.0 - e / max_threshold)))


@dataclass
class MetricReport:
    add_mean: float
    adds_mean: float
    add_accuracy: float
    auc_add: float
    ids: list
    add: np.ndarray
    adds: np.ndarray
    rot_err_deg: np.ndarray
    trans_err: np.ndarray

    @property
    def median_rot_err_deg(self):
        return float(np.median(self.rot_err_deg))

    @property
    def median_trans_err(self):
        return float(np.median(self.trans_err))


def evaluate_poses(points, R_hat, t_hat, R_gt, t_gt, diameter, ids=None, max_threshold=AUC_MAX_THRESHOLD):
    """Score a batch of predicted poses (translations in metres)."""
    R_hat = np.asarray(R_hat, dtype=np.float64)
    R_gt = np.asarray(R_gt, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    n = len(R_hat)
    if not (len(R_gt) == len(t_hat) == len(t_gt) == n) or n == 0:
        raise InvalidInput("prediction and ground-truth batches must be non-empty and the same length")
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]
    add = np.array([add_metric(points, (R_hat[i], t_hat[i]), (R_gt[i], t_gt[i])) for i in range(n)])
    adds = np.array([adds_metric(points, (R_hat[i], t_hat[i]), (R_gt[i], t_gt[i])) for i in range(n)])
    rot = np.degrees(rotation_angle(np.swapaxes(R_hat, -1, -2) @ R_gt))
    trans = np.linalg.norm(t_hat - t_gt, axis=1)
    return MetricReport(
        add_mean=float(add.mean()),
        adds_mean=float(adds.mean()),
        add_accuracy=add_accuracy(add, diameter),
        auc_add=auc_add(add, max_threshold),
        ids=ids,
        add=add,
        adds=adds,
        rot_err_deg=rot,
        trans_err=trans,
    )


def _fmt(x):
    return "" if x is None else f"{x:.17g}"


METRIC_COLUMNS = ("row", "id", "add_m", "adds_m", "add_correct", "auc_add", "rot_err_deg", "trans_err_m")


def write_metrics_csv(report, path, diameter):
    """Per-sample rows then one summary row (accuracy in ``add_correct``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        thr = ACCURACY_FRACTION * diameter
        for i, sid in enumerate(report.ids):
            w.writerow([
                "sample", sid, _fmt(report.add[i]), _fmt(report.adds[i]), int(report.add[i] < thr), "",
                _fmt(report.rot_err_deg[i]), _fmt(report.trans_err[i]),
            ])
        w.writerow([
            "summary", "all", _fmt(report.add_mean), _fmt(report.adds_mean), _fmt(report.add_accuracy),
            _fmt(report.auc_add), _fmt(report.median_rot_err_deg), _fmt(report.median_trans_err),
        ])


# -- covariance vs pose distance ------------------------------------------------

@dataclass
class CorrelationCurve:
    edges: np.ndarray
    centers: np.ndarray
    cov_dist: np.ndarray
    cosine_dist: np.ndarray
    euclid_dist: np.ndarray
    counts: np.ndarray
    rho_cov: float
    rho_cosine: float
    rho_euclid: float
    pairs: dict = field(default_factory=dict, repr=False)


def _spearman(x, y):
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    rho = stats.spearmanr(x, y).statistic
    return float(rho) if np.isfinite(rho) else 0.0


def _sample_pairs(n, n_pairs, rng):
    i = rng.integers(0, n, size=n_pairs)
    j = (i + rng.integers(1, n, size=n_pairs)) % n
    return i, j


def covariance_pose_correlation(images, R, t, feature_fn, n_pairs=20000, bins=10, scale=None,
                                seed=0, eps=1e-4, chunk=256):
    """Relate feature distances of random image pairs to their SE(3) pose distance.

    ``feature_fn`` maps a ``(B, H, W)`` image batch to ``(B, C, h, w)`` feature
    maps. Pose distance is ``sqrt(angle^2 + (|dt| / scale)^2)``. Covariances go
    through one ReEig at ``eps`` so the Log-Euclidean distance is defined.
    ``bins`` is a bin count (equal width up to the largest distance) or explicit
    edges. Empty bins are dropped from the curve.
    """
    images = np.asarray(images, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n = len(images)
    if n < 2:
        raise InvalidInput("correlation analysis needs at least two samples")
    if n_pairs < 1:
        raise InvalidInput("need at least one pair")
    if scale is None:
        raise InvalidInput("pass the translation scale (e.g. the object diameter)")

    logs, flats = [], []
    for k in range(0, n, chunk):
        F = np.asarray(feature_fn(images[k:k + chunk]), dtype=np.float64)
        S = spd.reeig_forward(spd.cov_pool(F), eps)
        logs.append(spd.log_eig(S))
        flats.append(F.reshape(len(F), -1))
    logs = np.concatenate(logs)
    flats = np.concatenate(flats)

    rng = np.random.default_rng(seed)
    i, j = _sample_pairs(n, n_pairs, rng)
    angle = rotation_angle(np.swapaxes(R[i], -1, -2) @ R[j])
    pose_d = np.sqrt(angle ** 2 + (np.linalg.norm(t[i] - t[j], axis=1) / scale) ** 2)
    cov_d = np.linalg.norm((logs[i] - logs[j]).reshape(n_pairs, -1), axis=1)
    euc_d = np.linalg.norm(flats[i] - flats[j], axis=1)
    norms = np.linalg.norm(flats, axis=1)
    denom = norms[i] * norms[j]
    cos_sim = np.where(denom > 0, np.sum(flats[i] * flats[j], axis=1) / np.where(denom > 0, denom, 1.0), 1.0)
    cos_d = 1.0 - cos_sim

    if np.ndim(bins) == 0:
        hi = pose_d.max() if pose_d.max() > 0 else 1.0
        edges = np.linspace(0.0, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise InvalidInput("bin edges must be strictly increasing")
    idx = np.clip(np.searchsorted(edges, pose_d, side="right") - 1, 0, len(edges) - 2)
    inside = (pose_d >= edges[0]) & (pose_d <= edges[-1])
    counts = np.bincount(idx[inside], minlength=len(edges) - 1)

    def bin_mean(x):
        s = np.bincount(idx[inside], weights=x[inside], minlength=len(edges) - 1)
        return s[counts > 0] / counts[counts > 0]

    keep = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])
    return CorrelationCurve(
        edges=edges,
        centers=centers[keep],
        cov_dist=bin_mean(cov_d),
        cosine_dist=bin_mean(cos_d),
        euclid_dist=bin_mean(euc_d),
        counts=counts[keep],
        rho_cov=_spearman(pose_d, cov_d),
        rho_cosine=_spearman(pose_d, cos_d),
        rho_euclid=_spearman(pose_d, euc_d),
        pairs={"i": i, "j": j, "pose": pose_d, "cov": cov_d, "cosine": cos_d, "euclid": euc_d},
    )


CORRELATION_COLUMNS = ("bin_center", "mean_cov_dist", "mean_cosine_dist", "mean_euclid_dist", "count")


def write_correlation_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CORRELATION_COLUMNS)
        for row in zip(curve.centers, curve.cov_dist, curve.cosine_dist, curve.euclid_dist, curve.counts):
            w.writerow([_fmt(row[0]), _fmt(row[1]), _fmt(row[2]), _fmt(row[3]), int(row[4])])


def write_correlation_summary(curve, path):
    lines = [
        f"rho_cov = {curve.rho_cov:.17g}",
        f"rho_cosine = {curve.rho_cosine:.17g}",
        f"rho_euclid = {curve.rho_euclid:.17g}",
        f"n_pairs = {int(curve.counts.sum())}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
