"""Desk-scale network: toy conv backbone -> covariance pooling -> SPD head ->
Cholesky decode -> pose, plus the ablation variants, with explicit backward.

Parameters live in a flat ``dict[str, ndarray]``. Names starting with
``bimap`` are Stiefel-constrained; everything else is Euclidean.
"""

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import codec, spd
from .errors import ConfigError, DegenerateRotation, DivergenceDetected, InvalidInput, NotPositiveDefinite, Overflow
from .linalg import cholesky_backward, cholesky_lower, sym_eig
from .losses import LossBreakdown, geodesic_rotation_loss, log_tangent_frobenius_loss, pose_loss, translation_l2
from .optim import init_stiefel

# Instrumentation: how often each code path ran. Tests use it to prove that a
# variant skips a stage entirely.
COUNTERS = Counter()


def reset_counters():
    COUNTERS.clear()


def _silu(z):
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return z * sig, sig


def _silu_grad(z, a, sig):
    return sig + a * (1.0 - sig)


def _tanh(z):
    a = np.tanh(z)
    return a, None


def _tanh_grad(z, a, aux):
    return 1.0 - a * a


# smooth activations only: finite-difference checks must not straddle kinks
ACTIVATIONS = {"silu": (_silu, _silu_grad), "tanh": (_tanh, _tanh_grad)}


class Variant(str, Enum):
    FULL6D = "Full6D"
    EULER = "EulerSPD3"
    MLP = "MlpHead"
    CHANNEL = "ChannelCov"
    LOGTANGENT = "LogTangent"


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 32
    channels: tuple = (8, 16, 32)
    kernel: int = 3
    activation: str = "silu"
    init_gain: float = 2.0
    # fixed input standardization (blob renders are mostly background)
    input_mean: float = 0.067
    input_std: float = 0.195

    def __post_init__(self):
        if self.channels[-1] < 2:
            raise ConfigError("backbone must output at least two channels")
        if self.input_size % (2 ** len(self.channels)):
            raise ConfigError("input size must be divisible by 2 per stage")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kernel % 2 != 1:
            raise ConfigError("kernel size must be odd")
        if self.out_hw ** 2 < 4:
            raise ConfigError("spatial output too small for a 4x4 SPD head")

    @property
    def out_hw(self):
        return self.input_size // (2 ** len(self.channels))

    @property
    def n_spatial(self):
        return self.out_hw ** 2


@dataclass(frozen=True)
class HeadConfig:
    """BiMap output sizes after the pooled matrix; the input size is implied."""

    dims: tuple = (12, 8, 6, 4)
    eps_reeig: float = 1e-4
    mlp_hidden: int = 256

    def __post_init__(self):
        if not self.eps_reeig > 0:
            raise ConfigError("ReEig floor must be positive")


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.FULL6D
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def head_dims(self):
        """Full descending chain ``(n_in, ..., n_out)`` for this variant."""
        n_in = self.backbone.channels[-1] if self.variant == Variant.CHANNEL else self.backbone.n_spatial
        tail = list(self.head.dims)
        tail[-1] = 3 if self.variant == Variant.EULER else 4
        chain = (n_in, *tail)
        if any(a <= b for a, b in zip(chain, chain[1:])):
            raise ConfigError(f"SPD head dims must strictly decrease, got {chain}")
        return chain


# -- parameters ---------------------------------------------------------------

def init_params(cfg, seed):
    rng = np.random.default_rng(seed)
    params = {}
    c_in = 1
    k = cfg.backbone.kernel
    for i, c_out in enumerate(cfg.backbone.channels):
        fan_in = c_in * k * k
        params[f"conv{i}.w"] = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(cfg.backbone.init_gain / fan_in)
        params[f"conv{i}.b"] = np.zeros(c_out)
        c_in = c_out
    if cfg.variant == Variant.MLP:
        n = cfg.backbone.n_spatial
        d_in = n * (n + 1) // 2
        h = cfg.head.mlp_hidden
        params["mlp.w1"] = rng.standard_normal((h, d_in)) * np.sqrt(1.0 / d_in)
        params["mlp.b1"] = np.zeros(h)
        params["mlp.w2"] = rng.standard_normal((9, h)) * np.sqrt(1.0 / h)
        params["mlp.b2"] = np.zeros(9)
    else:
        chain = cfg.head_dims()
        for layer, (n, m) in enumerate(zip(chain, chain[1:])):
            params[f"bimap{layer}"] = init_stiefel(n, m, rng)
    return params


def param_groups(params):
    """Split names into (stiefel, euclidean); every name lands in exactly one."""
    stiefel = sorted(n for n in params if n.startswith("bimap"))
    euclid = sorted(n for n in params if not n.startswith("bimap"))
    assert set(stiefel) | set(euclid) == set(params) and not set(stiefel) & set(euclid)
    return stiefel, euclid


def count_parameters(params):
    stiefel, euclid = param_groups(params)
    counts = {
        "stiefel": int(sum(params[n].size for n in stiefel)),
        "euclidean": int(sum(params[n].size for n in euclid)),
    }
    counts["total"] = counts["stiefel"] + counts["euclidean"]
    return counts


# -- backbone -----------------------------------------------------------------

def conv2d_forward(x, w, b, stride=2):
    k = w.shape[-1]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho, Wo, C * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.transpose(0, 3, 1, 2), cols


def conv2d_backward(x_shape, cols, w, dout, stride=2):
    k = w.shape[-1]
    pad = k // 2
    B, C, H, W = x_shape
    d = dout.transpose(0, 2, 3, 1)  # B, Ho, Wo, Cout
    Ho, Wo = d.shape[1:3]
    dw = np.tensordot(d, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
    db = d.sum(axis=(0, 1, 2))
    dcols = (d @ w.reshape(w.shape[0], -1)).reshape(B, Ho, Wo, C, k, k)
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + H, pad:pad + W], dw, db


def backbone_forward(cfg, params, images):
    act, _ = ACTIVATIONS[cfg.backbone.activation]
    bb = cfg.backbone
    x = ((np.asarray(images, dtype=np.float64) - bb.input_mean) / bb.input_std)[:, None]
    caches = []
    for i in range(len(cfg.backbone.channels)):
        z, cols = conv2d_forward(x, params[f"conv{i}.w"], params[f"conv{i}.b"])
        a, aux = act(z)
        caches.append((x.shape, cols, z, a, aux))
        x = a
    return x, caches


def backbone_backward(cfg, params, caches, dF, grads):
    _, act_grad = ACTIVATIONS[cfg.backbone.activation]
    d = dF
    for i in reversed(range(len(cfg.backbone.channels))):
        x_shape, cols, z, a, aux = caches[i]
        dz = d * act_grad(z, a, aux)
        d, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = conv2d_backward(x_shape, cols, params[f"conv{i}.w"], dz)
    return d


# -- SPD head -----------------------------------------------------------------

def spd_head_forward(sigma0, weights, eps):
    """Alternate BiMap and ReEig; returns the output and per-layer caches."""
    X = np.asarray(sigma0, dtype=np.float64)
    caches = []
    for W in weights:
        if X.shape[-1] != W.shape[0]:
            raise ConfigError(f"head chain mismatch: input {X.shape[-1]} vs weight {W.shape}")
        Y = spd.bimap_forward(X, W)
        pair = sym_eig(Y)
        out = spd.reeig_forward(Y, eps, pair=pair)
        caches.append((X, W, Y, pair))
        X = out
    COUNTERS["spd_head"] += 1
    return X, caches


def spd_head_backward(caches, eps, dOut):
    """Returns ``(d_sigma0, [dW per layer])`` with Euclidean weight gradients."""
    d = dOut
    dWs = [None] * len(caches)
    for layer in reversed(range(len(caches))):
        X, W, Y, pair = caches[layer]
        dY = spd.reeig_backward(Y, eps, d, pair=pair)
        d, dWs[layer] = spd.bimap_backward(X, W, dY)
    return d, dWs


def _bimap_names(params):
    return sorted((n for n in params if n.startswith("bimap")), key=lambda s: int(s[5:]))


def upper_tri_vec(S):
    iu = np.triu_indices(S.shape[-1])
    return S[..., iu[0], iu[1]]


def upper_tri_vec_backward(dv, n):
    iu = np.triu_indices(n)
    dS = np.zeros(dv.shape[:-1] + (n, n))
    dS[..., iu[0], iu[1]] = dv
    # off-diagonal entries appear once in the vector but twice in S
    off = iu[0] != iu[1]
    dS[..., iu[0][off], iu[1][off]] *= 0.5
    dS[..., iu[1][off], iu[0][off]] = dS[..., iu[0][off], iu[1][off]]
    return dS


# -- full forward ---------------------------------------------------------------

@dataclass
class Prediction:
    R: np.ndarray
    t: np.ndarray
    cache: dict


def _pool(cfg, F):
    if cfg.variant == Variant.CHANNEL:
        return spd.channel_cov_pool(F)
    return spd.cov_pool(F)


def _run(cfg, params, images, decode=True):
    # everything up to (u, v, t) / (theta, t); rotation for 6D is left to the caller
    F, bb_cache = backbone_forward(cfg, params, images)
    sigma0 = _pool(cfg, F)
    cache = {"F": F, "backbone": bb_cache, "sigma0": sigma0}
    if cfg.variant == Variant.MLP:
        x = upper_tri_vec(sigma0)
        h = np.tanh(x @ params["mlp.w1"].T + params["mlp.b1"])
        out = h @ params["mlp.w2"].T + params["mlp.b2"]
        cache.update(x=x, h=h, params6d=(out[:, 0:3], out[:, 3:6], out[:, 6:9]))
        return Prediction(None, out[:, 6:9], cache)
    weights = [params[n] for n in _bimap_names(params)]
    S_L, head_cache = spd_head_forward(sigma0, weights, cfg.head.eps_reeig)
    cache.update(head=head_cache, S_L=S_L)
    if not decode:
        return Prediction(None, None, cache)
    COUNTERS["cholesky_decode"] += 1
    L = cholesky_lower(S_L)
    cache["L"] = L
    if cfg.variant == Variant.EULER:
        theta, t = codec.decode_euler_factor(L)
        cache["theta"] = theta
        return Prediction(codec.euler_to_rotation(theta), t, cache)
    u, v, t = codec.decode_factor(L)
    cache["params6d"] = (u, v, t)
    return Prediction(None, t, cache)


def forward(cfg, params, images, sample_ids=None, decode=True):
    """Predict ``(R, t_normalized)`` for a batch of images.

    ``decode=False`` stops at the SPD output (log-tangent training path).
    Degenerate 6D parameters raise :class:`DegenerateRotation` naming the sample.
    """
    pred = _run(cfg, params, images, decode)
    if pred.R is None and "params6d" in pred.cache:
        u, v, _ = pred.cache["params6d"]
        pred.R = _gram_schmidt(u, v, sample_ids)
    return pred


def _gram_schmidt(u, v, sample_ids):
    try:
        return codec.gram_schmidt_so3(u, v)
    except DegenerateRotation as exc:
        sid = sample_ids[exc.index] if sample_ids is not None and exc.index is not None else exc.index
        raise DegenerateRotation(f"degenerate rotation parameters for sample {sid}", index=exc.index) from None


def degenerate_mask(u, v):
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    return (nu < codec.GS_EPS) | (nv < codec.GS_EPS) | (cross < codec.GS_EPS * nu * nv)


# -- loss + backward --------------------------------------------------------------

@dataclass
class StepResult:
    loss: LossBreakdown
    grads: dict
    skipped: int


def _pose_targets_spd(R_gt, t_gt):
    u, v = codec.rotation_to_6d(R_gt)
    return codec.encode_pose_to_spd((u, v, t_gt))


def loss_and_grads(cfg, params, images, R_gt, t_gt, lam=1e-3):
    """Mean loss over the batch and gradients of that mean for every parameter.

    Samples whose Gram-Schmidt input is degenerate are dropped from the batch
    and counted in ``skipped``.
    """
    R_gt = np.asarray(R_gt, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    B = len(images)
    grads = {}
    skipped = 0
    if cfg.variant == Variant.LOGTANGENT:
        pred = _run(cfg, params, images, decode=False)
        S_L = pred.cache["S_L"]
        value, dS_L = log_tangent_frobenius_loss(S_L, _pose_targets_spd(R_gt, t_gt))
        mean = float(np.mean(value))
        loss = LossBreakdown(0.0, 0.0, 0.0, mean, lam, tangent_frobenius=mean)
    else:
        pred = _run(cfg, params, images)
        cache = pred.cache
        if cfg.variant == Variant.EULER:
            theta, t = cache["theta"], pred.t
            rot, dR = geodesic_rotation_loss(pred.R, R_gt, check=False)
            trans, dt = translation_l2(t, t_gt)
            dtheta = codec.euler_to_rotation_backward(theta, dR) / B
            dt = dt / B
            total = float(np.mean(rot + trans))
            loss = LossBreakdown(float(np.mean(rot)), float(np.mean(trans)), 0.0, total, lam)
            dL = codec.decode_euler_factor_backward(cache["L"], dtheta, dt)
            dS_L = cholesky_backward(cache["L"], dL)
        else:
            u, v, t = cache["params6d"]
            keep = ~degenerate_mask(u, v)
            skipped = int(B - keep.sum())
            if not keep.any():
                raise DivergenceDetected("every sample in the batch has degenerate rotation parameters")
            du = np.zeros_like(u)
            dv = np.zeros_like(v)
            dt = np.zeros_like(t)
            loss, (du_k, dv_k, dt_k) = pose_loss(u[keep], v[keep], t[keep], R_gt[keep], t_gt[keep], lam)
            du[keep], dv[keep], dt[keep] = du_k, dv_k, dt_k
            if cfg.variant == Variant.MLP:
                dout = np.concatenate([du, dv, dt], axis=1)
                grads["mlp.w2"] = dout.T @ cache["h"]
                grads["mlp.b2"] = dout.sum(axis=0)
                dz1 = (dout @ params["mlp.w2"]) * (1.0 - cache["h"] ** 2)
                grads["mlp.w1"] = dz1.T @ cache["x"]
                grads["mlp.b1"] = dz1.sum(axis=0)
                dsigma0 = upper_tri_vec_backward(dz1 @ params["mlp.w1"], cache["sigma0"].shape[-1])
                _finish_backward(cfg, params, cache, dsigma0, grads)
                return StepResult(loss, grads, skipped)
            dL = codec.decode_factor_backward(cache["L"], du, dv, dt)
            dS_L = cholesky_backward(cache["L"], dL)
    cache = pred.cache
    dsigma0, dWs = spd_head_backward(cache["head"], cfg.head.eps_reeig, dS_L)
    for name, dW in zip(_bimap_names(params), dWs):
        grads[name] = dW
    _finish_backward(cfg, params, cache, dsigma0, grads)
    return StepResult(loss, grads, skipped)


def _finish_backward(cfg, params, cache, dsigma0, grads):
    if cfg.variant == Variant.CHANNEL:
        dF = spd.channel_cov_pool_backward(cache["F"], dsigma0)
    else:
        dF = spd.cov_pool_backward(cache["F"], dsigma0)
    backbone_backward(cfg, params, cache["backbone"], dF, grads)


def _loss_only(cfg, params, images, R_gt, t_gt, lam):
    if cfg.variant == Variant.LOGTANGENT:
        S_L = _run(cfg, params, images, decode=False).cache["S_L"]
        value, _ = log_tangent_frobenius_loss(S_L, _pose_targets_spd(R_gt, t_gt))
        mean = float(np.mean(value))
        return LossBreakdown(0.0, 0.0, 0.0, mean, lam, tangent_frobenius=mean), len(images)
    pred = _run(cfg, params, images)
    if cfg.variant == Variant.EULER:
        rot, _ = geodesic_rotation_loss(pred.R, R_gt, check=False)
        trans, _ = translation_l2(pred.t, t_gt)
        return LossBreakdown(float(np.mean(rot)), float(np.mean(trans)), 0.0, float(np.mean(rot + trans)), lam), len(images)
    u, v, t = pred.cache["params6d"]
    keep = ~degenerate_mask(u, v)
    if not keep.any():
        return None, 0
    loss, _ = pose_loss(u[keep], v[keep], t[keep], R_gt[keep], t_gt[keep], lam)
    return loss, int(keep.sum())


def evaluate_loss(cfg, params, images, R_gt, t_gt, lam=1e-3, chunk=256):
    """Forward-only loss over a whole split, averaged over the scored samples."""
    R_gt = np.asarray(R_gt, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    sums = np.zeros(5)
    count = 0
    for k in range(0, len(images), chunk):
        sl = slice(k, k + chunk)
        loss, n = _loss_only(cfg, params, images[sl], R_gt[sl], t_gt[sl], lam)
        if n:
            sums += n * np.array([loss.rotation_geodesic, loss.translation_l2, loss.regularizer, loss.total, loss.tangent_frobenius])
            count += n
    if count == 0:
        raise DivergenceDetected("no sample in the split has valid rotation parameters")
    m = sums / count
    return LossBreakdown(float(m[0]), float(m[1]), float(m[2]), float(m[3]), lam, tangent_frobenius=float(m[4]))


def total_loss(cfg, params, images, R_gt, t_gt, lam=1e-3):
    """Scalar loss only; used by the finite-difference checks."""
    return loss_and_grads(cfg, params, images, R_gt, t_gt, lam).loss.total


def _check_batch(cfg, images, R_gt, t_gt):
    images = np.asarray(images)
    size = cfg.backbone.input_size
    B = len(images)
    if images.shape != (B, size, size) or np.shape(R_gt) != (B, 3, 3) or np.shape(t_gt) != (B, 3):
        raise InvalidInput(f"batch shapes do not match {B} images of {size}x{size}")
    if not (np.all(np.isfinite(images)) and np.all(np.isfinite(R_gt)) and np.all(np.isfinite(t_gt))):
        raise InvalidInput("batch has non-finite entries")


def train_step(cfg, params, batch, stiefel_opt, adam_opt, lam=1e-3):
    """One optimizer step on ``batch = (images, R_gt, t_gt_normalized)``.

    Mutates ``params`` in place (dict entries are replaced) and returns the
    step's :class:`StepResult`.
    """
    images, R_gt, t_gt = batch
    _check_batch(cfg, images, R_gt, t_gt)
    try:
        res = loss_and_grads(cfg, params, images, R_gt, t_gt, lam)
    except (InvalidInput, NotPositiveDefinite, Overflow) as exc:
        # the batch itself is valid, so a numerical failure inside means the weights blew up
        raise DivergenceDetected(f"{type(exc).__name__} during the step: {exc}") from exc
    if not np.isfinite(res.loss.total) or not all(np.all(np.isfinite(g)) for g in res.grads.values()):
        raise DivergenceDetected(f"non-finite loss or gradient (loss={res.loss.total!r})")
    stiefel, euclid = param_groups(params)
    adam_opt.step(params, res.grads, euclid)
    stiefel_opt.step(params, res.grads, stiefel)
    return res
