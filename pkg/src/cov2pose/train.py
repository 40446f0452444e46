"""Training loop, checkpoints and evaluation for a :class:`RunConfig`.

A checkpoint is one ``.npz`` file: parameter arrays, the best-so-far
parameters, Adam moments and a JSON ``meta`` record (config, optimizer and
scheduler scalars, translation stats, RNG state, counters and the log rows
written so far). Loading it and continuing reproduces an uninterrupted run
bit for bit.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec, metrics
from .config import RunConfig
from .data import generate_dataset, load_dataset
from .errors import ConfigError, InvalidInput
from .model import evaluate_loss, forward, init_params, train_step
from .optim import AdamState, PlateauScheduler, StiefelOptState

CHECKPOINT_VERSION = 1
LOSS_FIELDS = ("rotation_geodesic", "translation_l2", "regularizer", "tangent_frobenius", "total")
LOG_COLUMNS = (
    ("epoch",)
    + tuple(f"train_{f}" for f in LOSS_FIELDS)
    + tuple(f"val_{f}" for f in LOSS_FIELDS)
    + ("lambda", "lr_adam", "lr_stiefel", "skipped", "is_best")
)
STEP_COLUMNS = ("step", "epoch", "loss")


@dataclass
class TrainState:
    params: dict
    adam: AdamState
    stiefel: StiefelOptState
    scheduler: PlateauScheduler
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    best_val: float = float("inf")
    best_epoch: int = -1
    best_params: dict = field(default_factory=dict)
    log_rows: list = field(default_factory=list)
    step_rows: list = field(default_factory=list)


def init_state(run):
    params = init_params(run.model_config(), run.seed)
    return TrainState(
        params=params,
        adam=AdamState(lr=run.lr_adam),
        stiefel=StiefelOptState(lr=run.lr_stiefel),
        scheduler=PlateauScheduler(factor=run.factor, patience=run.patience),
        # separate stream from the weight init so shuffling is independent of it
        rng=np.random.default_rng([run.seed, 1]),
        best_params={k: v.copy() for k, v in params.items()},
    )


def prepare_data(run):
    d = run.dataset
    if d.data_dir:
        return load_dataset(d.data_dir)
    return generate_dataset(d.n_train, d.n_val, d.n_test, seed=d.seed)


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, state, run, stats):
    arrays = {}
    for prefix, group in (("param", state.params), ("best", state.best_params),
                          ("adam_m", state.adam.m), ("adam_v", state.adam.v)):
        for name, arr in group.items():
            arrays[f"{prefix}/{name}"] = arr
    adam = state.adam.state_dict()
    del adam["m"], adam["v"]
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": run.to_dict(),
        "adam": adam,
        "stiefel": state.stiefel.state_dict(),
        "scheduler": state.scheduler.state_dict(),
        "stats": {"t_min": _floats(stats.t_min), "t_range": _floats(stats.t_range)},
        "rng": state.rng.bit_generator.state,
        "epoch": state.epoch,
        "step": state.step,
        "best_val": state.best_val,
        "best_epoch": state.best_epoch,
        "log_rows": state.log_rows,
        "step_rows": state.step_rows,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def _floats(vec):
    return [float(x) for x in vec]


def load_checkpoint(path):
    """Returns ``(TrainState, RunConfig, TranslationStats)``."""
    path = Path(path)
    if not path.is_file():
        raise InvalidInput(f"checkpoint not found: {path}")
    try:
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise InvalidInput(f"cannot read checkpoint {path}: {exc}") from None
    if "meta" not in arrays:
        raise InvalidInput(f"{path} is not a checkpoint (no meta record)")
    meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise InvalidInput(f"unsupported checkpoint version {meta.get('version')!r}")
    groups = {"param": {}, "best": {}, "adam_m": {}, "adam_v": {}}
    for key, arr in arrays.items():
        prefix, name = key.split("/", 1)
        groups[prefix][name] = arr
    run = RunConfig.from_dict(meta["config"])
    adam = AdamState()
    adam.load_state_dict(dict(meta["adam"], m=groups["adam_m"], v=groups["adam_v"]))
    stiefel = StiefelOptState()
    stiefel.load_state_dict(meta["stiefel"])
    sched = PlateauScheduler()
    sched.load_state_dict(meta["scheduler"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    state = TrainState(
        params=groups["param"],
        adam=adam,
        stiefel=stiefel,
        scheduler=sched,
        rng=rng,
        epoch=int(meta["epoch"]),
        step=int(meta["step"]),
        best_val=float(meta["best_val"]),
        best_epoch=int(meta["best_epoch"]),
        best_params=groups["best"],
        log_rows=list(meta["log_rows"]),
        step_rows=list(meta["step_rows"]),
    )
    stats = codec.TranslationStats(meta["stats"]["t_min"], meta["stats"]["t_range"])
    return state, run, stats


# -- training -------------------------------------------------------------------

def _fmt(x):
    return f"{x:.17g}"


def _write_csv(path, header, rows):
    Path(path).write_text(",".join(header) + "\n" + "".join(r + "\n" for r in rows))


def _mean_breakdown(rows):
    return np.mean(np.array(rows), axis=0) if rows else np.full(len(LOSS_FIELDS), np.nan)


def _fields(loss):
    return [getattr(loss, f) for f in LOSS_FIELDS]


def train(run, ds, out_dir, state=None, stop_after=None, progress=None):
    """Train ``run.variant`` on ``ds``, writing logs and checkpoints to ``out_dir``.

    Files: ``log.csv`` (one row per epoch), ``steps.csv`` (one row per step),
    ``last.npz`` (resume point, every epoch), ``best.npz`` (lowest val loss)
    and ``config.yaml``. ``stop_after`` ends the call after that many epochs in
    total, which is how an interrupted run is simulated.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(run.to_yaml())
    cfg = run.model_config()
    state = state or init_state(run)
    tr, va = ds.splits["train"], ds.splits["val"]
    t_train = codec.normalize_translation(tr.t, ds.stats)
    t_val = codec.normalize_translation(va.t, ds.stats)
    n = len(tr)
    last = run.epochs if stop_after is None else min(run.epochs, stop_after)
    while state.epoch < last:
        epoch = state.epoch
        perm = state.rng.permutation(n)
        rows = []
        skipped = 0
        for k in range(0, n, run.batch_size):
            idx = perm[k:k + run.batch_size]
            res = train_step(cfg, state.params, (tr.images[idx], tr.R[idx], t_train[idx]),
                             state.stiefel, state.adam, run.lam)
            state.step += 1
            rows.append(_fields(res.loss))
            skipped += res.skipped
            state.step_rows.append(f"{state.step},{epoch},{_fmt(res.loss.total)}")
        val = evaluate_loss(cfg, state.params, va.images, va.R, t_val, run.lam)
        lrs = (state.adam.lr, state.stiefel.lr)
        state.scheduler.step(val.total, [state.adam, state.stiefel])
        is_best = val.total < state.best_val
        if is_best:
            state.best_val = val.total
            state.best_epoch = epoch
            state.best_params = {k: v.copy() for k, v in state.params.items()}
        state.epoch = epoch + 1
        row = [str(epoch)] + [_fmt(x) for x in _mean_breakdown(rows)] + [_fmt(x) for x in _fields(val)]
        row += [_fmt(run.lam), _fmt(lrs[0]), _fmt(lrs[1]), str(skipped), str(int(is_best))]
        state.log_rows.append(",".join(row))
        _write_csv(out / "log.csv", LOG_COLUMNS, state.log_rows)
        _write_csv(out / "steps.csv", STEP_COLUMNS, state.step_rows)
        save_checkpoint(out / "last.npz", state, run, ds.stats)
        if is_best:
            save_checkpoint(out / "best.npz", state, run, ds.stats)
        if progress:
            progress(epoch, val)
    return state


def resume(checkpoint, ds, out_dir=None, stop_after=None, progress=None):
    state, run, stats = load_checkpoint(checkpoint)
    if not (np.array_equal(stats.t_min, ds.stats.t_min) and np.array_equal(stats.t_range, ds.stats.t_range)):
        raise ConfigError("checkpoint translation stats do not match the dataset")
    out = out_dir or Path(checkpoint).parent
    return train(run, ds, out, state=state, stop_after=stop_after, progress=progress)


# -- evaluation -----------------------------------------------------------------

def predict(run, params, images, stats, ids=None, chunk=256):
    """Rotations and metric translations for a batch of images."""
    cfg = run.model_config()
    Rs, ts = [], []
    for k in range(0, len(images), chunk):
        sub = None if ids is None else ids[k:k + chunk]
        pred = forward(cfg, params, images[k:k + chunk], sample_ids=sub)
        Rs.append(pred.R)
        ts.append(codec.denormalize_translation(pred.t, stats))
    return np.concatenate(Rs), np.concatenate(ts)


def evaluate(run, params, ds, split="test", stats=None):
    if split not in ds.splits:
        raise InvalidInput(f"unknown split {split!r}")
    s = ds.splits[split]
    R, t = predict(run, params, s.images, stats or ds.stats, ids=s.ids)
    return metrics.evaluate_poses(ds.obj.points, R, t, s.R, s.t, ds.obj.diameter, ids=s.ids)


# -- ablation -------------------------------------------------------------------

ABLATION_COLUMNS = (
    "variant", "reference", "dataset_hash", "seed", "best_epoch", "add_mean_m", "adds_mean_m",
    "add_accuracy", "auc_add", "median_rot_err_deg", "median_trans_err_m", "median_trans_err_frac",
)


def ablate(run, ds, out_dir, variants=None, progress=None):
    """Train and test every variant on the same data and seed; one row each."""
    from .model import Variant

    out = Path(out_dir)
    digest = ds.fingerprint()
    rows = []
    for variant in variants or list(Variant):
        vrun = run.replace(variant=variant)
        state = train(vrun, ds, out / variant.value, progress=progress)
        rep = evaluate(vrun, state.best_params, ds, "test")
        rows.append({
            "variant": variant.value,
            "reference": int(variant == Variant.FULL6D),
            "dataset_hash": digest,
            "seed": run.seed,
            "best_epoch": state.best_epoch,
            "add_mean_m": rep.add_mean,
            "adds_mean_m": rep.adds_mean,
            "add_accuracy": rep.add_accuracy,
            "auc_add": rep.auc_add,
            "median_rot_err_deg": rep.median_rot_err_deg,
            "median_trans_err_m": rep.median_trans_err,
            "median_trans_err_frac": rep.median_trans_err / ds.extent,
        })
    return rows


def write_ablation_csv(rows, path):
    lines = []
    for r in rows:
        lines.append(",".join(_fmt(r[c]) if isinstance(r[c], float) else str(r[c]) for c in ABLATION_COLUMNS))
    _write_csv(path, ABLATION_COLUMNS, lines)
