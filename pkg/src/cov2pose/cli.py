"""``cov2pose`` command line: generate, train, eval, analyze, ablate.

Failures print one line ``error: <ErrorClass>: <message>`` on stderr and exit
with status 2.
"""

import argparse
import sys
from pathlib import Path

from . import _backend, metrics, train as training
from .config import OUT_ENV, load_config
from .data import generate_dataset, save_dataset
from .errors import ConfigError, Cov2PoseError
from .model import backbone_forward, init_params


def _config(args):
    return load_config(args.config, args.set or ())


def _print_epoch(epoch, val):
    print(f"epoch {epoch}: val_total={val.total:.6g}", flush=True)


def cmd_generate(args):
    run = _config(args)
    out = Path(args.out or Path(run.output_dir) / "data")
    d = run.dataset
    ds = generate_dataset(d.n_train, d.n_val, d.n_test, seed=d.seed)
    save_dataset(ds, out)
    counts = " ".join(f"{k}={len(v)}" for k, v in ds.splits.items())
    print(f"generated {counts} -> {out}")
    print(f"fingerprint {ds.fingerprint()}")
    return 0


def cmd_train(args):
    if args.resume:
        state, run, _ = training.load_checkpoint(args.resume)
        ds = training.prepare_data(run)
        out = Path(args.out or Path(args.resume).parent)
        state = training.resume(args.resume, ds, out, stop_after=args.stop_after, progress=_print_epoch)
    else:
        run = _config(args)
        ds = training.prepare_data(run)
        out = Path(args.out or Path(run.output_dir) / f"{run.variant.value}_seed{run.seed}")
        state = training.train(run, ds, out, stop_after=args.stop_after, progress=_print_epoch)
    print(f"trained {run.variant.value} for {state.epoch} epochs ({state.step} steps); "
          f"best epoch {state.best_epoch} val_total={state.best_val:.6g} -> {out}")
    return 0


def cmd_eval(args):
    state, run, stats = training.load_checkpoint(args.checkpoint)
    ds = training.prepare_data(run)
    rep = training.evaluate(run, state.best_params, ds, args.split, stats=stats)
    out = Path(args.out or Path(args.checkpoint).parent / f"metrics_{args.split}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_metrics_csv(rep, out, ds.obj.diameter)
    print(
        f"{args.split}: ADD={rep.add_mean:.6g} m ADD-S={rep.adds_mean:.6g} m acc={rep.add_accuracy:.4f} "
        f"AUC={rep.auc_add:.4f} median_rot={rep.median_rot_err_deg:.3f} deg "
        f"median_trans={rep.median_trans_err:.6g} m -> {out}"
    )
    return 0


def cmd_analyze(args):
    run = _config(args)
    ds = training.prepare_data(run)
    a = run.analysis
    if a.split not in ds.splits:
        raise ConfigError(f"unknown split {a.split!r}")
    s = ds.splits[a.split]
    cfg = run.model_config()
    params = init_params(cfg, a.seed)

    def features(images):
        return backbone_forward(cfg, params, images)[0]

    curve = metrics.covariance_pose_correlation(
        s.images, s.R, s.t, features, n_pairs=a.n_pairs, bins=a.bins, scale=ds.obj.diameter, seed=a.seed,
        eps=run.head.eps_reeig,
    )
    out = Path(args.out or Path(run.output_dir) / "analysis")
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_correlation_csv(curve, out / "correlation.csv")
    metrics.write_correlation_summary(curve, out / "correlation_summary.txt")
    print(f"rho_cov={curve.rho_cov:.4f} rho_cosine={curve.rho_cosine:.4f} rho_euclid={curve.rho_euclid:.4f} -> {out}")
    return 0


def cmd_ablate(args):
    run = _config(args)
    ds = training.prepare_data(run)
    out = Path(args.out or Path(run.output_dir) / f"ablation_seed{run.seed}")
    rows = training.ablate(run, ds, out, progress=_print_epoch)
    training.write_ablation_csv(rows, out / "ablation.csv")
    for r in rows:
        print(f"{r['variant']}: median_rot={r['median_rot_err_deg']:.3f} deg AUC={r['auc_add']:.4f}")
    print(f"-> {out / 'ablation.csv'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="cov2pose", description="Covariance-pooled SPD pose regression at desk scale.")
    p.add_argument("--version", action="version", version=f"%(prog)s (kernels: {_backend.NAME})")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set lr_adam=1e-3 --set dataset.n_train=500")
        sp.add_argument("--out", help=f"output location (default: under ${OUT_ENV} or ./cov2pose_runs)")

    sp = sub.add_parser("generate", help="write a synthetic dataset to disk")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train one variant")
    common(sp)
    sp.add_argument("--resume", metavar="CHECKPOINT", help="continue from a last.npz checkpoint")
    sp.add_argument("--stop-after", type=int, metavar="EPOCHS", help="stop once this many epochs are done")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score the best parameters of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--out", help="metrics CSV path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="covariance vs pose-distance correlation with an untrained backbone")
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("ablate", help="train and test all five variants on shared data")
    common(sp)
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (Cov2PoseError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
