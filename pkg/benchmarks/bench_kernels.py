"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 200]

Prints one row per kernel and shape with the best-of-N time per call for each
backend and the speedup. Also times a full training step with either backend
switched in.
"""

import argparse
import timeit

import numpy as np

from cov2pose import _backend, model


def _spd(rng, b, n):
    a = rng.standard_normal((b, n, n))
    return a @ np.swapaxes(a, -1, -2) + n * np.eye(n)


def cases(rng):
    yield "sym_eig_batch", "8x4x4", (_spd(rng, 8, 4),)
    yield "sym_eig_batch", "8x12x12", (_spd(rng, 8, 12),)
    yield "sym_eig_batch", "8x16x16", (_spd(rng, 8, 16),)
    yield "cholesky_batch", "8x4x4", (_spd(rng, 8, 4),)
    yield "qr_reduced", "16x12", (rng.standard_normal((16, 12)),)
    yield "cov_pool_batch", "8x32x16", (rng.standard_normal((8, 32, 16)),)
    yield "cov_pool_backward_batch", "8x32x16", (rng.standard_normal((8, 32, 16)), rng.standard_normal((8, 16, 16)))
    yield "render_points", "12pts 32x32", (rng.uniform(4, 28, (12, 2)), np.linspace(1, 0.3, 12), 32, 32, 1.2)
    yield "nn_min_dist", "50x50", (rng.standard_normal((50, 3)), rng.standard_normal((50, 3)))


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def time_train_step(kernels, repeat):
    saved = _backend.kernels
    _backend.kernels = kernels
    try:
        cfg = model.ModelConfig()
        rng = np.random.default_rng(0)
        params = model.init_params(cfg, 0)
        images = rng.random((8, 32, 32)) * 0.3
        R = np.stack([np.eye(3)] * 8)
        t = rng.random((8, 3))
        return best_time(lambda: model.loss_and_grads(cfg, params, images, R, t), (), max(repeat // 10, 5))
    finally:
        _backend.kernels = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if _backend.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install --no-build-isolation -e .` first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'shape':<14}{'compiled us':>12}{'numpy us':>12}{'speedup':>9}")
    for name, shape, fargs in cases(rng):
        tc = best_time(getattr(_backend.compiled, name), fargs, args.repeat)
        tp = best_time(getattr(_backend.fallback, name), fargs, args.repeat)
        print(f"{name:<26}{shape:<14}{tc * 1e6:12.1f}{tp * 1e6:12.1f}{tp / tc:9.2f}")
    tc = time_train_step(_backend.compiled, args.repeat)
    tp = time_train_step(_backend.fallback, args.repeat)
    print(f"{'loss_and_grads':<26}{'B=8 Full6D':<14}{tc * 1e6:12.1f}{tp * 1e6:12.1f}{tp / tc:9.2f}")


if __name__ == "__main__":
    main()
