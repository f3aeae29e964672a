"""Time the compiled convolution/pooling kernels against the numpy fallback.

Shapes are the per-layer tensors of DSTCAE-UpSampling on 8 x 64 x 64 windows.

    python3 benchmarks/bench_kernels.py [--batch 4] [--repeat 3] [--threads 1]
"""

import argparse
import time

import numpy as np

from stcae import _npkernels
from stcae.architectures import build_model, init_params, model_backward, model_forward
from stcae import _backend
from stcae.training import mse_loss

try:
    from stcae import _ckernels
except ImportError:
    _ckernels = None

# (T, H, Ci, Co) of the five convolutions
LAYERS = [(8, 64, 1, 16), (4, 32, 16, 8), (2, 16, 8, 8), (4, 32, 8, 16), (8, 64, 16, 1)]
ONE, PAD = (1, 1, 1), (2, 1, 1)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_layers(mod, batch, repeat, threads, rng):
    rows = []
    for T, H, ci, co in LAYERS:
        x = rng.standard_normal((batch, T, H, H, ci), dtype=np.float32)
        gy = rng.standard_normal((batch, T, H, H, co), dtype=np.float32)
        w = rng.standard_normal((co, ci, 5, 3, 3), dtype=np.float32)
        ext = (T, H, H)
        rows.append((
            f"conv {T}x{H}x{H} {ci}->{co}",
            best_of(lambda: mod.conv3d_fwd(x, w, ONE, PAD, ext, threads), repeat),
            best_of(lambda: mod.conv3d_bwd_input(gy, w, ONE, PAD, ext, threads), repeat),
            best_of(lambda: mod.conv3d_bwd_weight(x, gy, (5, 3, 3), ONE, PAD, threads), repeat),
        ))
    x = rng.standard_normal((batch, 8, 64, 64, 16), dtype=np.float32)
    y, idx = mod.maxpool3d_fwd(x, (2, 2, 2), (4, 32, 32))
    rows.append(("maxpool 8x64x64x16",
                 best_of(lambda: mod.maxpool3d_fwd(x, (2, 2, 2), (4, 32, 32)), repeat),
                 best_of(lambda: mod.maxpool3d_bwd(y, idx, x.shape[1:]), repeat), 0.0))
    return rows


def bench_step(mod, batch, repeat):
    """One forward + backward pass of the full model."""
    _backend.kernels = mod
    spec = build_model("dstcae-upsampling")
    params = init_params(spec, 0)
    x = np.random.default_rng(1).uniform(-0.5, 0.5, (batch,) + spec.input_shape).astype(np.float32)

    def step():
        out, caches = model_forward(spec, params, x, training=True, rng=0)
        _, g = mse_loss(x, out)
        model_backward(spec, params, caches, g)

    return best_of(step, repeat)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    _backend.set_threads(args.threads)

    mods = [("numpy", _npkernels)] + ([("cython", _ckernels)] if _ckernels else [])
    results = {name: bench_layers(mod, args.batch, args.repeat, args.threads, np.random.default_rng(0))
               for name, mod in mods}
    print(f"batch {args.batch}, threads {args.threads}, best of {args.repeat} (seconds)")
    print(f"{'kernel':<26}{'backend':<8}{'forward':>10}{'bwd-input':>11}{'bwd-weight':>12}")
    for k, row in enumerate(results["numpy"]):
        for name, _ in mods:
            label, f, bi, bw = results[name][k]
            print(f"{label:<26}{name:<8}{f:>10.4f}{bi:>11.4f}{bw:>12.4f}")
    steps = {name: bench_step(mod, args.batch, args.repeat) for name, mod in mods}
    print()
    for name, t in steps.items():
        print(f"full forward+backward, {name:<7}: {t:.3f} s ({t / args.batch:.3f} s per window)")
    if "cython" in steps:
        print(f"speed-up: {steps['numpy'] / steps['cython']:.1f}x")


if __name__ == "__main__":
    main()
