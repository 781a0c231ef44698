"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--batch B]

Prints one line per kernel with the best-of-N wall time for each backend and
the speedup, then one full training step on the toy backbone.
"""

import argparse
import timeit

import numpy as np

from pairssl import kernels
from pairssl.augment import gaussian_kernel3
from pairssl.config import resolve_config
from pairssl.rng import make_streams
from pairssl.trainer import build_data, init_state, train_step


def kernel_cases(batch: int, rng: np.random.Generator):
    x = rng.random((batch, 8, 32, 32))
    cols = kernels.im2col(x, 3, 3, 1, 1)
    pooled, arg = kernels.maxpool2x2_forward(x)
    imgs = rng.random((batch, 3, 32, 32))
    mats = np.tile(np.array([[0.9, 0.1, 1.0], [-0.1, 0.9, 2.0]]), (batch, 1, 1))
    weights = gaussian_kernel3(1.5)
    return {
        "im2col": lambda: kernels.im2col(x, 3, 3, 1, 1),
        "col2im": lambda: kernels.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool2x2_forward": lambda: kernels.maxpool2x2_forward(x),
        "maxpool2x2_backward": lambda: kernels.maxpool2x2_backward(pooled, arg, x.shape),
        "warp_bilinear": lambda: kernels.warp_bilinear(imgs, mats, True),
        "filter3x3_reflect": lambda: kernels.filter3x3_reflect(imgs, weights),
    }


def step_case():
    cfg = resolve_config("toy")
    data = build_data(cfg)
    idx = np.arange(cfg.batch_size)
    x, y = data.labeled.images(idx % len(data.labeled)), data.labeled.labels(idx % len(data.labeled))
    u = data.unlabeled.images(idx)
    state = init_state(cfg)
    return lambda: train_step(state, x, y, u, cfg, make_streams(0))


def best_time(fn, repeat: int) -> float:
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is timed")
    cases = kernel_cases(args.batch, np.random.default_rng(0))
    cases["train_step (toy preset)"] = step_case()

    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    try:
        for name, fn in cases.items():
            times = []
            for b in backends:
                kernels.use_backend(b)
                times.append(best_time(fn, args.repeat))
            line = f"{name:28s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
            if len(times) == 2:
                line += f"{times[1] / times[0]:11.1f}x"
            print(line)
    finally:
        kernels.use_backend(backends[0])


if __name__ == "__main__":
    main()
