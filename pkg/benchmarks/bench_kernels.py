"""Compare the compiled and numpy rollout/BPTT kernels.

Times one forward plus backward pass over a full batch (the work of one
training epoch) for a few hidden sizes, and reports the largest absolute
difference between the two backends' outputs.

    python3 benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import timeit

import numpy as np

from srnnpb import kernels
from srnnpb.model import ModelConfig, init_params
from srnnpb.numerics import RngStream


def epoch_fn(backend, params, pb, d_x, T):
    def run():
        fwd = backend.forward(params.w_x, params.w_h, params.b, params.w_out, params.b_out, pb, T)
        return fwd, backend.backward(params.w_x, params.w_h, params.w_out, pb.shape[1], *fwd[:4], d_x)

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--length", type=int, default=60)
    ap.add_argument("--hidden", type=int, nargs="+", default=[16, 32, 64])
    args = ap.parse_args()

    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("cython")
    except ImportError as exc:
        raise SystemExit(f"compiled backend unavailable: {exc}")

    print(f"batch={args.batch} T={args.length} D=4 P=2, ms per forward+backward")
    print(f"{'H':>4} {'numpy':>9} {'cython':>9} {'speedup':>8} {'max|diff|':>10}")
    for H in args.hidden:
        params = init_params(ModelConfig(4, 2, H), args.batch, RngStream(0))
        pb = RngStream(1).normal((args.batch, 2))
        d_x = RngStream(2).normal((args.batch, args.length, 4))
        f_py = epoch_fn(py, params, pb, d_x, args.length)
        f_cy = epoch_fn(cy, params, pb, d_x, args.length)
        (a_fwd, a_bwd), (b_fwd, b_bwd) = f_py(), f_cy()
        diff = max(np.abs(x - y).max() for x, y in zip(a_fwd + a_bwd, b_fwd + b_bwd))
        t_py = min(timeit.repeat(f_py, number=1, repeat=args.repeats)) * 1e3
        t_cy = min(timeit.repeat(f_cy, number=1, repeat=args.repeats)) * 1e3
        print(f"{H:>4} {t_py:>9.3f} {t_cy:>9.3f} {t_py / t_cy:>7.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
