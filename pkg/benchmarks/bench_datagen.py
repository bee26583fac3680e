"""Throughput of the numba and numpy rendering kernels.

    python3 benchmarks/bench_datagen.py [--n 4096] [--res 16] [--repeat 5]
"""
import argparse
import time

import numpy as np

from unified_latents import _accel, kernels

FAMILIES = {
    "blobs": lambda idx, res, nb: kernels.render_blobs(0, idx, res, 1, 8, 0.02, use_numba=nb),
    "checkerboards": lambda idx, res, nb: kernels.render_checkerboards(0, idx, res, 1, 1.0, 4.0, 4, use_numba=nb),
    "sprites": lambda idx, res, nb: kernels.render_sprites(0, idx, res, 1, 2, use_numba=nb),
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--res", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    idx = np.arange(args.n)
    backends = [False] + ([True] if _accel.HAVE_NUMBA else [])
    print(f"{'family':<14}{'backend':<8}{'seconds':>10}{'images/s':>12}")
    for name, fn in FAMILIES.items():
        for nb in backends:
            fn(idx[:8], args.res, nb)  # compile / warm up
            t = best_of(lambda: fn(idx, args.res, nb), args.repeat)
            print(f"{name:<14}{'numba' if nb else 'numpy':<8}{t:>10.4f}{args.n / t:>12.0f}")
        if len(backends) == 2:
            a, _ = fn(idx, args.res, False)
            b, _ = fn(idx, args.res, True)
            assert np.allclose(a, b, atol=1e-6), f"{name}: backends disagree"


if __name__ == "__main__":
    main()
