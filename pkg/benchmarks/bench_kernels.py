"""Compare compiled and numpy kernels on EER sweeps and batched trial scoring.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from srctrace import _pykernels

try:
    from srctrace import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def sweep_case(n, rng):
    s = rng.normal(size=n)
    order = np.argsort(-s, kind="stable")
    t = (rng.random(n) < 0.2).astype(np.uint8)
    return "operating_points", (np.ascontiguousarray(s[order]), t), n


def cosine_case(n, dim, rng):
    a = rng.standard_normal((2000, dim))
    b = rng.standard_normal((5, dim))
    return "paired_cosine", (a, rng.integers(0, 2000, n), b, rng.integers(0, 5, n)), f"{n}x{dim}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = [sweep_case(n, rng) for n in (10_000, 100_000, 1_000_000)]
    cases += [cosine_case(n, d, rng) for n, d in ((100_000, 64), (100_000, 160), (500_000, 160))]
    impls = [("python", _pykernels)] + ([("compiled", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<18}{'size':>12}" + "".join(f"{name:>14}" for name, _ in impls) + f"{'speedup':>10}")
    for fn, inputs, size in cases:
        times = []
        for _, mod in impls:
            f = getattr(mod, fn)
            times.append(min(timeit.repeat(lambda: f(*inputs), number=1, repeat=args.repeat)))
        speed = f"{times[0] / times[1]:.1f}x" if len(times) == 2 else "-"
        print(f"{fn:<18}{size:>12}" + "".join(f"{1e3 * t:>12.2f}ms" for t in times) + f"{speed:>10}")


if __name__ == "__main__":
    main()
