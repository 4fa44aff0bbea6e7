"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 200000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from waning import kernels


def inputs(n, p, seed=0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(1, 365, n).astype(float))
    e = (rng.random(n) < 0.3).astype(np.int8)
    X = rng.normal(size=(n, p))
    beta = rng.normal(scale=0.1, size=p)
    group = rng.integers(0, 4, n)
    starts = np.arange(0.0, 360.0, 30.0)
    return t, e, X, beta, group, starts, starts + 30.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    t, e, X, beta, group, starts, ends = inputs(args.n, args.p)
    eta = X @ beta
    calls = {
        "cox_partial_stats": lambda k: k.cox_partial_stats(t, e, X, beta, True),
        "breslow_increments": lambda k: k.breslow_increments(t, e, eta),
        "tabulate": lambda k: k.tabulate(t, e, group, 4, starts, ends),
    }
    backends = kernels.available_backends()
    print(f"n={args.n} p={args.p}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':20s} " + " ".join(f"{name:>12s}" for name in backends) + "      speedup")
    for label, call in calls.items():
        best = {name: min(timeit.repeat(lambda: call(mod), number=1, repeat=args.repeat)) for name, mod in backends.items()}
        row = " ".join(f"{best[name] * 1e3:10.2f}ms" for name in backends)
        speed = f"{best['python'] / best['compiled']:8.1f}x" if "compiled" in best else "        -"
        print(f"{label:20s} {row}  {speed}")


if __name__ == "__main__":
    main()
