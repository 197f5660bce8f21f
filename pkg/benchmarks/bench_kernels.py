"""Time the compiled and pure-Python candidate kernels on the same problem.

Usage::

    python benchmarks/bench_kernels.py --d 10 --n-per-env 300 --repeat 5
"""
import argparse
import time

import numpy as np

from invmatch import kernels
from invmatch.engine import enumerate_features, fit_all
from invmatch.scm import GenConfig, random_scm, sample


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--n-envs", type=int, default=5)
    p.add_argument("--n-per-env", type=int, default=300)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    spec = random_scm(args.d, list(range(1, args.n_envs + 1)), GenConfig(), rng)
    data = [sample(spec, u, args.n_per_env, rng) for u in spec.env_labels]
    feats = enumerate_features(args.d)
    print(f"d={args.d}, {len(feats)} candidates, {args.n_envs} x {args.n_per_env} rows")

    results = {}
    for backend in kernels.available_backends():
        secs, cands = best_of(lambda: fit_all(data, feats, backend=backend), args.repeat)
        results[backend] = (secs, cands)
        print(f"{backend:>9}: {secs * 1e3:9.2f} ms  ({secs / len(feats) * 1e6:.2f} us per candidate)")

    if len(results) == 2:
        (tc, cc), (tp, cp) = results["compiled"], results["python"]
        gap = max(float(np.abs(a.beta - b.beta).max()) for a, b in zip(cc, cp))
        print(f"speedup compiled / python: {tp / tc:.1f}x, max coefficient gap {gap:.1e}")
    else:
        print("compiled extension not built; only the python backend was timed")


if __name__ == "__main__":
    main()
