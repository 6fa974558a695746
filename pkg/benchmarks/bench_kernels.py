"""Compiled vs numpy Bernoulli-Gaussian posterior kernel timings.

    python3 benchmarks/bench_kernels.py [--sizes 1024,8192,65536] [--repeats 20]
"""
import argparse
import timeit

import numpy as np

from mamp import kernels
from mamp.prior import complex_normal, sample_signal, BernoulliGaussianPrior


def bench(n, repeats, mu=0.1, v=0.05):
    rng = np.random.default_rng(n)
    r = sample_signal(BernoulliGaussianPrior(mu), n, rng) + complex_normal(rng, n, v)
    out = {}
    for backend in ("python", "cython"):
        if backend == "cython" and kernels.BACKEND != "cython":
            out[backend] = float("nan")
            continue
        fn = lambda: kernels.bg_posterior(r, v, mu, backend=backend)  # noqa: E731
        fn()
        out[backend] = min(timeit.repeat(fn, number=1, repeat=repeats))
    if kernels.BACKEND == "cython":
        a = kernels.bg_posterior(r, v, mu, backend="python")
        b = kernels.bg_posterior(r, v, mu, backend="cython")
        out["max_diff"] = max(float(np.max(np.abs(a[0] - b[0]))), float(np.max(np.abs(a[1] - b[1]))))
    else:
        out["max_diff"] = float("nan")
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="1024,8192,65536,524288")
    p.add_argument("--repeats", type=int, default=20)
    ns = p.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'N':>8} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for n in (int(s) for s in ns.sizes.split(",")):
        res = bench(n, ns.repeats)
        py, cy = res["python"], res["cython"]
        print(f"{n:>8} {1e3 * py:>10.3f} {1e3 * cy:>10.3f} {py / cy:>8.2f} {res['max_diff']:>11.2e}")


if __name__ == "__main__":
    main()
