"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--R 64] [--K 2000] [--d 8] [--m 1] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from modfed import kernels


def make_inputs(R, K, d, m, seed=0):
    g = np.random.default_rng(seed)
    X = g.standard_normal((K, d))
    V = np.linalg.qr(g.standard_normal((d, m)))[0].copy()
    phases = g.uniform(0, 2 * np.pi, (R, K, m))
    noise = g.standard_normal((R, K, d))
    y = g.standard_normal(K)
    beta = g.standard_normal(d)
    return X, V, phases, noise, y, beta


def cases(impl, X, V, phases, noise, y, beta):
    G = impl.privatize(X, V, phases, noise, 0.5, 0.2, 1.0)
    return {
        "privatize": lambda: impl.privatize(X, V, phases, noise, 0.5, 0.2, 1.0),
        "privatize_single": lambda: impl.privatize_single(X, V[:, 0].copy(), np.ascontiguousarray(phases[:, :, 0]),
                                                          noise, 0.5, 0.2, 1.0),
        "second_moment": lambda: impl.second_moment(G),
        "cross_moment": lambda: impl.cross_moment(G, y),
        "beta_moment": lambda: impl.beta_moment(G, beta),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--R", type=int, default=64)
    ap.add_argument("--K", type=int, default=2000)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--m", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    inputs = make_inputs(a.R, a.K, a.d, a.m)
    compiled = kernels.compiled_impl()
    if compiled is None:
        print("compiled kernels are not built; timing the fallback only")
    py_cases = cases(kernels.python_impl, *inputs)
    cy_cases = cases(compiled, *inputs) if compiled else {}
    print(f"R={a.R} K={a.K} d={a.d} m={a.m}, best of {a.repeat}")
    print(f"{'kernel':18s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, fn in py_cases.items():
        tp = min(timeit.repeat(fn, number=1, repeat=a.repeat)) * 1e3
        if name in cy_cases:
            tc = min(timeit.repeat(cy_cases[name], number=1, repeat=a.repeat)) * 1e3
            diff = float(np.max(np.abs(np.asarray(fn()) - np.asarray(cy_cases[name]()))))
            print(f"{name:18s} {tp:10.2f} {tc:10.2f} {tp / tc:7.2f}x {diff:11.1e}")
        else:
            print(f"{name:18s} {tp:10.2f} {'-':>10s}")


if __name__ == "__main__":
    main()
