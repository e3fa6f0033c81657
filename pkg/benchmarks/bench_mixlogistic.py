"""Compare the compiled and numpy mixture-of-logistics kernels.

    python3 benchmarks/bench_mixlogistic.py [--n 100000] [--k 4] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from vflow.kernels import backend_module
from vflow.numerics import Rng


def inputs(n, k, seed=0):
    rng = Rng(seed)
    x = 3 * rng.normal(n)
    logits, means, log_scales = rng.normal((n, k)), 2 * rng.normal((n, k)), 0.5 * rng.normal((n, k))
    gw, gld = rng.normal(n), rng.normal(n)
    return x, logits, means, log_scales, gw, gld


def bench(mod, args, repeat):
    x, logits, means, log_scales, gw, gld = args
    w, _ = mod.mix_transform(x, logits, means, log_scales)
    cases = {
        "forward": lambda: mod.mix_transform(x, logits, means, log_scales),
        "backward": lambda: mod.mix_transform_grad(x, logits, means, log_scales, gw, gld),
        "inverse": lambda: mod.mix_transform_inverse(w, logits, means, log_scales, 1e-12, 200),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    data = inputs(args.n, args.k)
    results = {"python": bench(backend_module("python"), data, args.repeat)}
    try:
        results["cython"] = bench(backend_module("cython"), data, args.repeat)
    except ImportError:
        print("compiled extension not built; numpy backend only")
    print(f"n={args.n} k={args.k}, best of {args.repeat} (ms)")
    print(f"{'kernel':<10}" + "".join(f"{b:>12}" for b in results) + ("     speedup" if len(results) > 1 else ""))
    for kernel in results["python"]:
        row = f"{kernel:<10}" + "".join(f"{results[b][kernel] * 1e3:>12.2f}" for b in results)
        if "cython" in results:
            row += f"{results['python'][kernel] / results['cython'][kernel]:>11.1f}x"
        print(row)
    # sanity: both backends compute the same thing
    if "cython" in results:
        a = backend_module("python").mix_transform(*data[:4])
        b = backend_module("cython").mix_transform(*data[:4])
        assert all(np.allclose(u, v, rtol=1e-12, atol=1e-12) for u, v in zip(a, b))


if __name__ == "__main__":
    main()
