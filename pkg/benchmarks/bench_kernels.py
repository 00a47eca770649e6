"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py --repeat 50

Each kernel is called once per backend before timing so numba's
compilation is excluded.  Outputs are also compared, since the two paths
must agree to rounding error.
"""

import argparse
import time

import numpy as np

from advrand import _kernels as K
from advrand.harness import default_ensemble
from advrand.defense import RandomizationParams


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(batch, rng):
    x = rng.random((batch, 36, 36, 1))
    k1 = rng.standard_normal((3, 3, 1, 16))
    h = rng.random((batch, 34, 34, 16))
    k2 = rng.standard_normal((3, 3, 16, 32))
    g2 = rng.standard_normal((batch, 16, 16, 32))
    img = rng.random((28, 28, 1))
    pats = default_ensemble(RandomizationParams.desk())
    tables = K.pattern_tables(28, 28, [p.resize_to for p in pats], [p.pad_left for p in pats],
                              [p.pad_top for p in pats], [p.flip for p in pats])
    gs = rng.standard_normal((len(pats), 36, 36, 1))
    return {
        "conv2d c1": lambda b: K.conv2d(x, k1, 1, backend=b),
        "conv2d c2 s2": lambda b: K.conv2d(h, k2, 2, backend=b),
        "conv2d grad input": lambda b: K.conv2d_grad_input(g2, k2, 2, h.shape, backend=b),
        "conv2d grad kernel": lambda b: K.conv2d_grad_kernel(h, g2, 2, k2.shape, backend=b),
        "pattern stack (21)": lambda b: K.pattern_stack(img, tables, 36, backend=b),
        "pattern stack grad": lambda b: K.pattern_stack_grad(gs, tables, 28, 28, backend=b),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, nargs="+", default=[1, 32])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':22s} {'batch':>5s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for batch in args.batch:
        for name, fn in cases(batch, rng).items():
            diff = float(np.max(np.abs(fn("numba") - fn("numpy"))))
            t_nb = best_of(lambda: fn("numba"), args.repeat)
            t_np = best_of(lambda: fn("numpy"), args.repeat)
            print(f"{name:22s} {batch:5d} {1e3 * t_nb:10.3f} {1e3 * t_np:10.3f} {t_np / t_nb:8.2f} {diff:9.1e}")


if __name__ == "__main__":
    main()
