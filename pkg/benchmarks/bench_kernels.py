"""Time the compiled and pure-Python dual coordinate descent kernels.

    python3 benchmarks/bench_kernels.py [--sizes 100x20,210x100] [--repeat 3]

Both kernels solve the same problems; the report lists the best wall time
of each, the speedup, and the largest weight difference between them.
"""

import argparse
import time

import numpy as np

from bdefs import _backend


def problem(n, d, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = np.where(x[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    xa = np.ascontiguousarray(np.hstack([x, np.ones((n, 1))]))
    order = rng.permutation(n).astype(np.int64)
    return xa, y, order


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="60x5,210x20,210x100")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--max-epochs", type=int, default=200)
    args = ap.parse_args(argv)

    try:
        fast = _backend.kernels("cython")
    except ImportError:
        fast = None
        print("compiled extension not built; timing the Python kernel only")
    slow = _backend.kernels("python")

    print(f"{'n x d':>10} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |dw|':>10}")
    for spec in args.sizes.split(","):
        n, d = (int(v) for v in spec.lower().split("x"))
        xa, y, order = problem(n, d, 0)
        run = lambda k: k(xa, y, 1.0, 1e-4, args.max_epochs, order)
        tp, rp = best_time(lambda: run(slow), args.repeat)
        if fast is None:
            print(f"{spec:>10} {tp:10.4f} {'-':>10} {'-':>8} {'-':>10}")
            continue
        tc, rc = best_time(lambda: run(fast), args.repeat)
        dw = float(np.max(np.abs(np.asarray(rp[0]) - np.asarray(rc[0]))))
        print(f"{spec:>10} {tp:10.4f} {tc:10.5f} {tp / tc:8.1f} {dw:10.2e}")


if __name__ == "__main__":
    main()
