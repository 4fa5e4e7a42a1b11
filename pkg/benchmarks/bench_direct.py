"""Time the compiled direct sum against the numpy fallback.

    python benchmarks/bench_direct.py [--sizes 1000 4000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from axiscatter import direct


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 2000, 4000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--kappa", type=float, default=5.0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    direct.set_threads(args.threads)
    rng = np.random.default_rng(0)
    print(f"backend at import: {direct.BACKEND}")
    print(f"{'N':>7} {'python [s]':>11} {'compiled [s]':>13} {'speed-up':>9} {'max rel diff':>13}")
    for n in args.sizes:
        x = rng.standard_normal((n, 3))
        nrm = rng.standard_normal((n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        q = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ids = np.arange(n)

        def run(impl):
            return direct.direct_sum(x, x, nrm, q, args.kappa, 1j * args.kappa, ids, ids, impl=impl)

        tp, up = _time(lambda: run("python"), args.repeat)
        if direct.BACKEND == "compiled":
            tc, uc = _time(lambda: run("compiled"), args.repeat)
            diff = np.abs(uc - up).max() / np.abs(up).max()
            print(f"{n:7d} {tp:11.4f} {tc:13.4f} {tp / tc:9.1f} {diff:13.1e}")
        else:
            print(f"{n:7d} {tp:11.4f} {'n/a':>13} {'':>9} {'':>13}")


if __name__ == "__main__":
    main()
