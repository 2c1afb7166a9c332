#!/usr/bin/env python3
"""Compare the numba-compiled kernels against the pure-numpy fallback.

Run without arguments to benchmark both execution modes in subprocesses
(the mode is fixed at import time by ETATEST_DISABLE_NUMBA) and print a
comparison table.  With ``--mode numba|numpy`` it runs one mode and prints
machine-readable timings.
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_benchmark(n_samples: int, delta: float, repeats: int) -> dict:
    import numpy as np

    import etatest as et
    from etatest import kernels
    from etatest._accel import NUMBA_ENABLED

    exp = et.make_experiment("osc-stable")
    ds = et.collect(exp.system, exp.policy, n_samples, exp.bounds, 0.01, seed=3)
    index = et.NeighborIndex(ds, cell_edge=delta)
    u_pi = exp.policy(ds.xs)
    queries = np.hstack([ds.xs, u_pi])

    timings = {}

    def measure(name, fn):
        fn()  # warm-up / JIT
        best = min(_timed(fn) for _ in range(repeats))
        timings[name] = best

    def _timed(fn):
        t0 = time.perf_counter()
        fn()
        return time.perf_counter() - t0

    measure("neighbor_csr", lambda: index.query_batch(queries, delta))
    indptr, indices = index.query_batch(queries, delta)
    measure("rate_field",
            lambda: kernels.lipschitz_batch(indptr, indices, ds.xs, ds.us,
                                            ds.ys, 1.0))
    lx, lu, _ = kernels.lipschitz_batch(indptr, indices, ds.xs, ds.us, ds.ys, 1.0)
    measure("radii",
            lambda: kernels.radii_batch(indptr, indices, ds.xs, ds.us,
                                        ds.xs, u_pi, lx, lu))
    return {"mode": "numba" if NUMBA_ENABLED else "numpy",
            "n": n_samples, "timings": timings}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", choices=["numba", "numpy"])
    parser.add_argument("--n", type=int, default=4000)
    parser.add_argument("--delta", type=float, default=0.1)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if args.mode is not None:
        os.environ["ETATEST_DISABLE_NUMBA"] = "1" if args.mode == "numpy" else "0"
        print(json.dumps(run_benchmark(args.n, args.delta, args.repeats)))
        return 0

    results = {}
    for mode in ("numba", "numpy"):
        env = dict(os.environ, ETATEST_DISABLE_NUMBA="1" if mode == "numpy" else "0")
        out = subprocess.run(
            [sys.executable, __file__, "--mode", mode, "--n", str(args.n),
             "--delta", str(args.delta), "--repeats", str(args.repeats)],
            capture_output=True, text=True, env=env, check=True)
        results[mode] = json.loads(out.stdout.strip().splitlines()[-1])

    print(f"kernel benchmark, N={args.n}, delta={args.delta} "
          f"(best of {args.repeats})")
    print(f"{'kernel':<16}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name in results["numba"]["timings"]:
        tn = results["numba"]["timings"][name]
        tp = results["numpy"]["timings"][name]
        print(f"{name:<16}{tn * 1e3:>10.1f}ms{tp * 1e3:>10.1f}ms{tp / tn:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
