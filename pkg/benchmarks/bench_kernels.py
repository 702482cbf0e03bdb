"""Compare the compiled and pure-Python kernels on identical workloads.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends consume the same pre-generated randomness, so the benchmark also
checks that their outputs agree.
"""

import argparse
import time

import numpy as np

from bulknoise import kernels
from bulknoise.chain import ChainParams
from bulknoise.dynamics import SimConfig, run
from bulknoise.flucthydro import spde_simulate


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def chain_case(backend):
    p = ChainParams(64, pinning=0.0, flip_rate=0.5, temp_left=1.0, temp_right=8.0)
    cfg = SimConfig(dt=0.05, t_burn=0.0, t_sample=5000.0, sample_stride=10, seed=1)
    return run(p, cfg, backend=backend).h_samples


def spde_case(backend):
    res = spde_simulate(1.0, 8.0, 1.0, 32, t_final=1.0, seed=1, replicas=4, backend=backend)
    return np.array([e.value for e in res.r_variance + res.y_variance])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    try:
        kernels.get_backend("cython")
    except ImportError:
        print("compiled kernel not built; only the python backend is available")
        return 1

    print(f"{'case':<28}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'max diff':>11}")
    for name, case, steps in (("chain N=64, 10^5 steps", chain_case, 100_000),
                              ("SPDE M=32, 4 replicas", spde_case, None)):
        tc, oc = best_of(lambda: case("cython"), args.repeat)
        tp, op = best_of(lambda: case("python"), args.repeat)
        diff = float(np.max(np.abs(oc - op)))
        print(f"{name:<28}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}{diff:>11.1e}")
        if steps:
            print(f"{'':<28}{1e6 * tc / steps:>10.2f}us{1e6 * tp / steps:>10.2f}us  per step")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
