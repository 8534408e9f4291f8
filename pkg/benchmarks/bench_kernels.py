"""Compiled versus pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the FIFO departure recursion and the GAE scan on both backends, checks
they agree bit for bit, and times a simulated episode under each backend.
"""
import argparse
import time

import numpy as np

from madispatch import _kernels_py, kernels
from madispatch.topology import WorkloadSpec, data_path, load_topology
from madispatch.baselines import cwrr_probabilities
from madispatch.sim import Simulator


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def episode(impl, steps=20):
    saved = kernels._impl
    kernels._impl = impl
    try:
        top = load_topology(data_path("desk_sa8.json"))
        sim = Simulator(top)
        sim.reset_episode(WorkloadSpec.from_load(top, 0.8), 0)
        p = cwrr_probabilities(top)
        return sum(float(sim.run_step(p).tau_sum.sum()) for _ in range(steps))
    finally:
        kernels._impl = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=200_000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    arr = np.sort(rng.uniform(0, args.size / 8000.0, args.size))
    svc = rng.exponential(1 / 9000.0, args.size)
    r = rng.standard_normal(args.size)
    v = rng.standard_normal(args.size)
    nv = rng.standard_normal(args.size)
    ends = np.zeros(args.size, np.uint8)
    ends[59::60] = 1

    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the Python fallback is available")
        return
    compiled = kernels._impl
    rows = []
    for name, call in [
        ("fifo_departures", lambda impl: kernels.fifo_departures(arr, svc, 0.0, impl=impl)),
        ("gae", lambda impl: kernels.gae(r, v, nv, ends, 0.9, 0.95, impl=impl)),
        ("episode (20 steps, 0.8 load)", lambda impl: episode(impl)),
    ]:
        tc, oc = best_of(lambda: call(compiled), args.repeat)
        tp, op = best_of(lambda: call(_kernels_py), max(1, args.repeat // 2))
        same = np.array_equal(np.asarray(oc), np.asarray(op))
        rows.append((name, tc, tp, same))
    print(f"{'kernel':32} {'cython s':>10} {'python s':>10} {'speedup':>8} identical")
    for name, tc, tp, same in rows:
        print(f"{name:32} {tc:10.4f} {tp:10.4f} {tp / tc:8.1f} {same}")


if __name__ == "__main__":
    main()
