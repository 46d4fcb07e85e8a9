"""Time one planning tick and one closed-loop run on the compiled and numpy backends.

    python3 benchmarks/bench_kernels.py [--ticks 20] [--workers 1 8]
"""
import argparse
import time

import numpy as np

from gsmppi import _accel
from gsmppi.loop import run
from gsmppi.planner import noise_rng, plan, sample_noise
from gsmppi.scenarios import SimConfig, paper_scenario


def time_ticks(problem, sc, backend, workers, ticks):
    mu = np.zeros((sc.planner.N, sc.planner.m))
    noise = sample_noise(noise_rng(0, 0), sc.planner)
    plan(problem, sc.start, mu, sc.planner, noise=noise, backend=backend, workers=workers)  # warm-up / compile
    times = []
    for i in range(ticks):
        noise = sample_noise(noise_rng(0, i), sc.planner)
        t0 = time.perf_counter()
        res = plan(problem, sc.start, mu, sc.planner, noise=noise, backend=backend, workers=workers)
        times.append(time.perf_counter() - t0)
    return np.array(times), res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ticks", type=int, default=20)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 8])
    ap.add_argument("--run", action="store_true", help="also time a full 20 s closed-loop run")
    args = ap.parse_args()

    sc = paper_scenario()
    problem = sc.problem(sc.goals[0])
    print(f"numba available: {_accel.NUMBA_AVAILABLE}, max workers: {_accel.MAX_WORKERS}")
    ref = None
    rows = []
    for backend in ("numpy", "numba"):
        if backend == "numba" and not _accel.NUMBA_AVAILABLE:
            continue
        for w in args.workers if backend == "numba" else [1]:
            t, res = time_ticks(problem, sc, backend, w, args.ticks)
            if ref is None:
                ref = res.batch.costs
            diff = float(np.max(np.abs(res.batch.costs - ref) / np.maximum(1.0, np.abs(ref))))
            rows.append((backend, w, 1e3 * np.median(t), 1e3 * t.min(), diff))
    print(f"{'backend':8} {'workers':>7} {'median ms':>10} {'min ms':>8} {'max rel cost diff':>18}")
    for b, w, med, mn, d in rows:
        print(f"{b:8} {w:7d} {med:10.2f} {mn:8.2f} {d:18.2e}")
    if args.run:
        t0 = time.perf_counter()
        run(problem, sc.start, sc.planner, SimConfig(T=20.0, Ts=0.1, dt=0.05), seed=0)
        print(f"full 20 s run: {time.perf_counter() - t0:.2f} s wall-clock")


if __name__ == "__main__":
    main()
