#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Kernel timings call both implementations side by side. The end-to-end timing
runs the solver in two subprocesses, one with CROSSASD_DISABLE_NUMBA=1.

    python benchmarks/bench_kernels.py --segments 500
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from crossasd import kernels
from crossasd._accel import NUMBA_INSTALLED
from crossasd.identity import build_distance_matrix, centered_rows, unit_rows


def timeit(fn, repeat):
    fn()  # warm-up (includes JIT compilation for the numba variant)
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def sweep_inputs(n, k, rng):
    sd = build_distance_matrix(rng.standard_normal((n, 32))).values
    units = unit_rows(rng.standard_normal((n * k, 32)))
    tdist = kernels.cosine_distance_matrix_np(units)
    cand_idx = np.arange(n * k, dtype=np.int64)
    cand_ptr = np.arange(0, n * k + 1, k, dtype=np.int64)
    assign = cand_idx[::k].copy()
    fd = tdist[np.ix_(assign, assign)].copy()
    np.fill_diagonal(fd, 0.0)
    sdc, sx2, n_eff = centered_rows(sd, "include")
    return sd, units, tdist, cand_ptr, cand_idx, assign, fd, sdc, sx2, n_eff


def one_sweep(sweep, args):
    sd, units, tdist, ptr, idx, assign, fd, sdc, sx2, n_eff = args
    a, f = assign.copy(), fd.copy()
    sy, syy, sxy = kernels.row_stats_np(sdc, f)
    pinned = np.zeros(len(a), dtype=np.bool_)
    sweep(np.arange(len(a)), pinned, ptr, idx, tdist, a, f, sdc, sx2, sy, syy, sxy, n_eff, 1e-12)


E2E = """
import time
from crossasd import kernels
from crossasd.solver import SolverConfig, solve
from crossasd.synth import ScenarioConfig, generate_scenario
def scenario(n):
    return generate_scenario(ScenarioConfig(num_characters=8, num_segments=n, candidates_per_segment=3,
                                            audio_noise=0.3, visual_noise=0.3, seed=0))
warm = scenario(20)
solve(warm.segments, warm.tracks, warm.candidates, SolverConfig(restarts=1))
scn = scenario({n})
t = time.perf_counter()
solve(scn.segments, scn.tracks, scn.candidates, SolverConfig(restarts={restarts}))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def end_to_end(n, restarts):
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, CROSSASD_DISABLE_NUMBA=disable)
        proc = subprocess.run([sys.executable, "-c", E2E.format(n=n, restarts=restarts)], env=env,
                              capture_output=True, text=True, check=True)
        backend, secs = proc.stdout.split()
        out[backend] = float(secs)
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--segments", type=int, default=500)
    p.add_argument("--candidates", type=int, default=3)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--json", action="store_true", help="print machine-readable results")
    args = p.parse_args()
    if not NUMBA_INSTALLED:
        sys.exit("numba is not installed; install the 'fast' extra to compare backends")

    rng = np.random.default_rng(0)
    inputs = sweep_inputs(args.segments, args.candidates, rng)
    sd, units, tdist, ptr, idx, assign, fd, sdc, sx2, n_eff = inputs
    rows = {
        "cosine_distance_matrix": (lambda: kernels.cosine_distance_matrix_nb(units),
                                   lambda: kernels.cosine_distance_matrix_np(units)),
        "row_stats": (lambda: kernels.row_stats_nb(sdc, fd), lambda: kernels.row_stats_np(sdc, fd)),
        "sweep (one epoch)": (lambda: one_sweep(kernels.sweep_nb, inputs),
                              lambda: one_sweep(kernels.sweep_np, inputs)),
    }
    results = {}
    for name, (nb, npy) in rows.items():
        results[name] = {"numba": timeit(nb, args.repeat), "numpy": timeit(npy, args.repeat)}
    results["solve (end to end)"] = end_to_end(args.segments, args.restarts)

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"N={args.segments} segments, k={args.candidates} candidates")
    print(f"{'operation':<24}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, r in results.items():
        print(f"{name:<24}{r['numba']:>12.4f}{r['numpy']:>12.4f}{r['numpy'] / r['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
