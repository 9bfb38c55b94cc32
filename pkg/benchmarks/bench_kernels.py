"""Compare the numba kernels with the pure-numpy fallback.

Part 1 times each kernel directly (both tables live in ``shiftlab._kernels``)
and checks the two backends return the same answer. Part 2 times an
end-to-end workload in fresh interpreters, with and without
``SHIFTLAB_DISABLE_NUMBA``, so import-time selection is exercised too.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--skip-e2e]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from shiftlab import _kernels


def _best_time(fn, args, repeat: int) -> float:
    fn(*args)  # warm-up (includes JIT compilation for numba)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _flow_network(rng, n_groups: int, n_loc: int):
    sizes = rng.integers(1, 4, size=n_groups)
    cap = np.full(n_loc, int(np.ceil(1.3 * sizes.sum() / n_loc)))
    source, sink = 0, n_groups + n_loc + 1
    tail, head, capa, cost = [], [], [], []
    for g in range(n_groups):
        tail.append(source), head.append(1 + g), capa.append(sizes[g]), cost.append(0.0)
        for j in range(n_loc):
            tail.append(1 + g), head.append(1 + n_groups + j), capa.append(sizes[g])
            cost.append(-rng.normal())
    for j in range(n_loc):
        tail.append(1 + n_groups + j), head.append(sink), capa.append(cap[j]), cost.append(0.0)
    args = (
        n_groups + n_loc + 2,
        np.array(tail, dtype=np.int64),
        np.array(head, dtype=np.int64),
        np.array(capa, dtype=np.int64),
        np.array(cost, dtype=np.float64),
        source,
        sink,
        int(sizes.sum()),
    )
    return args


def kernel_cases(rng):
    flat = rng.integers(0, 64, size=2_000_000).astype(np.int64)
    weights = rng.random(flat.size)
    g, L = 8, 5
    w = rng.normal(size=(g, L))
    size = rng.integers(1, 3, size=g).astype(np.int64)
    cap = np.full(L, 4, dtype=np.int64)
    return {
        "bincount_flat (2e6 codes)": (flat, 64),
        "bincount_weighted (2e6 codes)": (flat, weights, 64),
        "min_cost_flow (60 groups x 12 locations)": _flow_network(rng, 60, 12),
        "enumerate_assignments (8 groups x 5 locations)": (w, size, cap, 1e-9),
    }


KERNEL_NAMES = {
    "bincount_flat": "bincount_flat (2e6 codes)",
    "bincount_weighted": "bincount_weighted (2e6 codes)",
    "min_cost_flow": "min_cost_flow (60 groups x 12 locations)",
    "enumerate_assignments": "enumerate_assignments (8 groups x 5 locations)",
}


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-12, atol=1e-12)


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(2024)
    cases = kernel_cases(rng)
    print(f"{'kernel':<50} {'numpy [ms]':>11} {'numba [ms]':>11} {'speed-up':>9}  agree")
    for key, label in KERNEL_NAMES.items():
        args = cases[label]
        t_np = _best_time(_kernels.NUMPY_KERNELS[key], args, repeat)
        if key in _kernels.NUMBA_KERNELS:
            nb = _kernels.NUMBA_KERNELS[key]
            t_nb = _best_time(nb, args, repeat)
            agree = _same(_kernels.NUMPY_KERNELS[key](*args), nb(*args))
            print(f"{label:<50} {1e3 * t_np:>11.3f} {1e3 * t_nb:>11.3f} {t_np / t_nb:>8.1f}x  {agree}")
        else:
            print(f"{label:<50} {1e3 * t_np:>11.3f} {'n/a':>11} {'':>9}  -")


E2E_SNIPPET = """
import time
import numpy as np
from shiftlab import BACKEND
from shiftlab.assignment import AssignmentInstance, solve_assignment
from shiftlab.fixtures import d0
from shiftlab.mc_lab import ExperimentConfig, run_theorem1_experiment
from shiftlab.shifts import ShiftSpec

t0 = time.perf_counter()
rng = np.random.default_rng(7)
for _ in range(20):
    w = rng.normal(size=(40, 6))
    groups = rng.integers(0, 25, size=40)
    solve_assignment(AssignmentInstance(w, np.full(6, 9), tuple(groups)))
t1 = time.perf_counter()
cfg = ExperimentConfig(d0(), ShiftSpec("symmetric_dirichlet", 0.1), ShiftSpec("symmetric_dirichlet", 0.05), n_reps=20000, seed=0)
run_theorem1_experiment(cfg)
t2 = time.perf_counter()
print(f"{BACKEND} {t1 - t0:.3f} {t2 - t1:.3f}")
"""


def bench_end_to_end() -> None:
    print()
    print(f"{'backend':<8} {'20 assignments [s]':>19} {'theorem-1 MC, 20k reps [s]':>27}")
    for disable in ("", "1"):
        env = dict(os.environ, SHIFTLAB_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, "-c", E2E_SNIPPET], env=env, capture_output=True, text=True, check=True
        ).stdout.split()
        backend, t_assign, t_mc = out[0], float(out[1]), float(out[2])
        print(f"{backend:<8} {t_assign:>19.3f} {t_mc:>27.3f}")
    print("(end-to-end timings include numba's JIT compilation on first use)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions per kernel (best is reported)")
    parser.add_argument("--skip-e2e", action="store_true", help="only time the kernels")
    args = parser.parse_args(argv)
    print(f"active backend in this process: {_kernels.BACKEND}")
    bench_kernels(args.repeat)
    if not args.skip_e2e:
        bench_end_to_end()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
