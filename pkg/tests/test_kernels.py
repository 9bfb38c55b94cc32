from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from shiftlab import _kernels

needs_numba = pytest.mark.skipif(not _kernels.NUMBA_KERNELS, reason="numba backend not available")


def _flow_instance(rng, g, L):
    sizes = rng.integers(1, 4, size=g)
    cap = rng.integers(1, 6, size=L)
    tail, head, capa, cost = [], [], [], []
    for i in range(g):
        tail.append(0), head.append(1 + i), capa.append(sizes[i]), cost.append(0.0)
        for j in range(L):
            tail.append(1 + i), head.append(1 + g + j), capa.append(sizes[i]), cost.append(float(rng.normal()))
    for j in range(L):
        tail.append(1 + g + j), head.append(g + L + 1), capa.append(cap[j]), cost.append(0.0)
    arrays = [np.array(tail, dtype=np.int64), np.array(head, dtype=np.int64),
              np.array(capa, dtype=np.int64), np.array(cost)]
    return (g + L + 2, *arrays, 0, g + L + 1, int(sizes.sum()))


def test_numpy_bincounts_match_numpy_reference(rng):
    flat = rng.integers(0, 17, size=1000)
    w = rng.random(1000)
    np.testing.assert_array_equal(_kernels.NUMPY_KERNELS["bincount_flat"](flat, 17), np.bincount(flat, minlength=17))
    np.testing.assert_allclose(_kernels.NUMPY_KERNELS["bincount_weighted"](flat, w, 17),
                               np.bincount(flat, w, minlength=17))


def test_min_cost_flow_cost_is_optimal_against_lp(rng):
    from scipy.optimize import linprog

    for _ in range(20):
        args = _flow_instance(rng, 4, 3)
        n, tail, head, cap, cost, s, t, req = args
        flow, sent = _kernels.NUMPY_KERNELS["min_cost_flow"](*args)
        # LP: min cost @ f subject to conservation and 0 <= f <= cap
        A = np.zeros((n, len(tail)))
        A[tail, np.arange(len(tail))] -= 1
        A[head, np.arange(len(tail))] += 1
        b = np.zeros(n)
        b[s], b[t] = -sent, sent
        lp = linprog(cost, A_eq=A, b_eq=b, bounds=list(zip([0] * len(cap), cap)), method="highs")
        assert lp.status == 0
        assert cost @ flow == pytest.approx(lp.fun, abs=1e-9)


@needs_numba
def test_backends_agree(rng):
    nb, npk = _kernels.NUMBA_KERNELS, _kernels.NUMPY_KERNELS
    flat = rng.integers(0, 31, size=5000).astype(np.int64)
    w = rng.random(5000)
    np.testing.assert_array_equal(nb["bincount_flat"](flat, 31), npk["bincount_flat"](flat, 31))
    np.testing.assert_allclose(nb["bincount_weighted"](flat, w, 31), npk["bincount_weighted"](flat, w, 31))
    for _ in range(30):
        args = _flow_instance(rng, int(rng.integers(1, 7)), int(rng.integers(1, 5)))
        f1, s1 = nb["min_cost_flow"](*args)
        f2, s2 = npk["min_cost_flow"](*args)
        assert s1 == s2
        assert args[4] @ f1 == pytest.approx(args[4] @ f2, abs=1e-9)
    for _ in range(30):
        g, L = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        weight = rng.integers(-2, 3, size=(g, L)).astype(float)
        size = rng.integers(1, 3, size=g).astype(np.int64)
        cap = rng.integers(0, 5, size=L).astype(np.int64)
        a, b = nb["enumerate_assignments"](weight, size, cap, 1e-9), npk["enumerate_assignments"](weight, size, cap, 1e-9)
        assert bool(a[2]) == bool(b[2])
        if a[2]:
            assert list(a[0]) == list(b[0]) and a[1] == b[1]


SNIPPET = """
import numpy as np
from shiftlab import BACKEND
from shiftlab.assignment import AssignmentInstance, solve_assignment
from shiftlab.mc_lab import ExperimentConfig, run_theorem1_experiment
from shiftlab.fixtures import d0
from shiftlab.shifts import ShiftSpec
rng = np.random.default_rng(1)
locs = []
for _ in range(10):
    inst = AssignmentInstance(rng.normal(size=(12, 4)), np.full(4, 4), tuple(i // 2 for i in range(12)))
    locs.append(solve_assignment(inst).location_of)
r = run_theorem1_experiment(ExperimentConfig(d0(), ShiftSpec("symmetric_dirichlet", 0.1),
                                             ShiftSpec("symmetric_dirichlet", 0.05), n_reps=200, seed=3))
print(BACKEND)
print(locs)
print(repr(r["C"].empirical_mse))
"""


def _run(disable: str) -> list[str]:
    env = dict(os.environ, SHIFTLAB_DISABLE_NUMBA=disable)
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
    return out.stdout.splitlines()


def test_env_flag_selects_numpy_backend():
    lines = _run("1")
    assert lines[0] == "numpy"


@needs_numba
def test_results_identical_across_backends():
    fast, slow = _run(""), _run("1")
    assert fast[0] == "numba" and slow[0] == "numpy"
    assert fast[1:] == slow[1:]
