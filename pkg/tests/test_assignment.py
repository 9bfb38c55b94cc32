from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftlab.assignment import (
    Assignment,
    AssignmentInstance,
    brute_force_assignment,
    compare_impact,
    evaluate_impact,
    is_feasible,
    solve_assignment,
)
from shiftlab.errors import DimensionMismatch, Infeasible, InstanceTooLarge, ValidationError

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_instance(rng, max_units=6, max_locations=4, integer=False):
    n = int(rng.integers(1, max_units + 1))
    L = int(rng.integers(1, max_locations + 1))
    w = rng.integers(-3, 4, size=(n, L)).astype(float) if integer else rng.normal(size=(n, L))
    groups = tuple(int(g) for g in rng.integers(0, max(1, n - 1), size=n))
    sizes = np.bincount(groups)
    biggest = int(sizes.max())
    cap = rng.integers(0, n + 1, size=L)
    cap[int(rng.integers(L))] = max(cap.max(), biggest)
    while cap.sum() < n:
        cap[int(rng.integers(L))] += 1
    return AssignmentInstance(w, cap, groups)


def _brute_objective(instance):
    """Independent exhaustive search over unit-level maps (no group collapsing)."""
    best = None
    n, L = instance.weights.shape
    for loc in itertools.product(range(L), repeat=n):
        a = Assignment(loc, 0.0)
        if is_feasible(instance, a):
            v = sum(instance.weights[i, j] for i, j in enumerate(loc))
            best = v if best is None else max(best, v)
    return best


# -- examples ----------------------------------------------------------------

def test_diagonal_instance():
    inst = AssignmentInstance([[1, 0], [0, 1]], [1, 1])
    for solver in (solve_assignment, brute_force_assignment):
        a = solver(inst)
        assert a.location_of == (0, 1) and a.objective == 2


def test_group_forced_to_only_feasible_location():
    w = [[5.0, 1.0], [4.0, 2.0]]
    a = solve_assignment(AssignmentInstance(w, [1, 2], ("fam", "fam")))
    assert a.location_of == (1, 1)
    assert a.objective == 3.0


def test_empty_and_single_instances():
    empty = AssignmentInstance(np.zeros((0, 2)), [1, 1], ())
    assert brute_force_assignment(empty) == Assignment((), 0.0)
    assert solve_assignment(empty) == Assignment((), 0.0)
    single = AssignmentInstance([[2.5]], [1])
    assert brute_force_assignment(single).location_of == (0,)
    assert solve_assignment(single).objective == 2.5


def test_infeasible_instances():
    with pytest.raises(Infeasible):
        solve_assignment(AssignmentInstance([[1.0], [1.0]], [1]))
    with pytest.raises(Infeasible) as exc:
        solve_assignment(AssignmentInstance([[1.0, 0.0], [1.0, 0.0]], [1, 1], ("g", "g")))
    assert exc.value.group == "g"
    # capacities add up but bin packing is impossible: groups of 2 into two bins of 3
    inst = AssignmentInstance(np.zeros((6, 2)), [3, 3], ("a", "a", "b", "b", "c", "c"))
    with pytest.raises(Infeasible):
        solve_assignment(inst)
    with pytest.raises(Infeasible):
        brute_force_assignment(inst)


def test_instance_validation():
    with pytest.raises(DimensionMismatch):
        AssignmentInstance([[1.0, 2.0]], [1])
    with pytest.raises(DimensionMismatch):
        AssignmentInstance([[1.0]], [1], ("a", "b"))
    with pytest.raises(ValidationError):
        AssignmentInstance([[1.0]], [-1])
    with pytest.raises(ValidationError):
        AssignmentInstance([[np.nan]], [1])
    with pytest.raises(InstanceTooLarge):
        brute_force_assignment(AssignmentInstance(np.zeros((9, 2)), [9, 9]))


# -- optimality --------------------------------------------------------------

def test_solver_matches_brute_force_on_300_instances():
    rng = np.random.default_rng(0)
    for k in range(300):
        inst = random_instance(rng, integer=k % 2 == 0)
        try:
            brute = brute_force_assignment(inst)
        except Infeasible:
            with pytest.raises(Infeasible):
                solve_assignment(inst)
            continue
        fast = solve_assignment(inst)
        assert fast.objective == brute.objective
        assert fast.location_of == brute.location_of
        assert is_feasible(inst, fast)


@given(seeds)
def test_brute_force_matches_unit_level_enumeration(seed):
    inst = random_instance(np.random.default_rng(seed), max_units=5, max_locations=3)
    ref = _brute_objective(inst)
    if ref is None:
        with pytest.raises(Infeasible):
            brute_force_assignment(inst)
    else:
        assert brute_force_assignment(inst).objective == pytest.approx(ref, abs=1e-12)


@given(seeds)
def test_adding_capacity_never_hurts(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    try:
        base = solve_assignment(inst).objective
    except Infeasible:
        return
    cap = inst.capacities.copy()
    cap[int(rng.integers(len(cap)))] += int(rng.integers(1, 3))
    more = solve_assignment(AssignmentInstance(inst.weights, cap, inst.groups)).objective
    assert more >= base - 1e-12


@given(seeds, st.floats(min_value=-5, max_value=5))
def test_row_shift_preserves_gaps(seed, c):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    try:
        a = solve_assignment(inst)
    except Infeasible:
        return
    i = int(rng.integers(inst.n_units))
    w = inst.weights.copy()
    w[i] += c
    shifted = AssignmentInstance(w, inst.capacities, inst.groups)
    b = solve_assignment(shifted)
    assert b.objective == pytest.approx(a.objective + c, abs=1e-9)
    # the assignment chosen under shifted weights is still optimal for the original ones
    assert evaluate_impact(b, inst.weights) == pytest.approx(a.objective, abs=1e-9)


def test_larger_instance_is_feasible_and_beats_greedy():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(40, 6))
    groups = tuple(rng.integers(0, 25, size=40))
    inst = AssignmentInstance(w, np.full(6, 9), groups)
    a = solve_assignment(inst)
    assert is_feasible(inst, a)
    assert a.objective == pytest.approx(evaluate_impact(a, w), abs=1e-12)


# -- impact ------------------------------------------------------------------

def test_impact_examples():
    rng = np.random.default_rng(4)
    inst = random_instance(rng)
    a = solve_assignment(inst)
    assert evaluate_impact(a, inst.weights) == pytest.approx(a.objective, abs=1e-12)
    flat = np.full(inst.weights.shape, 2.0)
    assert evaluate_impact(a, flat) == pytest.approx(2.0 * inst.n_units)
    with pytest.raises(DimensionMismatch):
        evaluate_impact(a, np.zeros((inst.n_units + 1, inst.n_locations)))


def test_truth_assignment_has_highest_true_impact():
    rng = np.random.default_rng(5)
    for _ in range(100):
        inst = random_instance(rng)
        try:
            z_truth = solve_assignment(inst)
        except Infeasible:
            continue
        noisy = AssignmentInstance(inst.weights + rng.normal(scale=1.0, size=inst.weights.shape),
                                   inst.capacities, inst.groups)
        z_noisy = solve_assignment(noisy)
        cmp = compare_impact(z_truth, z_noisy, inst.weights)
        assert cmp["delta"] >= -1e-12
