"""Capacity-constrained assignment of units to locations with co-located groups.

Units sharing a group token must go to the same location; capacities count
units. Groups are collapsed to super-units whose weight row is the sum of the
members' rows. With unequal group sizes the problem is a generalised
assignment problem, so :func:`solve_assignment` runs an exact branch and
bound whose bounds come from a min-cost-flow relaxation (groups may split
across locations in the relaxation; a node whose flow keeps every group whole
is an optimal leaf of its subtree).

Ties are broken the same way in the solver and in the brute-force oracle: the
returned group->location map is the lexicographically smallest one whose
value is within ``tol`` of the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, Infeasible, InstanceTooLarge, ValidationError

BRUTE_FORCE_MAX_GROUPS = 8
BRUTE_FORCE_MAX_LOCATIONS = 5


@dataclass(frozen=True, eq=False)
class AssignmentInstance:
    weights: np.ndarray
    capacities: np.ndarray
    groups: tuple = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim == 1 and w.size == 0:
            w = w.reshape(0, len(self.capacities))
        if w.ndim != 2:
            raise DimensionMismatch("weights must be a units x locations matrix")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite")
        cap = np.asarray(self.capacities)
        if cap.ndim != 1 or cap.shape[0] != w.shape[1]:
            raise DimensionMismatch("one capacity per location is required")
        if np.any(cap < 0) or not np.all(np.equal(np.mod(cap, 1), 0)):
            raise ValidationError("capacities must be non-negative integers")
        groups = tuple(range(w.shape[0])) if self.groups is None else tuple(self.groups)
        if len(groups) != w.shape[0]:
            raise DimensionMismatch("one group token per unit is required")
        w.setflags(write=False)
        cap = cap.astype(np.int64)
        cap.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "capacities", cap)
        object.__setattr__(self, "groups", groups)

    @property
    def n_units(self) -> int:
        return self.weights.shape[0]

    @property
    def n_locations(self) -> int:
        return self.weights.shape[1]

    def collapse(self):
        """(group tokens, member lists, summed weight rows, sizes) in first-appearance order."""
        tokens = list(dict.fromkeys(self.groups))
        members = {t: [] for t in tokens}
        for i, t in enumerate(self.groups):
            members[t].append(i)
        member_lists = [members[t] for t in tokens]
        if tokens:
            gw = np.stack([self.weights[m].sum(axis=0) for m in member_lists])
        else:
            gw = np.zeros((0, self.n_locations))
        sizes = np.array([len(m) for m in member_lists], dtype=np.int64)
        return tokens, member_lists, gw, sizes

    def tolerance(self) -> float:
        scale = float(np.abs(self.weights).max(axis=1).sum()) if self.n_units else 0.0
        return 1e-9 * max(1.0, scale)


@dataclass(frozen=True)
class Assignment:
    location_of: tuple
    objective: float
    extra: dict = field(default_factory=dict, compare=False)

    def loads(self, n_locations: int) -> np.ndarray:
        return np.bincount(np.asarray(self.location_of, dtype=np.int64), minlength=n_locations)


def _objective(weights: np.ndarray, location_of: Sequence[int]) -> float:
    return math.fsum(weights[i, j] for i, j in enumerate(location_of))


def _expand(instance: AssignmentInstance, members, group_loc) -> Assignment:
    loc = [0] * instance.n_units
    for m, j in zip(members, group_loc):
        for i in m:
            loc[i] = int(j)
    return Assignment(tuple(loc), _objective(instance.weights, loc))


def _precheck(instance: AssignmentInstance, tokens, sizes) -> None:
    cap = instance.capacities
    if instance.n_units and instance.n_locations == 0:
        raise Infeasible(None, "no locations")
    if int(cap.sum()) < instance.n_units:
        raise Infeasible(None, f"total capacity {int(cap.sum())} < {instance.n_units} units")
    biggest = int(cap.max()) if len(cap) else 0
    for t, s in zip(tokens, sizes):
        if s > biggest:
            raise Infeasible(t, f"group of size {int(s)} exceeds every capacity (max {biggest})")


class _BranchAndBound:
    def __init__(self, gw: np.ndarray, sizes: np.ndarray, cap: np.ndarray, tol: float):
        self.gw, self.sizes, self.cap, self.tol = gw, sizes, cap, tol
        self.n_groups, self.n_loc = gw.shape
        self.nodes = 0

    def relax(self, fixed: dict):
        """Min-cost-flow bound with ``fixed`` group->location choices imposed.

        Returns ``(bound, flows)`` or ``None`` if even the relaxation is infeasible.
        """
        G, L = self.n_groups, self.n_loc
        rem = self.cap.copy()
        fixed_val = 0.0
        for g, j in fixed.items():
            rem[j] -= self.sizes[g]
            fixed_val += self.gw[g, j]
        if np.any(rem < 0):
            return None
        free = [g for g in range(G) if g not in fixed]
        if not free:
            return fixed_val, {}
        source, sink = 0, G + L + 1
        tail, head, capa, cost, arcs = [], [], [], [], []
        for g in free:
            tail.append(source), head.append(1 + g), capa.append(self.sizes[g]), cost.append(0.0)
        for g in free:
            s = self.sizes[g]
            for j in range(L):
                if s <= rem[j]:
                    arcs.append((g, j, len(tail)))
                    tail.append(1 + g), head.append(1 + G + j), capa.append(s)
                    cost.append(-self.gw[g, j] / s)
        for j in range(L):
            tail.append(1 + G + j), head.append(sink), capa.append(rem[j]), cost.append(0.0)
        required = int(sum(self.sizes[g] for g in free))
        flow, sent = _kernels.min_cost_flow(G + L + 2, tail, head, capa, cost, source, sink, required)
        if sent < required:
            return None
        flows = {}
        bound = fixed_val
        for g, j, e in arcs:
            if flow[e] > 0:
                flows.setdefault(g, []).append((j, int(flow[e])))
                bound += flow[e] * self.gw[g, j] / self.sizes[g]
        return bound, flows

    def solve(self, fixed: dict | None = None):
        """Best (value, group->location array) extending ``fixed``; ``(-inf, None)`` if none."""
        self.best_val = -np.inf
        self.best = None
        self._dfs(dict(fixed or {}))
        return self.best_val, self.best

    def _value(self, loc) -> float:
        return math.fsum(self.gw[g, j] for g, j in enumerate(loc))

    def _dfs(self, fixed: dict) -> None:
        self.nodes += 1
        res = self.relax(fixed)
        if res is None:
            return
        bound, flows = res
        if self.best is not None and bound < self.best_val - self.tol:
            return
        split = [g for g in range(self.n_groups) if g not in fixed and len(flows[g]) > 1]
        if not split:
            loc = np.empty(self.n_groups, dtype=np.int64)
            for g, j in fixed.items():
                loc[g] = j
            for g, parts in flows.items():
                loc[g] = parts[0][0]
            val = self._value(loc)
            if self.best is None or val > self.best_val:
                self.best_val, self.best = val, loc
            return
        g = split[0]
        by_flow = sorted(range(self.n_loc), key=lambda j: (-dict(flows[g]).get(j, 0), j))
        for j in by_flow:
            if self.sizes[g] <= self.cap[j]:
                self._dfs({**fixed, g: j})


def solve_assignment(instance: AssignmentInstance) -> Assignment:
    """Exact maximum-weight assignment respecting capacities and co-located groups."""
    tokens, members, gw, sizes = instance.collapse()
    if not tokens:
        return Assignment((), 0.0)
    _precheck(instance, tokens, sizes)
    tol = instance.tolerance()
    bb = _BranchAndBound(gw, sizes, instance.capacities.copy(), tol)
    opt, loc = bb.solve()
    if loc is None:
        raise Infeasible(None, "no placement of the groups respects all capacities")
    # lexicographic refinement: the smallest location per group that keeps the
    # optimum; ``loc`` stays an optimal completion of ``fixed`` throughout
    fixed: dict = {}
    for g in range(len(tokens)):
        for j in range(instance.n_locations):
            if j == loc[g]:
                fixed[g] = j
                break
            trial = {**fixed, g: j}
            res = bb.relax(trial)
            if res is None or res[0] < opt - tol:
                continue
            val, cand = bb.solve(trial)
            if cand is not None and val >= opt - tol:
                fixed, loc = trial, cand
                break
    result = _expand(instance, members, [fixed[g] for g in range(len(tokens))])
    return Assignment(result.location_of, result.objective, {"nodes": bb.nodes})


def brute_force_assignment(instance: AssignmentInstance) -> Assignment:
    """Exhaustive search over group->location maps (testing oracle for small instances)."""
    tokens, members, gw, sizes = instance.collapse()
    if len(tokens) > BRUTE_FORCE_MAX_GROUPS or instance.n_locations > BRUTE_FORCE_MAX_LOCATIONS:
        raise InstanceTooLarge(
            f"{len(tokens)} groups x {instance.n_locations} locations exceeds "
            f"{BRUTE_FORCE_MAX_GROUPS} x {BRUTE_FORCE_MAX_LOCATIONS}"
        )
    if not tokens:
        return Assignment((), 0.0)
    if instance.n_locations == 0:
        raise Infeasible(None, "no locations")
    best, _, found = _kernels.enumerate_assignments(gw, sizes, instance.capacities, instance.tolerance())
    if not found:
        _precheck(instance, tokens, sizes)
        raise Infeasible(None, "no placement of the groups respects all capacities")
    return _expand(instance, members, best)


def is_feasible(instance: AssignmentInstance, assignment: Assignment) -> bool:
    loc = assignment.location_of
    if len(loc) != instance.n_units:
        return False
    if np.any(assignment.loads(instance.n_locations) > instance.capacities):
        return False
    where = {}
    for t, j in zip(instance.groups, loc):
        if where.setdefault(t, j) != j:
            return False
    return True


def evaluate_impact(assignment: Assignment, truth_weights) -> float:
    """Total true weight collected by an assignment."""
    w = np.asarray(truth_weights, dtype=np.float64)
    loc = assignment.location_of
    if w.ndim != 2 or w.shape[0] != len(loc) or (len(loc) and max(loc) >= w.shape[1]):
        raise DimensionMismatch(f"truth weights of shape {w.shape} do not match the assignment")
    return _objective(w, loc)


def compare_impact(assignment: Assignment, baseline: Assignment, truth_weights) -> dict:
    """Impact of ``assignment`` and ``baseline`` under the true weights, and their difference."""
    a = evaluate_impact(assignment, truth_weights)
    b = evaluate_impact(baseline, truth_weights)
    return {"impact": a, "baseline_impact": b, "delta": a - b}
