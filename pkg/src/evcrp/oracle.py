"""Exact EVCRP solvers: exhaustive enumeration and branch-and-bound."""
from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from typing import List

import numpy as np

from .core import CAP_TOL, Instance, InstanceError, Schedule, Solution, evaluate_objective
from .lp import LPInfeasible, bounded_simplex, build_relaxation

ENUM_LIMIT = 10**7


@dataclass(frozen=True)
class SearchLimits:
    time_budget: float = math.inf     # seconds
    node_budget: float = math.inf
    gap: float = 0.0                  # relative optimality gap tolerance

    def __post_init__(self):
        if self.time_budget < 0 or self.node_budget < 0 or self.gap < 0:
            raise ValueError("search limits must be non-negative")


def _option_tables(instance: Instance):
    arr = instance.arrays
    slots = [arr.option_slots(k).tolist() for k in range(arr.num_options)]
    return slots, arr.opt_rate.tolist(), arr.opt_station.tolist(), arr.opt_gain.tolist()


def enumerate_exhaustive(instance: Instance) -> Solution:
    """Try every joint choice of (option or nothing) per user.

    Partial choices that already break a constraint are cut, which loses no
    feasible completion because the constraints are packing constraints.
    """
    arr = instance.arrays
    sizes = np.diff(arr.user_ptr) + 1
    if float(np.prod(sizes.astype(float))) > ENUM_LIMIT:
        raise InstanceError("instance too large for exhaustive enumeration")
    t0 = time.perf_counter()
    slots, rate, station, gain = _option_tables(instance)
    limit = (arr.limit + CAP_TOL).tolist()
    n_evse = arr.n_evse.tolist()
    load = [0.0] * arr.num_slots
    occ = [[0] * arr.num_slots for _ in range(arr.num_stations)]
    ptr = arr.user_ptr.tolist()
    best = [-1.0, []]
    chosen: List[int] = []

    def visit(i, value):
        if i == arr.num_users:
            if value > best[0]:
                best[0] = value
                best[1] = list(chosen)
            return
        visit(i + 1, value)
        for k in range(ptr[i], ptr[i + 1]):
            c, r, sl = station[k], rate[k], slots[k]
            oc = occ[c]
            if any(load[t] + r > limit[t] or oc[t] >= n_evse[c] for t in sl):
                continue
            for t in sl:
                load[t] += r
                oc[t] += 1
            chosen.append(k)
            visit(i + 1, value + gain[k])
            chosen.pop()
            for t in sl:
                load[t] -= r
                oc[t] -= 1

    visit(0, 0.0)
    schedule = Schedule.from_options(instance, best[1])
    return Solution(schedule, evaluate_objective(instance, schedule), time.perf_counter() - t0,
                    "enumerate", optimal=True)


def candidate_options(instance: Instance) -> np.ndarray:
    """Options worth branching on: positive gain, individually fitting, and
    not dominated by another option of the same user."""
    arr = instance.arrays
    keep = arr.opt_gain > 0
    for k in np.flatnonzero(keep):
        sl = arr.option_slots(k)
        if arr.n_evse[arr.opt_station[k]] < 1 or np.any(arr.opt_rate[k] > arr.limit[sl] + CAP_TOL):
            keep[k] = False
    # occupancy at a station never binds if every option there could run at once
    T = arr.num_slots
    touching = np.zeros((arr.num_stations, T), dtype=np.int64)
    for k in np.flatnonzero(keep):
        touching[arr.opt_station[k], arr.option_slots(k)] += 1
    loose = (touching <= arr.n_evse[:, None]).all(axis=1)
    slot_sets = {}

    def dominates(a, b):
        if not loose[arr.opt_station[a]]:
            return False
        if arr.opt_gain[a] < arr.opt_gain[b] or arr.opt_rate[a] > arr.opt_rate[b]:
            return False
        sa = slot_sets.setdefault(a, frozenset(arr.option_slots(a).tolist()))
        sb = slot_sets.setdefault(b, frozenset(arr.option_slots(b).tolist()))
        return sa <= sb

    for i in range(arr.num_users):
        ks = [k for k in range(arr.user_ptr[i], arr.user_ptr[i + 1]) if keep[k]]
        for b in ks:
            for a in ks:
                if a == b or not keep[a] or not dominates(a, b):
                    continue
                if b < a and dominates(b, a):
                    continue        # identical pair: the lower row survives
                keep[b] = False
                break
    return np.flatnonzero(keep)


def solve_exact(instance: Instance, limits: SearchLimits = SearchLimits(), use_lp: bool = True,
                backend: str = "bnb") -> Solution:
    """Optimal schedule by depth-first branch-and-bound.

    ``backend="milp"`` hands the same model to HiGHS instead; it is used for
    labelling corpora of a few thousand instances.
    """
    if backend == "milp":
        return _solve_milp(instance, limits)
    if backend != "bnb":
        raise ValueError(f"unknown backend {backend!r}")
    t0 = time.perf_counter()
    arr = instance.arrays
    cand = candidate_options(instance)
    by_user = {}
    for k in cand:
        by_user.setdefault(int(arr.opt_user[k]), []).append(int(k))
    sid = arr.station_ids
    for ks in by_user.values():
        ks.sort(key=lambda k: (-arr.opt_gain[k], sid[arr.opt_station[k]]))
    users = sorted(by_user, key=lambda i: (-arr.opt_gain[by_user[i][0]], arr.user_ids[i]))
    n = len(users)
    best_gain = [arr.opt_gain[by_user[i][0]] for i in users]
    suffix = np.concatenate([np.cumsum(best_gain[::-1])[::-1], [0.0]]) if n else np.zeros(1)
    slots, rate, station, gain = _option_tables(instance)
    limit = (arr.limit + CAP_TOL).tolist()
    n_evse = arr.n_evse.tolist()
    load = [0.0] * arr.num_slots
    occ = [[0] * arr.num_slots for _ in range(arr.num_stations)]
    chosen: List[int] = []
    inc = {"value": 0.0, "rows": []}
    stats = {"nodes": 0, "lp": 0, "aborted": False}
    rest_mask = np.zeros(arr.num_options, dtype=bool)
    tol_abs = 1e-9 * max(1.0, float(suffix[0]))

    def pruned(bound):
        return bound <= inc["value"] + max(limits.gap * abs(inc["value"]), tol_abs)

    def lp_bound(depth, value):
        rest_mask[:] = False
        for i in users[depth:]:
            rest_mask[by_user[i]] = True
        fixed = {arr.user_ids[arr.opt_user[k]]: sid[arr.opt_station[k]] for k in chosen}
        try:
            var_rows, c, A, b, _, _ = build_relaxation(instance, fixed, rest_mask)
        except LPInfeasible:
            return -math.inf, None
        stats["lp"] += 1
        if len(var_rows) == 0:
            return value, []
        if A.shape[0] == 0:
            return value + float(c.sum()), var_rows.tolist()
        res = bounded_simplex(c, A, b, np.ones(len(var_rows)))
        x = res.x
        integral = None
        if np.all((x < 1e-9) | (x > 1 - 1e-9)):
            integral = var_rows[x > 0.5].tolist()
        return value + res.objective, integral

    def visit(depth, value):
        if stats["aborted"]:
            return
        stats["nodes"] += 1
        if stats["nodes"] > limits.node_budget or time.perf_counter() - t0 > limits.time_budget:
            stats["aborted"] = True
            return
        if value > inc["value"]:
            inc["value"], inc["rows"] = value, list(chosen)
        if depth == n or pruned(value + suffix[depth]):
            return
        if use_lp:
            bound, integral = lp_bound(depth, value)
            if integral is not None:
                if bound > inc["value"]:
                    inc["value"], inc["rows"] = bound, list(chosen) + integral
                return
            if pruned(bound):
                return
        i = users[depth]
        for k in by_user[i]:
            c, r, sl = station[k], rate[k], slots[k]
            oc = occ[c]
            if any(load[t] + r > limit[t] or oc[t] >= n_evse[c] for t in sl):
                continue
            for t in sl:
                load[t] += r
                oc[t] += 1
            chosen.append(k)
            visit(depth + 1, value + gain[k])
            chosen.pop()
            for t in sl:
                load[t] -= r
                oc[t] -= 1
        visit(depth + 1, value)

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 4 * n + 1000))
    try:
        visit(0, 0.0)
    finally:
        sys.setrecursionlimit(old_limit)
    schedule = Schedule.from_options(instance, inc["rows"])
    return Solution(schedule, evaluate_objective(instance, schedule), time.perf_counter() - t0, "exact",
                    optimal=not stats["aborted"], info={"nodes": stats["nodes"], "lp_solves": stats["lp"]})


def _solve_milp(instance: Instance, limits: SearchLimits) -> Solution:
    from scipy.optimize import LinearConstraint, milp

    t0 = time.perf_counter()
    arr = instance.arrays
    cand = candidate_options(instance)
    rows, c, A, b, _, _ = build_relaxation(instance, None, np.isin(np.arange(arr.num_options), cand))
    chosen: List[int] = []
    optimal = True
    if len(rows):
        if A.shape[0] == 0:
            chosen = rows.tolist()
        else:
            opts = {"mip_rel_gap": limits.gap}
            if math.isfinite(limits.time_budget):
                opts["time_limit"] = limits.time_budget
            if math.isfinite(limits.node_budget):
                opts["node_limit"] = int(limits.node_budget)
            rhs = b.copy()
            # HiGHS tolerates ~1e-6 row violations; tighten offending rows and re-solve
            for _ in range(4):
                res = milp(-c, constraints=LinearConstraint(A, -np.inf, rhs), integrality=np.ones(len(rows)),
                           bounds=(0, 1), options=opts)
                if res.x is None:
                    raise RuntimeError(f"HiGHS MIP failed: {res.message}")
                x = (res.x > 0.5).astype(np.float64)
                over = A @ x - b > CAP_TOL
                if not over.any():
                    break
                rhs[over] = b[over] - 1e-5 * np.maximum(1.0, np.abs(b[over]))
            else:
                raise RuntimeError("HiGHS MIP kept returning rows over their limit")
            optimal = res.status == 0
            chosen = rows[x > 0.5].tolist()
    schedule = Schedule.from_options(instance, chosen)
    return Solution(schedule, evaluate_objective(instance, schedule), time.perf_counter() - t0, "exact",
                    optimal=optimal, info={"backend": "milp"})
