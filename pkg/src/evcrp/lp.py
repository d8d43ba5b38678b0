"""LP relaxation of EVCRP, floor rounding and the PTAS* benchmark."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .core import CAP_TOL, Instance, InstanceError, LoadState, Schedule, Solution, evaluate_objective

FEAS_TOL = 1e-7
ROUND_TOL = 1e-7


class LPInfeasible(InstanceError):
    """The pinned assignments already violate a constraint."""


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int


def bounded_simplex(c, A, b, upper, max_iter: int = 100_000, tol: float = 1e-9) -> SimplexResult:
    """Maximise ``c @ x`` s.t. ``A x <= b``, ``0 <= x <= upper``, with ``b >= 0``.

    Dense tableau primal simplex; bounds are handled by flipping nonbasic
    variables between their bounds rather than by extra rows.  Entering and
    leaving variables follow Bland's rule, so degenerate pivots cannot cycle.
    """
    c = np.asarray(c, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if np.any(b < -tol):
        raise LPInfeasible("slack basis infeasible: negative right-hand side")
    b = np.maximum(b, 0.0)
    N = n + m
    tab = np.hstack([A, np.eye(m)])
    ub = np.concatenate([np.asarray(upper, dtype=np.float64), np.full(m, np.inf)])
    cost = np.concatenate([c, np.zeros(m)])
    basis = np.arange(n, N)
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True
    at_upper = np.zeros(N, dtype=bool)
    xB = b.copy()
    d = cost.copy()            # reduced costs; slack basis has c_B = 0
    it = 0
    while True:
        elig = ~is_basic & ((~at_upper & (d > tol)) | (at_upper & (d < -tol)))
        cand = np.flatnonzero(elig)
        if cand.size == 0:
            break
        if it >= max_iter:
            raise RuntimeError("simplex iteration limit reached")
        it += 1
        j = cand[0]
        s = -1.0 if at_upper[j] else 1.0
        col = tab[:, j] * s
        # blocking candidates: (step length, variable index, row or -1 for a bound flip)
        steps = [ub[j]]
        owners = [j]
        where = [-1]
        dec = np.flatnonzero(col > tol)
        if dec.size:
            steps.extend(xB[dec] / col[dec])
            owners.extend(basis[dec])
            where.extend(dec)
        inc = np.flatnonzero((col < -tol) & np.isfinite(ub[basis]))
        if inc.size:
            steps.extend((ub[basis[inc]] - xB[inc]) / (-col[inc]))
            owners.extend(basis[inc])
            where.extend(inc)
        steps = np.asarray(steps, dtype=np.float64)
        theta = steps.min()
        tied = np.flatnonzero(steps <= theta + 1e-12)
        pick = tied[np.argmin(np.asarray(owners)[tied])]
        leave = where[pick]
        if np.isinf(theta):
            raise RuntimeError("LP unbounded")
        theta = max(theta, 0.0)
        xB -= theta * col
        if leave < 0:
            at_upper[j] = not at_upper[j]
            continue
        out = basis[leave]
        # the leaving variable stops at whichever bound blocked it
        at_upper[out] = bool(col[leave] < 0)
        entering_value = (ub[j] if at_upper[j] else 0.0) + s * theta
        at_upper[j] = False
        piv = tab[leave, j]
        tab[leave] /= piv
        colj = tab[:, j].copy()
        colj[leave] = 0.0
        tab -= np.outer(colj, tab[leave])
        d -= d[j] * tab[leave]
        xB[leave] = entering_value
        basis[leave] = j
        is_basic[out] = False
        is_basic[j] = True
    x = np.where(at_upper, ub, 0.0)
    x[~np.isfinite(x)] = 0.0
    # recompute basic values from the original data to shed round-off drift
    full = np.hstack([A, np.eye(m)])
    rhs = b - full[:, ~is_basic] @ x[~is_basic]
    try:
        xb = np.linalg.solve(full[:, basis], rhs)
    except np.linalg.LinAlgError:
        xb = xB
    x[basis] = xb
    x = np.clip(x, 0.0, ub)
    duals = -d[n:]
    return SimplexResult(x[:n], float(c @ x[:n]), duals, d[:n], it)


@dataclass
class FractionalSolution:
    values: Dict[Tuple[int, int], float]      # (user_id, station_id) -> fraction
    objective: float
    option_values: np.ndarray = field(repr=False, default=None)   # per option row
    iterations: int = 0


def _allowed_mask(instance: Instance, allowed) -> np.ndarray:
    arr = instance.arrays
    if allowed is None:
        return np.ones(arr.num_options, dtype=bool)
    if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
        return allowed.copy()
    mask = np.zeros(arr.num_options, dtype=bool)
    for user, station in allowed:
        mask[arr.option_index(user, station)] = True
    return mask


def build_relaxation(instance: Instance, fixed: Optional[Mapping[int, int]] = None, allowed=None):
    """Assemble the LP rows for the free variables.

    Returns ``(var_rows, c, A, b, fixed_rows, fixed_gain)``.  Rows that can
    never bind (their coefficient sum fits within the right-hand side) are
    dropped.
    """
    arr = instance.arrays
    fixed = dict(fixed or {})
    mask = _allowed_mask(instance, allowed)
    lim = arr.limit.copy()
    occ_cap = np.repeat(arr.n_evse[:, None], arr.num_slots, axis=1).astype(np.float64)
    fixed_rows = []
    for user, station in fixed.items():
        k = arr.option_index(user, station)
        fixed_rows.append(k)
        sl = arr.option_slots(k)
        lim[sl] -= arr.opt_rate[k]
        occ_cap[arr.opt_station[k], sl] -= 1
    if np.any(lim < -CAP_TOL * max(1.0, instance.capacity_kw)) or np.any(occ_cap < 0):
        raise LPInfeasible("fixed assignments violate capacity or occupancy")
    fixed_users = {arr.user_index[u] for u in fixed}
    free = mask & (arr.opt_gain > 0) & ~np.isin(arr.opt_user, list(fixed_users))
    var_rows = np.flatnonzero(free)
    nv = len(var_rows)
    T, C = arr.num_slots, arr.num_stations
    rows, rhs = [], []
    if nv:
        cap_cols = np.zeros((T, nv))
        occ_cols = np.zeros((C * T, nv))
        for j, k in enumerate(var_rows):
            sl = arr.option_slots(k)
            cap_cols[sl, j] = arr.opt_rate[k]
            occ_cols[arr.opt_station[k] * T + sl, j] = 1.0
        for t in range(T):
            if cap_cols[t].sum() > lim[t] + CAP_TOL:
                rows.append(cap_cols[t])
                rhs.append(max(lim[t], 0.0))
        users = arr.opt_user[var_rows]
        for u in np.unique(users):
            sel = users == u
            if sel.sum() > 1:
                row = np.zeros(nv)
                row[sel] = 1.0
                rows.append(row)
                rhs.append(1.0)
        flat_cap = occ_cap.ravel()
        for r in range(C * T):
            if occ_cols[r].sum() > flat_cap[r]:
                rows.append(occ_cols[r])
                rhs.append(flat_cap[r])
    A = np.array(rows) if rows else np.zeros((0, nv))
    b = np.array(rhs, dtype=np.float64)
    c = arr.opt_gain[var_rows]
    fixed_gain = float(arr.opt_gain[fixed_rows].sum()) if fixed_rows else 0.0
    return var_rows, c, A, b, np.array(fixed_rows, dtype=np.int64), fixed_gain


def solve_lp_relaxation(instance: Instance, fixed: Optional[Mapping[int, int]] = None, allowed=None,
                        method: str = "simplex") -> FractionalSolution:
    """Maximise total gain with x in [0, 1]; pinned users are held at 1.

    ``method="simplex"`` uses the in-house bounded simplex, ``"highs"`` the
    HiGHS solver through scipy (for large instances).
    """
    arr = instance.arrays
    var_rows, c, A, b, fixed_rows, fixed_gain = build_relaxation(instance, fixed, allowed)
    xv = np.zeros(arr.num_options)
    xv[fixed_rows] = 1.0
    iters = 0
    if len(var_rows):
        if A.shape[0] == 0:
            x = np.ones(len(var_rows))
        elif method == "simplex":
            res = bounded_simplex(c, A, b, np.ones(len(var_rows)))
            x, iters = res.x, res.iterations
        elif method == "highs":
            from scipy.optimize import linprog

            res = linprog(-c, A_ub=A, b_ub=b, bounds=(0, 1), method="highs")
            if res.status != 0:
                raise RuntimeError(f"HiGHS failed: {res.message}")
            x = np.clip(res.x, 0.0, 1.0)
        else:
            raise ValueError(f"unknown LP method {method!r}")
        xv[var_rows] = x
    values = {}
    for k in np.flatnonzero(xv > 0):
        values[(arr.user_ids[arr.opt_user[k]], arr.station_ids[arr.opt_station[k]])] = float(xv[k])
    obj = fixed_gain + float(c @ xv[var_rows]) if len(var_rows) else fixed_gain
    return FractionalSolution(values, obj, xv, iters)


def floor_round(fractional: FractionalSolution, instance: Instance) -> Schedule:
    """Keep exactly the variables sitting at 1 (within tolerance)."""
    arr = instance.arrays
    if fractional.option_values is not None:
        xv = fractional.option_values
    else:
        xv = np.zeros(arr.num_options)
        for (u, s), v in fractional.values.items():
            xv[arr.option_index(u, s)] = v
    chosen = {}
    for k in np.flatnonzero(xv >= 1.0 - ROUND_TOL):
        i = int(arr.opt_user[k])
        prev = chosen.get(i)
        key = (arr.opt_gain[k], -arr.station_ids[arr.opt_station[k]])
        if prev is None or key > (arr.opt_gain[prev], -arr.station_ids[arr.opt_station[prev]]):
            chosen[i] = int(k)
    return Schedule.from_options(instance, sorted(chosen.values()))


def _sample_guess(instance: Instance, rng: np.random.Generator, max_guess_size: int):
    arr = instance.arrays
    users_with_opts = np.flatnonzero(np.diff(arr.user_ptr) > 0)
    size = int(rng.integers(0, max_guess_size + 1))
    size = min(size, len(users_with_opts))
    if size == 0:
        return ()
    users = rng.choice(users_with_opts, size=size, replace=False)
    state = LoadState(instance)
    rows = []
    for i in sorted(int(u) for u in users):
        k = int(rng.integers(arr.user_ptr[i], arr.user_ptr[i + 1]))
        if not state.fits(instance, k):
            return None
        state.add(instance, k)
        rows.append(k)
    return tuple(rows)


def ptas_star(instance: Instance, num_guesses: int = 250, max_guess_size: int = 3, seed: int = 0,
              method: str = "simplex") -> Solution:
    """Best floor-rounded LP over random partial guesses.

    The first guess is always empty.  Each later guess pins a few users to
    random options; the remaining users keep only options whose gain exceeds
    the smallest pinned gain.
    """
    if num_guesses < 1:
        raise ValueError("num_guesses must be >= 1")
    t0 = time.perf_counter()
    arr = instance.arrays
    rng = np.random.default_rng(seed)
    best_sched, best_obj = None, -np.inf
    seen = set()
    solved = rejected = 0
    for g in range(num_guesses):
        guess = () if g == 0 else _sample_guess(instance, rng, max_guess_size)
        if guess is None:
            rejected += 1
            continue
        if guess in seen:
            continue
        seen.add(guess)
        fixed = {arr.user_ids[arr.opt_user[k]]: arr.station_ids[arr.opt_station[k]] for k in guess}
        allowed = None
        if guess:
            min_gain = arr.opt_gain[list(guess)].min()
            allowed = arr.opt_gain > min_gain
        try:
            frac = solve_lp_relaxation(instance, fixed, allowed, method=method)
        except LPInfeasible:
            rejected += 1
            continue
        solved += 1
        sched = floor_round(frac, instance)
        obj = evaluate_objective(instance, sched)
        if obj > best_obj + 1e-12:
            best_sched, best_obj = sched, obj
    return Solution(best_sched, best_obj, time.perf_counter() - t0, "ptas-star",
                    info={"lp_solves": solved, "rejected_guesses": rejected})
