"""Turn predicted per-cell user counts into a feasible schedule."""
from __future__ import annotations

import time

import numpy as np

from . import kernels
from .codec import CodecMismatch, CodecParams, GroupIndex, build_groups, check_sidecar, encode_features
from .core import Instance, Schedule, Solution, evaluate_objective
from .neuro import Network, forward

SORT_KEYS = ("gain", "utility")


def cell_budgets(y_hat, num_cells: int, cap: int):
    """Floor predictions to integer budgets; negatives and NaN become 0.

    Returns ``(budget, num_clamped)``; budgets are capped at ``cap`` so that
    infinite predictions stay representable.
    """
    y = np.asarray(y_hat, dtype=np.float64)
    if y.shape != (num_cells,):
        raise CodecMismatch(f"prediction has {y.size} entries, codec expects {num_cells}")
    bad = np.isnan(y) | (y < 0)
    y = np.where(bad, 0.0, y)
    return np.minimum(np.floor(y), cap).astype(np.int64), int(bad.sum())


def candidate_order(instance: Instance, groups: GroupIndex, sort: str = "gain") -> np.ndarray:
    """Option rows by cell, then by gain (or utility) descending, then user id."""
    if sort not in SORT_KEYS:
        raise ValueError(f"postproc sort must be one of {SORT_KEYS}")
    arr = instance.arrays
    key = arr.opt_gain if sort == "gain" else arr.utility[arr.opt_user]
    uid = np.asarray(arr.user_ids, dtype=np.int64)[arr.opt_user] if arr.num_options else np.zeros(0, np.int64)
    return np.lexsort((uid, -key, groups.cell)).astype(np.int64)


def extract_solution(instance: Instance, y_hat, params: CodecParams = CodecParams(), sort: str = "gain",
                     groups: GroupIndex = None, backend=None) -> Solution:
    """Visit cells in order; in each, admit the best candidates that still
    fit until the floored budget is spent.  Always feasible."""
    t0 = time.perf_counter()
    arr = instance.arrays
    n_cells = params.label_length(arr.num_stations)
    budget, clamped = cell_budgets(y_hat, n_cells, max(arr.num_options, 1))
    groups = groups if groups is not None else build_groups(instance, params)
    order = candidate_order(instance, groups, sort)
    order = order[budget[groups.cell[order]] > 0]
    accepted, _ = kernels.sweep(instance, order, groups.cell[order], budget.copy(), backend=backend)
    schedule = Schedule.from_options(instance, order[accepted])
    admitted = np.bincount(groups.cell[order[accepted]], minlength=n_cells)
    return Solution(schedule, evaluate_objective(instance, schedule), time.perf_counter() - t0, "dclevernet",
                    info={"clamped": clamped, "admitted": admitted})


def codec_of(net: Network) -> CodecParams:
    c = net.codec
    return CodecParams(Q=int(c["Q"]), L=int(c["L"]), V=int(c["V"]), demand_norm=c["demand_norm"])


def learned_solve(instance: Instance, net: Network, sort: str = "gain", backend=None) -> Solution:
    """Encode, predict cell counts, extract a schedule."""
    t0 = time.perf_counter()
    params = codec_of(net)
    T, C = instance.horizon.num_slots, len(instance.stations)
    check_sidecar(net.codec, params.sidecar(T, C))
    if (net.input_dim, net.output_dim) != (params.feature_length(T, C), params.label_length(C)):
        raise CodecMismatch(f"network {net.input_dim}->{net.output_dim} does not fit codec "
                            f"{params.feature_length(T, C)}->{params.label_length(C)}")
    groups = build_groups(instance, params)
    y_hat = forward(net, encode_features(instance, params, groups))
    sol = extract_solution(instance, y_hat, params, sort=sort, groups=groups, backend=backend)
    sol.wall_time = time.perf_counter() - t0
    return sol
