import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from evcrp.codec import CodecMismatch, CodecParams, build_groups, encode_label
from evcrp.core import check_feasibility, evaluate_objective
from evcrp.neuro import init_network
from evcrp.oracle import solve_exact
from evcrp.postproc import cell_budgets, candidate_order, extract_solution, learned_solve

from conftest import make_instance, random_instance


def test_budgets_floor_and_clamp():
    budget, clamped = cell_budgets([1.9, -0.3, np.nan, 0.99, np.inf], 5, cap=7)
    assert budget.tolist() == [1, 0, 0, 0, 7]
    assert clamped == 2
    with pytest.raises(CodecMismatch):
        cell_budgets([1.0, 2.0], 3, cap=1)


def test_zero_prediction_empty():
    inst = random_instance(np.random.default_rng(1))
    params = CodecParams()
    sol = extract_solution(inst, np.zeros(params.label_length(len(inst.stations))), params)
    assert sol.schedule.assigned() == [] and sol.objective == 0


def test_optimal_label_round_trip_hand_instance():
    # every user charges at slot 0 and only four fit; the optimum drops user 3
    rows = [(0, 10.0, 1), (1, 5.0, 2), (2, 8.0, 4), (3, 2.0, 3), (4, 9.5, 1)]
    inst = make_instance(5, 4.0, [(0, 1.0, 10)],
                         [(u, g, [(0, list(range(n)))]) for u, g, n in rows])
    opt = solve_exact(inst)
    assert opt.objective == pytest.approx(32.5)
    sol = extract_solution(inst, encode_label(inst, opt.schedule))
    assert sol.objective == pytest.approx(opt.objective)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9))
def test_optimal_label_round_trip_when_cells_are_private(seed):
    inst = random_instance(np.random.default_rng(seed), max_users=6)
    arr = inst.arrays
    cells = build_groups(inst, CodecParams()).cell
    owners = {}
    for k in range(arr.num_options):
        owners.setdefault(int(cells[k]), set()).add(int(arr.opt_user[k]))
    assume(all(len(o) == 1 for o in owners.values()))
    opt = solve_exact(inst)
    sol = extract_solution(inst, encode_label(inst, opt.schedule))
    assert sol.objective == pytest.approx(opt.objective, abs=1e-9)


def _cell_greedy(inst, params):
    """Reference: walk cells in order, admit by gain then user id when it fits."""
    from evcrp.core import LoadState
    arr = inst.arrays
    groups = build_groups(inst, params)
    state = LoadState(inst)
    taken = set()
    rows = []
    for k in candidate_order(inst, groups):
        i = int(arr.opt_user[k])
        if i in taken or not state.fits(inst, k):
            continue
        state.add(inst, k)
        taken.add(i)
        rows.append(int(k))
    return set(rows)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9))
def test_infinite_budgets_reduce_to_cell_greedy(seed):
    inst = random_instance(np.random.default_rng(seed))
    params = CodecParams()
    y = np.full(params.label_length(len(inst.stations)), np.inf)
    sol = extract_solution(inst, y, params)
    assert check_feasibility(inst, sol.schedule).feasible
    arr = inst.arrays
    got = {arr.option_index(u, s) for u, s in sol.schedule.assigned()}
    assert got == _cell_greedy(inst, params)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**9))
def test_any_prediction_is_feasible(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    params = CodecParams(Q=int(rng.integers(1, 5)), L=int(rng.integers(1, 11)), V=int(rng.integers(1, 11)))
    y = rng.normal(0, 3, params.label_length(len(inst.stations)))
    y[rng.random(y.size) < 0.05] = np.nan
    sol = extract_solution(inst, y, params, sort="utility" if seed % 2 else "gain")
    assert check_feasibility(inst, sol.schedule).feasible
    assert sol.objective == pytest.approx(evaluate_objective(inst, sol.schedule))
    assert np.all(sol.info["admitted"] <= np.maximum(np.floor(np.nan_to_num(y, nan=0.0)), 0))


def test_learned_solve_checks_codec():
    inst = random_instance(np.random.default_rng(2))
    params = CodecParams()
    T, C = inst.horizon.num_slots, len(inst.stations)
    net = init_network([params.feature_length(T, C), 8, params.label_length(C)], codec=params.sidecar(T, C))
    sol = learned_solve(inst, net)
    assert check_feasibility(inst, sol.schedule).feasible
    net.codec = CodecParams(Q=2).sidecar(T, C)
    with pytest.raises(CodecMismatch):
        learned_solve(inst, net)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_raising_a_cell_never_lowers_its_admissions(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    params = CodecParams(L=3, V=3)
    y = rng.integers(0, 3, params.label_length(len(inst.stations))).astype(float)
    cell = int(rng.integers(y.size))
    before = extract_solution(inst, y, params).info["admitted"][cell]
    y[cell] += float(rng.integers(1, 4))
    assert extract_solution(inst, y, params).info["admitted"][cell] >= before
