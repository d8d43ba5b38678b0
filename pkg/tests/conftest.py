import numpy as np
import pytest

from evcrp.core import ChargingOption, Horizon, Instance, Request, Station, slots_needed


def make_instance(T, capacity, stations, requests, base=None, cost=None, slot_hours=1.0, cost_mode="per-kwh"):
    """Build an instance from compact tuples.

    ``stations``: [(id, rate_kw, num_evse)];
    ``requests``: [(user_id, utility, [(station, slots)])].  Demand is set
    to the energy of the first option so slot counts stay consistent.
    """
    st = [Station(*s) for s in stations]
    rate = {s.id: s.rate_kw for s in st}
    reqs = []
    for uid, utility, opts in requests:
        demand = rate.get(opts[0][0], 1.0) * slot_hours * len(opts[0][1])
        reqs.append(Request(uid, utility, demand, [ChargingOption(s, tuple(sl)) for s, sl in opts]))
    return Instance(Horizon(T, slot_hours), st, capacity,
                    base if base is not None else [0.0] * T,
                    cost if cost is not None else [0.0] * T, reqs, cost_mode=cost_mode)


def random_instance(rng, max_users=8, max_slots=8, max_stations=3, tight=True):
    """Small random instance with arbitrary (not necessarily contiguous) slot sets."""
    T = int(rng.integers(1, max_slots + 1))
    C = int(rng.integers(1, max_stations + 1))
    h = 1.0
    rates = rng.choice([1.0, 2.0, 3.0, 5.0], size=C, replace=False) if C <= 4 else None
    stations = [Station(c, float(rates[c]), int(rng.integers(0, 4))) for c in range(C)]
    capacity = float(rng.integers(4, 15))
    base = (rng.uniform(0, 0.6, T) * capacity).round(2) if tight else np.zeros(T)
    cost = rng.uniform(0, 0.3, T).round(3)
    reqs = []
    for uid in range(int(rng.integers(0, max_users + 1))):
        demand = float(rng.integers(1, 2 * T + 1))
        opts = []
        for st in stations:
            n = slots_needed(demand, st.rate_kw, h)
            if n <= T and rng.random() < 0.8:
                slots = tuple(sorted(rng.choice(T, size=n, replace=False).tolist()))
                opts.append(ChargingOption(st.id, slots))
        if not opts:
            continue
        worst = max(sum(cost[t] for t in o.slots) * stations[o.station].rate_kw * h for o in opts)
        utility = float(worst + rng.uniform(0, 10))
        reqs.append(Request(uid, utility, demand, opts))
    return Instance(Horizon(T, h), stations, capacity, base.tolist(), cost.tolist(), reqs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, shown after the run
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
