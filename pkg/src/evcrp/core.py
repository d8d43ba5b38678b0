"""EVCRP data model, objective and feasibility checks.

Units: demand is energy (kWh), station rates and the network capacity are
power (kW), slots last ``slot_hours`` hours.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

COST_MODES = ("per-kwh", "per-slot")
# slack used when comparing loads against the capacity limit
CAP_TOL = 1e-9


class InstanceError(ValueError):
    """Raised for malformed instances or references to unknown ids."""


@dataclass(frozen=True)
class Horizon:
    num_slots: int = 96
    slot_hours: float = 0.25

    def __post_init__(self):
        if self.num_slots < 1:
            raise InstanceError("num_slots must be >= 1")
        if not self.slot_hours > 0:
            raise InstanceError("slot_hours must be > 0")


@dataclass(frozen=True)
class Station:
    id: int
    rate_kw: float
    num_evse: int

    def __post_init__(self):
        if not self.rate_kw > 0:
            raise InstanceError(f"station {self.id}: rate_kw must be > 0")
        if self.num_evse < 0:
            raise InstanceError(f"station {self.id}: num_evse must be >= 0")


@dataclass(frozen=True)
class ChargingOption:
    station: int
    slots: Tuple[int, ...]

    def __post_init__(self):
        if not self.slots:
            raise InstanceError("charging option needs at least one slot")
        object.__setattr__(self, "slots", tuple(sorted(int(s) for s in self.slots)))


@dataclass(frozen=True)
class Request:
    user_id: int
    utility: float
    demand_kwh: float
    options: Tuple[ChargingOption, ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if self.utility < 0:
            raise InstanceError(f"user {self.user_id}: negative utility")
        if not self.demand_kwh > 0:
            raise InstanceError(f"user {self.user_id}: demand must be > 0")
        seen = set()
        for opt in self.options:
            if opt.station in seen:
                raise InstanceError(f"user {self.user_id}: two options at station {opt.station}")
            seen.add(opt.station)

    def option_at(self, station: int) -> ChargingOption:
        for opt in self.options:
            if opt.station == station:
                return opt
        raise InstanceError(f"user {self.user_id} has no option at station {station}")


def slots_needed(demand_kwh: float, rate_kw: float, slot_hours: float) -> int:
    """Number of slots a charger must run to deliver ``demand_kwh``."""
    # guard against 12.000000000001 / 1.5 style round-off pushing ceil up
    return max(1, math.ceil(demand_kwh / (rate_kw * slot_hours) - 1e-9))


@dataclass(frozen=True)
class Instance:
    horizon: Horizon
    stations: Tuple[Station, ...]
    capacity_kw: float
    base_load_kw: Tuple[float, ...]
    cost_profile: Tuple[float, ...]
    requests: Tuple[Request, ...]
    cost_mode: str = "per-kwh"

    def __post_init__(self):
        for name in ("stations", "base_load_kw", "cost_profile", "requests"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        T = self.horizon.num_slots
        if len(self.base_load_kw) != T or len(self.cost_profile) != T:
            raise InstanceError("base_load_kw and cost_profile need exactly num_slots entries")
        if not self.capacity_kw > 0:
            raise InstanceError("capacity_kw must be > 0")
        for t, d in enumerate(self.base_load_kw):
            if d < 0 or d > self.capacity_kw + CAP_TOL:
                raise InstanceError(f"base load at slot {t} outside [0, capacity]")
        if self.cost_mode not in COST_MODES:
            raise InstanceError(f"unknown cost_mode {self.cost_mode!r}")
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise InstanceError("duplicate station ids")
        users = [r.user_id for r in self.requests]
        if len(set(users)) != len(users):
            raise InstanceError("duplicate user ids")
        known = set(ids)
        for r in self.requests:
            for opt in r.options:
                if opt.station not in known:
                    raise InstanceError(f"user {r.user_id}: unknown station {opt.station}")
                if opt.slots[0] < 0 or opt.slots[-1] >= T:
                    raise InstanceError(f"user {r.user_id}: slot index out of range")
                rate = self.station_by_id[opt.station].rate_kw
                if len(opt.slots) != slots_needed(r.demand_kwh, rate, self.horizon.slot_hours):
                    raise InstanceError(f"user {r.user_id}: option at station {opt.station} has "
                                        f"{len(opt.slots)} slots, demand needs "
                                        f"{slots_needed(r.demand_kwh, rate, self.horizon.slot_hours)}")

    @cached_property
    def station_by_id(self) -> Dict[int, Station]:
        return {s.id: s for s in self.stations}

    @cached_property
    def request_by_id(self) -> Dict[int, Request]:
        return {r.user_id: r for r in self.requests}

    @cached_property
    def arrays(self) -> "InstanceArrays":
        return InstanceArrays.build(self)

    def replace(self, **changes) -> "Instance":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass
class InstanceArrays:
    """Flat numpy view of an instance: one row per (user, option) pair.

    Options are stored in request order and, within a request, in the order
    given.  Slot sets use a CSR layout (``slot_ptr``/``slot_idx``).
    """

    num_slots: int
    num_users: int
    num_stations: int
    limit: np.ndarray          # P_bar - d(t), per slot
    rates: np.ndarray          # per station index
    n_evse: np.ndarray         # per station index
    opt_user: np.ndarray       # user index of each option
    opt_station: np.ndarray    # station index of each option
    opt_rate: np.ndarray
    opt_gain: np.ndarray
    slot_ptr: np.ndarray
    slot_idx: np.ndarray
    user_ptr: np.ndarray       # options of user i are user_ptr[i]:user_ptr[i+1]
    demand: np.ndarray         # per user
    utility: np.ndarray        # per user
    user_ids: List[int]
    station_ids: List[int]
    station_index: Dict[int, int]
    user_index: Dict[int, int]

    @property
    def num_options(self) -> int:
        return len(self.opt_user)

    def option_slots(self, k: int) -> np.ndarray:
        return self.slot_idx[self.slot_ptr[k]:self.slot_ptr[k + 1]]

    def option_index(self, user_id: int, station_id: int) -> int:
        i = self.user_index[user_id]
        c = self.station_index[station_id]
        for k in range(self.user_ptr[i], self.user_ptr[i + 1]):
            if self.opt_station[k] == c:
                return k
        raise InstanceError(f"user {user_id} has no option at station {station_id}")

    @classmethod
    def build(cls, inst: Instance) -> "InstanceArrays":
        station_ids = [s.id for s in inst.stations]
        sidx = {sid: i for i, sid in enumerate(station_ids)}
        rates = np.array([s.rate_kw for s in inst.stations], dtype=np.float64)
        n_evse = np.array([s.num_evse for s in inst.stations], dtype=np.int64)
        cost = np.asarray(inst.cost_profile, dtype=np.float64)
        h = inst.horizon.slot_hours
        opt_user, opt_station, opt_gain, lens, flat = [], [], [], [], []
        user_ptr = [0]
        for i, r in enumerate(inst.requests):
            for opt in r.options:
                c = sidx[opt.station]
                opt_user.append(i)
                opt_station.append(c)
                opt_gain.append(_gain(r.utility, cost, opt.slots, rates[c], h, inst.cost_mode))
                lens.append(len(opt.slots))
                flat.extend(opt.slots)
            user_ptr.append(len(opt_user))
        slot_ptr = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=slot_ptr[1:])
        opt_station_arr = np.array(opt_station, dtype=np.int64)
        return cls(
            num_slots=inst.horizon.num_slots,
            num_users=len(inst.requests),
            num_stations=len(station_ids),
            limit=inst.capacity_kw - np.asarray(inst.base_load_kw, dtype=np.float64),
            rates=rates,
            n_evse=n_evse,
            opt_user=np.array(opt_user, dtype=np.int64),
            opt_station=opt_station_arr,
            opt_rate=rates[opt_station_arr] if len(opt_station) else np.zeros(0),
            opt_gain=np.array(opt_gain, dtype=np.float64),
            slot_ptr=slot_ptr,
            slot_idx=np.array(flat, dtype=np.int64),
            user_ptr=np.array(user_ptr, dtype=np.int64),
            demand=np.array([r.demand_kwh for r in inst.requests], dtype=np.float64),
            utility=np.array([r.utility for r in inst.requests], dtype=np.float64),
            user_ids=[r.user_id for r in inst.requests],
            station_ids=station_ids,
            station_index=sidx,
            user_index={r.user_id: i for i, r in enumerate(inst.requests)},
        )


def _gain(utility, cost, slots, rate, slot_hours, cost_mode) -> float:
    c = float(sum(cost[t] for t in slots))
    if cost_mode == "per-kwh":
        c *= rate * slot_hours
    return float(utility) - c


def conditional_gain(request: Request, option: ChargingOption, instance: Instance) -> float:
    """Gain u^a minus the electricity cost of charging along ``option``."""
    if option not in request.options:
        raise InstanceError(f"option at station {option.station} does not belong to user {request.user_id}")
    rate = instance.station_by_id[option.station].rate_kw
    return _gain(request.utility, instance.cost_profile, option.slots, rate,
                 instance.horizon.slot_hours, instance.cost_mode)


def max_gain(request: Request, instance: Instance) -> float:
    if not request.options:
        return 0.0
    return max(conditional_gain(request, o, instance) for o in request.options)


@dataclass(frozen=True)
class Schedule:
    """Maps each user id to the station it charges at, or ``None``."""

    assignment: Mapping[int, Optional[int]] = field(default_factory=dict)

    def assigned(self) -> List[Tuple[int, int]]:
        return [(u, s) for u, s in self.assignment.items() if s is not None]

    def __len__(self) -> int:
        return len(self.assigned())

    def to_json(self) -> Dict[str, Optional[int]]:
        return {str(u): s for u, s in sorted(self.assignment.items())}

    @classmethod
    def from_json(cls, data: Mapping[str, Optional[int]]) -> "Schedule":
        return cls({int(u): (None if s is None else int(s)) for u, s in data.items()})

    @classmethod
    def from_options(cls, instance: Instance, chosen: Sequence[int]) -> "Schedule":
        """Build a schedule from option row indices of ``instance.arrays``."""
        arr = instance.arrays
        assignment: Dict[int, Optional[int]] = {u: None for u in arr.user_ids}
        for k in chosen:
            assignment[arr.user_ids[arr.opt_user[k]]] = arr.station_ids[arr.opt_station[k]]
        return cls(assignment)


def evaluate_objective(instance: Instance, schedule: Schedule) -> float:
    total = 0.0
    for user, station in schedule.assigned():
        req = instance.request_by_id.get(user)
        if req is None:
            raise InstanceError(f"schedule references unknown user {user}")
        total += conditional_gain(req, req.option_at(station), instance)
    return total


@dataclass(frozen=True)
class Violation:
    constraint: str            # "capacity" | "single-station" | "occupancy"
    where: Tuple               # (slot,), (user,) or (station, slot)
    margin: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.feasible


def schedule_loads(instance: Instance, schedule: Schedule):
    """Recompute per-slot EV load and per-(station, slot) occupancy from scratch."""
    T = instance.horizon.num_slots
    load = np.zeros(T)
    occ = {s.id: np.zeros(T, dtype=np.int64) for s in instance.stations}
    for user, station in schedule.assigned():
        opt = instance.request_by_id[user].option_at(station)
        rate = instance.station_by_id[station].rate_kw
        for t in opt.slots:
            load[t] += rate
            occ[station][t] += 1
    return load, occ


def check_feasibility(instance: Instance, schedule: Schedule) -> FeasibilityReport:
    violations: List[Violation] = []
    valid: Dict[int, Optional[int]] = {}
    for user, station in schedule.assignment.items():
        if station is None:
            continue
        req = instance.request_by_id.get(user)
        if req is None or station not in {o.station for o in req.options}:
            violations.append(Violation("single-station", (user,), 1.0))
            continue
        valid[user] = station
    load, occ = schedule_loads(instance, Schedule(valid))
    for t in range(instance.horizon.num_slots):
        excess = instance.base_load_kw[t] + load[t] - instance.capacity_kw
        if excess > CAP_TOL * max(1.0, instance.capacity_kw):
            violations.append(Violation("capacity", (t,), float(excess)))
    for st in instance.stations:
        for t in np.flatnonzero(occ[st.id] > st.num_evse):
            violations.append(Violation("occupancy", (st.id, int(t)), float(occ[st.id][t] - st.num_evse)))
    return FeasibilityReport(tuple(violations))


class LoadState:
    """Incremental load/occupancy bookkeeping for greedy admission."""

    def __init__(self, instance: Instance):
        arr = instance.arrays
        self.load = np.zeros(arr.num_slots)
        self.occ = np.zeros((arr.num_stations, arr.num_slots), dtype=np.int64)
        self.assigned: Dict[int, int] = {}

    def fits(self, instance: Instance, k: int) -> bool:
        arr = instance.arrays
        slots = arr.option_slots(k)
        c = arr.opt_station[k]
        if np.any(self.load[slots] + arr.opt_rate[k] > arr.limit[slots] + CAP_TOL):
            return False
        return not np.any(self.occ[c, slots] + 1 > arr.n_evse[c])

    def add(self, instance: Instance, k: int) -> None:
        arr = instance.arrays
        slots = arr.option_slots(k)
        self.load[slots] += arr.opt_rate[k]
        self.occ[arr.opt_station[k], slots] += 1
        self.assigned[arr.user_ids[arr.opt_user[k]]] = arr.station_ids[arr.opt_station[k]]

    def schedule(self, instance: Instance) -> Schedule:
        assignment: Dict[int, Optional[int]] = {u: None for u in instance.arrays.user_ids}
        assignment.update(self.assigned)
        return Schedule(assignment)


def try_assign(state: LoadState, instance: Instance, request: Request, option: ChargingOption) -> bool:
    """Admit ``request`` along ``option`` if capacity and occupancy allow it."""
    if request.user_id in state.assigned:
        raise InstanceError(f"user {request.user_id} is already assigned")
    if option not in request.options:
        raise InstanceError(f"option at station {option.station} does not belong to user {request.user_id}")
    k = instance.arrays.option_index(request.user_id, option.station)
    if not state.fits(instance, k):
        return False
    state.add(instance, k)
    return True


@dataclass
class Solution:
    schedule: Schedule
    objective: float
    wall_time: float
    method: str
    optimal: bool = False
    info: dict = field(default_factory=dict)


# --- JSON (de)serialization -------------------------------------------------

def instance_to_dict(inst: Instance) -> dict:
    return {
        "horizon": {"num_slots": inst.horizon.num_slots, "slot_hours": inst.horizon.slot_hours},
        "capacity_kw": inst.capacity_kw,
        "base_load_kw": list(inst.base_load_kw),
        "cost_per_kwh": list(inst.cost_profile),
        "cost_mode": inst.cost_mode,
        "stations": [{"id": s.id, "rate_kw": s.rate_kw, "num_evse": s.num_evse} for s in inst.stations],
        "requests": [
            {
                "user_id": r.user_id,
                "utility": r.utility,
                "demand_kwh": r.demand_kwh,
                "options": [{"station": o.station, "slots": list(o.slots)} for o in r.options],
            }
            for r in inst.requests
        ],
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        return Instance(
            horizon=Horizon(int(data["horizon"]["num_slots"]), float(data["horizon"]["slot_hours"])),
            stations=[Station(int(s["id"]), float(s["rate_kw"]), int(s["num_evse"])) for s in data["stations"]],
            capacity_kw=float(data["capacity_kw"]),
            base_load_kw=[float(x) for x in data["base_load_kw"]],
            cost_profile=[float(x) for x in data["cost_per_kwh"]],
            cost_mode=data.get("cost_mode", "per-kwh"),
            requests=[
                Request(
                    user_id=int(r["user_id"]),
                    utility=float(r["utility"]),
                    demand_kwh=float(r["demand_kwh"]),
                    options=[ChargingOption(int(o["station"]), tuple(int(t) for t in o["slots"]))
                             for o in r["options"]],
                )
                for r in data["requests"]
            ],
        )
    except (KeyError, TypeError) as exc:
        raise InstanceError(f"malformed instance document: {exc!r}") from exc


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=None, sort_keys=True))


def load_instance(path) -> Instance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(data)
