"""Synthetic EVCRP instances and ACN-style session log ingestion."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (ChargingOption, Horizon, Instance, InstanceError, Request, Station, _gain,
                   slots_needed)

log = logging.getLogger(__name__)

PEAK_PRICE = 0.36          # $/kWh, linear utility slope
SOC_MEAN, SOC_STD, SOC_LO, SOC_HI = 0.5, 0.3, 0.2, 0.8
BATTERY_MEAN, BATTERY_STD, BATTERY_MIN = 24.0, 10.0, 5.0
ARRIVAL_MEAN_H, ARRIVAL_STD_H = 18.0, 5.0
# bundled profiles describe a 1 MW network; base load scales with capacity
PROFILE_CAPACITY_KW = 1000.0
MAX_RESAMPLES = 10_000


@dataclass(frozen=True)
class GenParams:
    num_users: int
    rates: Tuple[float, ...] = (1.5, 7.0, 50.0)
    num_evse: int = 200
    capacity_kw: float = 1000.0
    num_slots: int = 96
    slot_hours: float = 0.25
    load_profile: int = 1
    utility_mode: str = "linear"
    utility_range: Tuple[float, float] = (5000.0, 8000.0)
    cost_mode: str = "per-kwh"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "utility_range", tuple(float(u) for u in self.utility_range))
        if self.num_users < 1:
            raise InstanceError("num_users must be >= 1")
        if not self.capacity_kw > 0:
            raise InstanceError("capacity_kw must be > 0")
        if not self.rates or min(self.rates) <= 0:
            raise InstanceError("station rates must be positive")
        if self.utility_mode not in ("linear", "random"):
            raise InstanceError(f"unknown utility_mode {self.utility_mode!r}")
        lo, hi = self.utility_range
        if lo > hi:
            raise InstanceError("utility_range needs lo <= hi")

    @property
    def horizon(self) -> Horizon:
        return Horizon(self.num_slots, self.slot_hours)


def sample_truncated_normal(mean: float, std: float, lo: float, hi: float, rng: np.random.Generator) -> float:
    """Draw from N(mean, std) conditioned on [lo, hi] by rejection."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    if not std > 0:
        raise ValueError("need std > 0")
    for _ in range(100_000):
        x = rng.normal(mean, std)
        if lo <= x <= hi:
            return float(x)
    # the interval sits far in a tail; fall back to the nearest bound
    return float(min(max(mean, lo), hi))


def _resample(values: Sequence[float], src_hours: float, horizon: Horizon) -> np.ndarray:
    """Average a piecewise-constant daily profile over the target slot grid."""
    values = np.asarray(values, dtype=np.float64)
    period = len(values) * src_hours
    out = np.empty(horizon.num_slots)
    sub = 64
    for t in range(horizon.num_slots):
        hours = (t + (np.arange(sub) + 0.5) / sub) * horizon.slot_hours
        idx = (np.floor((hours % period) / src_hours)).astype(int) % len(values)
        out[t] = values[idx].mean()
    return out


@lru_cache(maxsize=None)
def _data(name: str) -> dict:
    return json.loads(resources.files("evcrp").joinpath("data").joinpath(name).read_text())


def builtin_load_profile(profile_id: int, horizon: Horizon = Horizon()) -> np.ndarray:
    """Bundled household base load (kW, 1 MW network) on ``horizon``'s grid."""
    if profile_id not in (1, 2, 3):
        raise InstanceError(f"unknown load profile {profile_id}; choose 1, 2 or 3")
    d = _data(f"load_profile_{profile_id}.json")
    return _resample(d["values"], d["slot_hours"], horizon)


def builtin_tariff(horizon: Horizon = Horizon()) -> np.ndarray:
    """Time-of-use price in $/kWh, peak 0.36 between 16:00 and 21:00."""
    d = _data("tou_tariff.json")
    return _resample(d["values"], d["slot_hours"], horizon)


def _stations(params: GenParams) -> List[Station]:
    return [Station(i, r, params.num_evse) for i, r in enumerate(params.rates)]


def _options(arrival: int, demand: float, utility: float, stations, horizon: Horizon,
             cost: np.ndarray, cost_mode: str) -> List[ChargingOption]:
    """One contiguous option per station; drops options that overrun the
    horizon or would carry a negative gain."""
    opts = []
    for st in stations:
        n = slots_needed(demand, st.rate_kw, horizon.slot_hours)
        if arrival + n > horizon.num_slots:
            continue
        slots = tuple(range(arrival, arrival + n))
        if _gain(utility, cost, slots, st.rate_kw, horizon.slot_hours, cost_mode) < 0:
            continue
        opts.append(ChargingOption(st.id, slots))
    return opts


def _utility(params: GenParams, demand: float, rng: np.random.Generator) -> float:
    if params.utility_mode == "linear":
        return PEAK_PRICE * demand
    lo, hi = params.utility_range
    return float(rng.uniform(lo, hi))


def _arrival_slot(hour: float, horizon: Horizon) -> int:
    return int(math.floor(hour / horizon.slot_hours)) % horizon.num_slots


def _network(params: GenParams, horizon: Horizon):
    base = builtin_load_profile(params.load_profile, horizon) * (params.capacity_kw / PROFILE_CAPACITY_KW)
    base = np.minimum(base, params.capacity_kw)
    return base, builtin_tariff(horizon)


def generate_synthetic(params: GenParams) -> Instance:
    """Draw ``params.num_users`` charging requests.

    Demand is ``(1 - SOC) * B`` with SOC a truncated normal fraction and B a
    normal battery size clamped at 5 kWh; arrival is normal around 18:00 and
    wraps modulo the horizon.  A user whose options all drop out is redrawn.
    """
    horizon = params.horizon
    rng = np.random.default_rng(params.seed)
    stations = _stations(params)
    base, cost = _network(params, horizon)
    requests = []
    for uid in range(params.num_users):
        for _ in range(MAX_RESAMPLES):
            soc = sample_truncated_normal(SOC_MEAN, SOC_STD, SOC_LO, SOC_HI, rng)
            battery = max(BATTERY_MIN, float(rng.normal(BATTERY_MEAN, BATTERY_STD)))
            demand = (1.0 - soc) * battery
            arrival = _arrival_slot(float(rng.normal(ARRIVAL_MEAN_H, ARRIVAL_STD_H)), horizon)
            utility = _utility(params, demand, rng)
            opts = _options(arrival, demand, utility, stations, horizon, cost, params.cost_mode)
            if opts:
                requests.append(Request(uid, utility, demand, opts))
                break
        else:
            raise InstanceError("could not draw a user with at least one valid option; "
                                "check the horizon and station rates")
    return Instance(horizon, stations, params.capacity_kw, base.tolist(), cost.tolist(), requests,
                    cost_mode=params.cost_mode)


def _parse_time(raw: str) -> datetime:
    raw = raw.strip()
    try:
        return datetime.fromtimestamp(float(raw), tz=timezone.utc)
    except ValueError:
        pass
    # python < 3.11 does not accept a trailing Z
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    return datetime.fromisoformat(raw)


@dataclass
class IngestReport:
    rows: int = 0
    skipped: List[Tuple[int, str]] = field(default_factory=list)
    no_option: int = 0


def ingest_acn(csv_path, params: GenParams, report: Optional[IngestReport] = None) -> Instance:
    """Turn an ACN-style session log into an instance.

    Needs ``connection_time`` (ISO-8601 or epoch seconds) and
    ``kwh_delivered`` columns.  The wall-clock time of day sets the arrival
    slot.  Unparsable rows are skipped and logged with their line numbers.
    """
    horizon = params.horizon
    rng = np.random.default_rng(params.seed)
    stations = _stations(params)
    base, cost = _network(params, horizon)
    report = report if report is not None else IngestReport()
    requests = []
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return Instance(horizon, stations, params.capacity_kw, base.tolist(), cost.tolist(), [],
                            cost_mode=params.cost_mode)
        missing = {"connection_time", "kwh_delivered"} - set(reader.fieldnames)
        if missing:
            raise InstanceError(f"{csv_path}: missing columns {sorted(missing)}")
        for row in reader:
            report.rows += 1
            line = reader.line_num
            try:
                ts = _parse_time(row["connection_time"])
                demand = float(row["kwh_delivered"])
                if not demand > 0 or not math.isfinite(demand):
                    raise ValueError("kwh_delivered must be positive")
            except (ValueError, TypeError, OverflowError) as exc:
                report.skipped.append((line, str(exc)))
                continue
            hour = ts.hour + ts.minute / 60 + ts.second / 3600
            arrival = _arrival_slot(hour, horizon)
            utility = _utility(params, demand, rng)
            opts = _options(arrival, demand, utility, stations, horizon, cost, params.cost_mode)
            if not opts:
                report.no_option += 1
                continue
            requests.append(Request(len(requests), utility, demand, opts))
    if report.skipped:
        log.warning("%s: skipped %d bad rows (first at line %d)", csv_path, len(report.skipped),
                    report.skipped[0][0])
    if report.no_option:
        log.warning("%s: %d sessions had no option fitting the horizon", csv_path, report.no_option)
    return Instance(horizon, stations, params.capacity_kw, base.tolist(), cost.tolist(), requests,
                    cost_mode=params.cost_mode)
