"""Fixed-length network input/output encoding of EVCRP instances.

Requests are grouped per station by normalized conditional gain (and, on
the output side, by normalized demand), so vector lengths depend only on
the horizon, the station count and the band counts, never on the number of
requests.

Output cell layout per station: gain rank (highest gain band first) major,
demand rank (lowest demand band first) minor.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Instance, Schedule

DEMAND_NORMS = ("group-max", "capacity")
_EPS = 1e-12


class CodecMismatch(ValueError):
    """A dataset or model was built for a different codec layout."""


@dataclass(frozen=True)
class CodecParams:
    Q: int = 4
    L: int = 10
    V: int = 10
    demand_norm: str = "group-max"

    def __post_init__(self):
        if min(self.Q, self.L, self.V) < 1:
            raise ValueError("Q, L and V must be >= 1")
        if self.demand_norm not in DEMAND_NORMS:
            raise ValueError(f"demand_norm must be one of {DEMAND_NORMS}")

    def feature_length(self, num_slots: int, num_stations: int) -> int:
        return num_slots + num_stations * (4 * self.Q + num_slots)

    def label_length(self, num_stations: int) -> int:
        return num_stations * self.L * self.V

    def sidecar(self, num_slots: int, num_stations: int) -> dict:
        return {**asdict(self), "num_slots": num_slots, "num_stations": num_stations}


def check_sidecar(expected: dict, found: dict) -> None:
    keys = ("Q", "L", "V", "demand_norm", "num_slots", "num_stations")
    diff = {k: (expected.get(k), found.get(k)) for k in keys if expected.get(k) != found.get(k)}
    if diff:
        raise CodecMismatch(f"codec mismatch (expected, found): {diff}")


def band(x: np.ndarray, n: int) -> np.ndarray:
    """Index i in 1..n with (i-1)/n < x <= i/n; x = 0 goes to band 1."""
    i = np.ceil(np.asarray(x, dtype=np.float64) * n - 1e-9).astype(np.int64)
    return np.clip(i, 1, n)


@dataclass
class GroupIndex:
    """Band membership of every option row of an instance."""

    norm_gain: np.ndarray       # G~ within the option's station
    norm_demand: np.ndarray     # P~ under the codec's demand_norm
    norm_ratio: np.ndarray      # R~ within the option's station
    input_band: np.ndarray      # 1..Q
    gain_band: np.ndarray       # 1..L, L = highest gain
    demand_band: np.ndarray     # 1..V, 1 = highest demand
    cell: np.ndarray            # flat output index


def _per_station_max(values: np.ndarray, station: np.ndarray, num_stations: int) -> np.ndarray:
    out = np.zeros(num_stations)
    if len(values):
        np.maximum.at(out, station, values)
    return out


def _normalize(values, station, num_stations):
    mx = _per_station_max(values, station, num_stations)[station]
    return np.where(mx > 0, values / np.where(mx > 0, mx, 1.0), 0.0)


def build_groups(instance: Instance, params: CodecParams) -> GroupIndex:
    arr = instance.arrays
    C = arr.num_stations
    st = arr.opt_station
    gain = np.maximum(arr.opt_gain, 0.0)
    demand = arr.demand[arr.opt_user]
    g = np.clip(_normalize(gain, st, C), 0.0, 1.0)
    if params.demand_norm == "group-max":
        p = _normalize(demand, st, C)
    else:
        p = demand / instance.capacity_kw
    p = np.clip(p, 0.0, 1.0)
    r = np.clip(_normalize(gain / demand, st, C), 0.0, 1.0)
    lb = band(g, params.L)
    vb = params.V + 1 - band(p, params.V)
    cell = st * params.L * params.V + (params.L - lb) * params.V + (params.V - vb)
    return GroupIndex(g, p, r, band(g, params.Q), lb, vb, cell.astype(np.int64))


def build_input_groups(instance: Instance, Q: int = 4) -> GroupIndex:
    return build_groups(instance, CodecParams(Q=Q))


def build_output_groups(instance: Instance, L: int = 10, V: int = 10, demand_norm: str = "group-max") -> GroupIndex:
    return build_groups(instance, CodecParams(L=L, V=V, demand_norm=demand_norm))


def encode_features(instance: Instance, params: CodecParams = CodecParams(),
                    groups: Optional[GroupIndex] = None) -> np.ndarray:
    """``[d(t)/P_bar] ++ per station ([avg P~, |q|/|A|, avg G~, avg R~] per
    gain band, then per-slot request counts scaled by their maximum)``."""
    arr = instance.arrays
    T, C, Q = arr.num_slots, arr.num_stations, params.Q
    groups = groups if groups is not None else build_groups(instance, params)
    out = np.zeros(params.feature_length(T, C))
    out[:T] = np.clip((instance.capacity_kw - arr.limit) / instance.capacity_kw, 0.0, 1.0)
    if arr.num_options == 0:
        return out
    # sum in (user id, station) order so request order cannot change the bits
    canon = np.lexsort((arr.opt_station, np.asarray(arr.user_ids)[arr.opt_user]))
    key = (arr.opt_station * Q + (groups.input_band - 1))[canon]
    cnt = np.bincount(key, minlength=C * Q).astype(np.float64)
    stats = np.zeros((C * Q, 4))
    safe = np.where(cnt > 0, cnt, 1.0)
    stats[:, 0] = np.bincount(key, groups.norm_demand[canon], minlength=C * Q) / safe
    stats[:, 1] = cnt / max(arr.num_users, 1)
    stats[:, 2] = np.bincount(key, groups.norm_gain[canon], minlength=C * Q) / safe
    stats[:, 3] = np.bincount(key, groups.norm_ratio[canon], minlength=C * Q) / safe
    lens = np.diff(arr.slot_ptr)
    per_slot = np.zeros(C * T)
    np.add.at(per_slot, np.repeat(arr.opt_station, lens) * T + arr.slot_idx, 1.0)
    per_slot = per_slot.reshape(C, T)
    mx = per_slot.max(axis=1, keepdims=True)
    per_slot = np.where(mx > 0, per_slot / np.where(mx > 0, mx, 1.0), 0.0)
    block = np.hstack([stats.reshape(C, 4 * Q), per_slot])
    out[T:] = block.ravel()
    return np.clip(out, 0.0, 1.0)


def encode_label(instance: Instance, schedule: Schedule, params: CodecParams = CodecParams(),
                 groups: Optional[GroupIndex] = None) -> np.ndarray:
    """Count accepted (user, station) assignments per output cell."""
    arr = instance.arrays
    groups = groups if groups is not None else build_groups(instance, params)
    label = np.zeros(params.label_length(arr.num_stations))
    for user, station in schedule.assigned():
        label[groups.cell[arr.option_index(user, station)]] += 1
    return label


# --- dataset files ------------------------------------------------------------

@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    sidecar: dict
    sources: Sequence[str] = ()
    label_method: str = ""

    def __len__(self):
        return len(self.features)


def build_dataset(instances, schedules, params: CodecParams, sources=None, label_method="exact") -> Dataset:
    instances = list(instances)
    if not instances:
        raise ValueError("empty dataset")
    T = instances[0].horizon.num_slots
    C = len(instances[0].stations)
    X, Y = [], []
    for inst, sched in zip(instances, schedules):
        if inst.horizon.num_slots != T or len(inst.stations) != C:
            raise CodecMismatch("all instances in a dataset need the same horizon and station count")
        groups = build_groups(inst, params)
        X.append(encode_features(inst, params, groups))
        Y.append(encode_label(inst, sched, params, groups))
    return Dataset(np.array(X), np.array(Y), params.sidecar(T, C),
                   list(sources) if sources is not None else [""] * len(X), label_method)


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, features=ds.features, labels=ds.labels, sources=np.array(ds.sources, dtype=str))
    side = {**ds.sidecar, "label_method": ds.label_method, "num_records": len(ds)}
    Path(str(path) + ".json").write_text(json.dumps(side, indent=1, sort_keys=True))


def load_dataset(path) -> Dataset:
    path = Path(path)
    side = json.loads(Path(str(path) + ".json").read_text())
    with np.load(path) as z:
        ds = Dataset(z["features"], z["labels"], {k: side[k] for k in
                                                  ("Q", "L", "V", "demand_norm", "num_slots", "num_stations")},
                     z["sources"].tolist(), side.get("label_method", ""))
    return ds
