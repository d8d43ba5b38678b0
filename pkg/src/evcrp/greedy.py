"""GreedyU: admit users in descending conditional gain order."""
import time

import numpy as np

from . import kernels
from .core import Instance, Schedule, Solution, evaluate_objective


def greedy_order(instance: Instance) -> np.ndarray:
    """Option rows in GreedyU visiting order.

    Users by max-option gain descending (ties: user id), and within a user
    options by gain descending (ties: station id).
    """
    arr = instance.arrays
    if arr.num_options == 0:
        return np.zeros(0, dtype=np.int64)
    user_best = np.full(arr.num_users, -np.inf)
    np.maximum.at(user_best, arr.opt_user, arr.opt_gain)
    uid = np.asarray(arr.user_ids)[arr.opt_user]
    sid = np.asarray(arr.station_ids)[arr.opt_station]
    # lexsort: last key is primary
    return np.lexsort((sid, -arr.opt_gain, uid, -user_best[arr.opt_user])).astype(np.int64)


def greedy_u(instance: Instance, backend=None) -> Solution:
    t0 = time.perf_counter()
    order = greedy_order(instance)
    accepted, _ = kernels.sweep(instance, order, backend=backend)
    schedule = Schedule.from_options(instance, order[accepted])
    return Solution(schedule, evaluate_objective(instance, schedule), time.perf_counter() - t0, "greedy-u")
