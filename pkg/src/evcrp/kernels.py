"""Selects the compiled admission kernel when available.

Set ``EVCRP_PURE_PYTHON=1`` to force the pure-Python fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("EVCRP_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def sweep(instance, cand, cand_cell=None, budget=None, state=None, backend=None):
    """Admit candidate options in order, subject to capacity, occupancy and
    per-cell budgets.

    ``cand`` holds option row indices of ``instance.arrays``; ``cand_cell``
    gives the budget cell of each candidate (``-1`` for no budget).  Users
    already admitted are skipped, so a user is taken at most once.  Returns
    ``(accepted_mask, state)`` where ``state`` is a ``(load, occ, assigned)``
    tuple that can be passed back in to continue the sweep.
    """
    arr = instance.arrays
    impl = _impl if backend is None else (_kernels_py if backend == "python" else _load_cython())
    cand = np.ascontiguousarray(cand, dtype=np.int64)
    if cand_cell is None:
        cand_cell = np.full(len(cand), -1, dtype=np.int64)
    cand_cell = np.ascontiguousarray(cand_cell, dtype=np.int64)
    if budget is None:
        budget = np.zeros(0, dtype=np.int64)
    budget = np.ascontiguousarray(budget, dtype=np.int64)
    if state is None:
        state = (np.zeros(arr.num_slots), np.zeros((arr.num_stations, arr.num_slots), dtype=np.int64),
                 np.zeros(arr.num_users, dtype=np.int8))
    load, occ, assigned = state
    accepted = impl.sweep(cand, cand_cell, budget, arr.opt_user, arr.opt_station, arr.opt_rate,
                          arr.slot_ptr, arr.slot_idx, arr.limit, arr.n_evse, load, occ, assigned, 1e-9)
    return accepted.astype(bool), state


def _load_cython():
    from . import _kernels

    return _kernels
