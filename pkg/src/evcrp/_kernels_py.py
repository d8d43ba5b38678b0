"""Pure-Python admission sweep; same contract as the compiled ``_kernels``."""
import numpy as np


def sweep(cand, cand_cell, budget, opt_user, opt_station, opt_rate, slot_ptr,
          slot_idx, limit, n_evse, load, occ, assigned, tol):
    accepted = np.zeros(len(cand), dtype=np.int8)
    # python ints/floats are much faster than numpy scalars in this loop
    cand_l = cand.tolist()
    cell_l = cand_cell.tolist()
    user_l = opt_user.tolist()
    st_l = opt_station.tolist()
    rate_l = opt_rate.tolist()
    ptr_l = slot_ptr.tolist()
    for j, k in enumerate(cand_l):
        u = user_l[k]
        if assigned[u]:
            continue
        cell = cell_l[j]
        if cell >= 0 and budget[cell] <= 0:
            continue
        c = st_l[k]
        slots = slot_idx[ptr_l[k]:ptr_l[k + 1]]
        r = rate_l[k]
        if (load[slots] + r > limit[slots] + tol).any() or (occ[c, slots] + 1 > n_evse[c]).any():
            continue
        load[slots] += r
        occ[c, slots] += 1
        assigned[u] = 1
        accepted[j] = 1
        if cell >= 0:
            budget[cell] -= 1
    return accepted
