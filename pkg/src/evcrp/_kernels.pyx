# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled admission sweep used by GreedyU and the post-processing routine."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def sweep(const cnp.int64_t[:] cand,
          const cnp.int64_t[:] cand_cell,
          cnp.int64_t[:] budget,
          const cnp.int64_t[:] opt_user,
          const cnp.int64_t[:] opt_station,
          const double[:] opt_rate,
          const cnp.int64_t[:] slot_ptr,
          const cnp.int64_t[:] slot_idx,
          const double[:] limit,
          const cnp.int64_t[:] n_evse,
          double[:] load,
          cnp.int64_t[:, :] occ,
          cnp.int8_t[:] assigned,
          double tol):
    cdef Py_ssize_t n = cand.shape[0]
    cdef Py_ssize_t j, p, k, u, c, t, cell
    cdef double r
    cdef bint ok
    accepted_arr = np.zeros(n, dtype=np.int8)
    cdef cnp.int8_t[:] accepted = accepted_arr
    for j in range(n):
        k = cand[j]
        u = opt_user[k]
        if assigned[u]:
            continue
        cell = cand_cell[j]
        if cell >= 0 and budget[cell] <= 0:
            continue
        c = opt_station[k]
        r = opt_rate[k]
        ok = True
        for p in range(slot_ptr[k], slot_ptr[k + 1]):
            t = slot_idx[p]
            if load[t] + r > limit[t] + tol or occ[c, t] + 1 > n_evse[c]:
                ok = False
                break
        if not ok:
            continue
        for p in range(slot_ptr[k], slot_ptr[k + 1]):
            t = slot_idx[p]
            load[t] += r
            occ[c, t] += 1
        assigned[u] = 1
        accepted[j] = 1
        if cell >= 0:
            budget[cell] -= 1
    return accepted_arr
