# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dual coordinate descent for the L2-regularized hinge-loss SVM."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef double _primal(const double[:, ::1] X, const double[:] y, const double[:] w,
                    double C) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j
    cdef double reg = 0.0, loss = 0.0, m
    for j in range(p):
        reg += w[j] * w[j]
    for i in range(n):
        m = 0.0
        for j in range(p):
            m += X[i, j] * w[j]
        m = 1.0 - y[i] * m
        if m > 0.0:
            loss += m
    return 0.5 * reg + C * loss


def dual_cd(const double[:, ::1] X, const double[:] y, double C, double tol,
            int max_epochs, const long[:] order):
    """Return ``(w_best, objectives, raw_objectives, epochs_run, converged)``.

    ``X`` already carries the constant bias column. ``objectives[e]`` is the
    primal objective of the iterate kept after epoch ``e``; ``w_best`` is the
    lowest-objective iterate seen; ``raw_objectives[e]`` is the objective of
    the running iterate itself.
    """
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j, t
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w_arr = np.zeros(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] best_arr = np.zeros(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] alpha_arr = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] qd_arr = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] obj_arr = np.empty(max_epochs)
    cdef double[:] w = w_arr
    cdef double[:] best = best_arr
    cdef double[:] alpha = alpha_arr
    cdef double[:] qd = qd_arr
    cdef double[:] obj = obj_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] raw_arr = np.empty(max_epochs)
    cdef double[:] raw = raw_arr
    cdef double g, pg, a_old, a_new, delta, s, pg_max, pg_min, f, best_f
    cdef int epoch = 0
    cdef bint converged = False

    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * X[i, j]
        qd[i] = s
    best_f = C * n  # objective at w = 0

    with nogil:
        while epoch < max_epochs:
            pg_max = -1e300
            pg_min = 1e300
            for t in range(n):
                i = order[t]
                s = 0.0
                for j in range(p):
                    s += X[i, j] * w[j]
                g = y[i] * s - 1.0
                a_old = alpha[i]
                pg = g
                if a_old == 0.0:
                    if g > 0.0:
                        pg = 0.0
                elif a_old == C:
                    if g < 0.0:
                        pg = 0.0
                if pg > pg_max:
                    pg_max = pg
                if pg < pg_min:
                    pg_min = pg
                if pg != 0.0 and qd[i] > 0.0:
                    a_new = a_old - g / qd[i]
                    if a_new < 0.0:
                        a_new = 0.0
                    elif a_new > C:
                        a_new = C
                    delta = (a_new - a_old) * y[i]
                    alpha[i] = a_new
                    for j in range(p):
                        w[j] += delta * X[i, j]
            f = _primal(X, y, w, C)
            raw[epoch] = f
            if f <= best_f:
                best_f = f
                for j in range(p):
                    best[j] = w[j]
            obj[epoch] = best_f
            epoch += 1
            if pg_max - pg_min <= tol:
                converged = True
                break

    return best_arr, obj_arr[:epoch].copy(), raw_arr[:epoch].copy(), epoch, converged
