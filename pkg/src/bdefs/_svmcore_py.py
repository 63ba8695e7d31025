"""Pure-Python dual coordinate descent; used when the extension is not built.

Mirrors ``_svmcore.pyx`` operation for operation (same sums in the same
order), so both backends produce the same iterates up to compiler-level
floating point differences.
"""

import numpy as np


def _primal(rows, y, w, C):
    reg = 0.0
    for wj in w:
        reg += wj * wj
    loss = 0.0
    for xi, yi in zip(rows, y):
        m = 0.0
        for xij, wj in zip(xi, w):
            m += xij * wj
        m = 1.0 - yi * m
        if m > 0.0:
            loss += m
    return 0.5 * reg + C * loss


def dual_cd(X, y, C, tol, max_epochs, order):
    rows = np.asarray(X, dtype=np.float64).tolist()
    y = np.asarray(y, dtype=np.float64).tolist()
    order = [int(i) for i in order]
    n = len(rows)
    p = len(rows[0]) if n else 0
    w = [0.0] * p
    best = [0.0] * p
    alpha = [0.0] * n
    qd = []
    for xi in rows:
        s = 0.0
        for v in xi:
            s += v * v
        qd.append(s)
    best_f = C * n
    obj, raw = [], []
    converged = False
    epoch = 0
    while epoch < max_epochs:
        pg_max, pg_min = -1e300, 1e300
        for i in order:
            xi = rows[i]
            s = 0.0
            for xij, wj in zip(xi, w):
                s += xij * wj
            g = y[i] * s - 1.0
            a_old = alpha[i]
            pg = g
            if a_old == 0.0:
                if g > 0.0:
                    pg = 0.0
            elif a_old == C:
                if g < 0.0:
                    pg = 0.0
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0 and qd[i] > 0.0:
                a_new = min(max(a_old - g / qd[i], 0.0), C)
                delta = (a_new - a_old) * y[i]
                alpha[i] = a_new
                w = [wj + delta * xij for wj, xij in zip(w, xi)]
        f = _primal(rows, y, w, C)
        raw.append(f)
        if f <= best_f:
            best_f = f
            best = list(w)
        obj.append(best_f)
        epoch += 1
        if pg_max - pg_min <= tol:
            converged = True
            break
    return (np.array(best, dtype=np.float64), np.array(obj), np.array(raw),
            epoch, converged)
