"""Pure numpy fallbacks for the routines in ``_ckernels.pyx``.

Operation order matches the compiled versions so both backends produce
bit-identical output for the scans.
"""

import numpy as np


def scan_scalar(coef, offs, x0):
    n, r = coef.shape
    out = np.empty((n, r), dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    for i in range(n):
        x = coef[i] * x + offs[i]
        out[i] = x
    return out


def scan_matrix(A, offs, x0):
    n, r, d = offs.shape
    out = np.empty((n, r, d), dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    for i in range(n):
        acc = np.zeros((r, d))
        for b in range(d):
            acc = acc + A[None, :, b] * x[:, b, None]
        x = acc + offs[i]
        out[i] = x
    return out


def grid_search(dist, c, vals):
    m = c.shape[0]
    scale = max(abs(vals[0]), abs(vals[-1]))
    tail = np.zeros(m + 1)
    for i in range(m - 1, -1, -1):
        tail[i] = tail[i + 1] + abs(c[i]) * scale
    best = [-1e300]
    choice = np.zeros(max(m, 1), dtype=np.intp)

    def feasible(level):
        prev = vals[choice[:level]]
        ok = np.abs(vals[:, None] - prev[None, :]) <= dist[level, :level][None, :] + 1e-12
        return np.all(ok, axis=1)

    def dfs(level, partial):
        if level == m:
            best[0] = max(best[0], partial)
            return
        if partial + tail[level] <= best[0]:
            return
        ok = feasible(level)
        if level == m - 1:
            cand = partial + c[level] * vals[ok]
            if cand.size:
                best[0] = max(best[0], float(cand.max()))
            return
        for j in np.flatnonzero(ok):
            choice[level] = j
            dfs(level + 1, partial + c[level] * vals[j])

    dfs(0, 0.0)
    return best[0]
