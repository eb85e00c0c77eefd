"""Hot loops of the assignment solver.

Every kernel exists twice: a loop-based version compiled with numba and a
vectorized numpy version. ``USE_NUMBA`` (driven by ``CROSSASD_DISABLE_NUMBA``)
selects which one the public names point to; both stay importable for tests and
benchmarks.

Row statistics kept per row ``r`` of the face distance matrix ``fd``:
``sy = sum(fd[r])``, ``syy = sum(fd[r]**2)``, ``sxy = sum(sdc[r] * fd[r])`` where
``sdc`` is the speech distance matrix with each row centered over its included
entries (excluded diagonal entries are stored as 0). ``fd`` always has a zero
diagonal, so the same sums serve both diagonal policies; only ``n`` differs.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, optional_njit

# relative sum-of-squares below which a row counts as constant
DEGENERATE_REL = 1e-12


# --------------------------------------------------------------------- numba

@optional_njit(cache=True, nogil=True)
def _corr_scalar(sxy, sx2, sy, syy, n):
    if sx2 <= 0.0:
        return 0.0
    vy = syy - sy * sy / n
    if vy <= DEGENERATE_REL * syy or vy <= 0.0:
        return 0.0
    r = sxy / math.sqrt(sx2 * vy)
    if r > 1.0:
        return 1.0
    if r < -1.0:
        return -1.0
    return r


@optional_njit(cache=True, nogil=True)
def objective_nb(sxy, sx2, sy, syy, n):
    total = 0.0
    for r in range(sxy.shape[0]):
        total += _corr_scalar(sxy[r], sx2[r], sy[r], syy[r], n)
    return total / sxy.shape[0]


@optional_njit(cache=True, nogil=True)
def row_stats_nb(sdc, fd):
    n = fd.shape[0]
    sy = np.zeros(n)
    syy = np.zeros(n)
    sxy = np.zeros(n)
    for r in range(n):
        a = 0.0
        b = 0.0
        c = 0.0
        for j in range(n):
            v = fd[r, j]
            a += v
            b += v * v
            c += sdc[r, j] * v
        sy[r] = a
        syy[r] = b
        sxy[r] = c
    return sy, syy, sxy


@optional_njit(cache=True, nogil=True)
def cosine_distance_matrix_nb(units):
    """Pairwise ``1 - cos`` for rows that are already unit-normalized."""
    n, d = units.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(d):
                s += units[i, k] * units[j, k]
            v = 1.0 - s
            if v < 0.0:
                v = 0.0
            elif v > 2.0:
                v = 2.0
            out[i, j] = v
            out[j, i] = v
    return out


@optional_njit(cache=True, nogil=True)
def column_objective_nb(i, col, fd, sdc, sx2, sy, syy, sxy, n):
    """Objective if row/column ``i`` of ``fd`` were replaced by ``col`` (``col[i]`` ignored)."""
    size = fd.shape[0]
    a_i = 0.0
    b_i = 0.0
    c_i = 0.0
    for j in range(size):
        if j != i:
            v = col[j]
            a_i += v
            b_i += v * v
            c_i += sdc[i, j] * v
    total = 0.0
    for r in range(size):
        if r == i:
            total += _corr_scalar(c_i, sx2[i], a_i, b_i, n)
        else:
            new = col[r]
            old = fd[r, i]
            delta = new - old
            total += _corr_scalar(sxy[r] + sdc[r, i] * delta, sx2[r], sy[r] + delta,
                                  syy[r] + new * new - old * old, n)
    return total / size


@optional_njit(cache=True, nogil=True)
def apply_column_nb(i, col, fd, sdc, sy, syy, sxy):
    size = fd.shape[0]
    a_i = 0.0
    b_i = 0.0
    c_i = 0.0
    for r in range(size):
        if r == i:
            continue
        new = col[r]
        old = fd[r, i]
        delta = new - old
        sy[r] += delta
        syy[r] += new * new - old * old
        sxy[r] += sdc[r, i] * delta
        fd[r, i] = new
        fd[i, r] = new
        a_i += new
        b_i += new * new
        c_i += sdc[i, r] * new
    fd[i, i] = 0.0
    sy[i] = a_i
    syy[i] = b_i
    sxy[i] = c_i


@optional_njit(cache=True, nogil=True)
def sweep_nb(order, pinned, cand_ptr, cand_idx, tdist, assign, fd, sdc, sx2, sy, syy, sxy, n, tie_eps):
    """One coordinate-ascent epoch; returns the number of accepted moves."""
    size = fd.shape[0]
    col = np.empty(size)
    moves = 0
    for t in range(order.shape[0]):
        i = order[t]
        if pinned[i]:
            continue
        p0 = cand_ptr[i]
        p1 = cand_ptr[i + 1]
        if p1 - p0 < 2:
            continue
        best_val = objective_nb(sxy, sx2, sy, syy, n)
        best_c = assign[i]
        for p in range(p0, p1):
            c = cand_idx[p]
            if c == assign[i]:
                continue
            for j in range(size):
                col[j] = tdist[c, assign[j]]
            col[i] = 0.0
            val = column_objective_nb(i, col, fd, sdc, sx2, sy, syy, sxy, n)
            if val > best_val + tie_eps:
                best_val = val
                best_c = c
        if best_c != assign[i]:
            for j in range(size):
                col[j] = tdist[best_c, assign[j]]
            col[i] = 0.0
            apply_column_nb(i, col, fd, sdc, sy, syy, sxy)
            assign[i] = best_c
            moves += 1
    return moves


# --------------------------------------------------------------------- numpy

def _corr_np(sxy, sx2, sy, syy, n):
    vy = syy - sy * sy / n
    ok = (sx2 > 0.0) & (vy > DEGENERATE_REL * syy) & (vy > 0.0)
    den = np.sqrt(np.where(ok, sx2 * vy, 1.0))
    return np.clip(np.where(ok, sxy / den, 0.0), -1.0, 1.0)


def objective_np(sxy, sx2, sy, syy, n):
    return float(np.sum(_corr_np(sxy, sx2, sy, syy, n)) / sxy.shape[0])


def row_stats_np(sdc, fd):
    return fd.sum(axis=1), (fd * fd).sum(axis=1), (sdc * fd).sum(axis=1)


def cosine_distance_matrix_np(units):
    out = 1.0 - units @ units.T
    out = np.clip(np.triu(out, 1), 0.0, 2.0)
    return out + out.T


def columns_objective_np(i, cols, fd, sdc, sx2, sy, syy, sxy, n):
    """Vectorized :func:`column_objective_nb` over a batch of columns (one per row of ``cols``)."""
    cols = np.array(cols, dtype=np.float64, ndmin=2)
    cols[:, i] = 0.0
    old = fd[:, i]
    delta = cols - old
    SY = sy + delta
    SYY = syy + cols * cols - old * old
    SXY = sxy + sdc[:, i] * delta
    SY[:, i] = cols.sum(axis=1)
    SYY[:, i] = (cols * cols).sum(axis=1)
    SXY[:, i] = cols @ sdc[i]
    return _corr_np(SXY, sx2, SY, SYY, n).sum(axis=1) / fd.shape[0]


def column_objective_np(i, col, fd, sdc, sx2, sy, syy, sxy, n):
    return float(columns_objective_np(i, col, fd, sdc, sx2, sy, syy, sxy, n)[0])


def apply_column_np(i, col, fd, sdc, sy, syy, sxy):
    new = np.array(col, dtype=np.float64)
    new[i] = 0.0
    old = fd[:, i].copy()
    delta = new - old
    sy += delta
    syy += new * new - old * old
    sxy += sdc[:, i] * delta
    fd[:, i] = new
    fd[i, :] = new
    sy[i] = new.sum()
    syy[i] = (new * new).sum()
    sxy[i] = sdc[i] @ new


def sweep_np(order, pinned, cand_ptr, cand_idx, tdist, assign, fd, sdc, sx2, sy, syy, sxy, n, tie_eps):
    moves = 0
    for i in order:
        if pinned[i]:
            continue
        cands = cand_idx[cand_ptr[i]:cand_ptr[i + 1]]
        if cands.size < 2:
            continue
        vals = columns_objective_np(i, tdist[np.ix_(cands, assign)], fd, sdc, sx2, sy, syy, sxy, n)
        best_val = objective_np(sxy, sx2, sy, syy, n)
        cur = assign[i]
        best_c = cur
        for c, v in zip(cands, vals):
            if c != cur and v > best_val + tie_eps:
                best_val, best_c = v, c
        if best_c != cur:
            apply_column_np(i, tdist[best_c, assign], fd, sdc, sy, syy, sxy)
            assign[i] = best_c
            moves += 1
    return moves


if USE_NUMBA:
    objective = objective_nb
    row_stats = row_stats_nb
    cosine_distance_matrix = cosine_distance_matrix_nb
    column_objective = column_objective_nb
    apply_column = apply_column_nb
    sweep = sweep_nb
else:
    objective = objective_np
    row_stats = row_stats_np
    cosine_distance_matrix = cosine_distance_matrix_np
    column_objective = column_objective_np
    apply_column = apply_column_np
    sweep = sweep_np

BACKEND = "numba" if USE_NUMBA else "numpy"
