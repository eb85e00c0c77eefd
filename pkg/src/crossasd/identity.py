"""Identity geometry: cosine distances, distance matrices and the row-correlation objective.

The speech distance matrix (SD) holds cosine distances between speech-segment
embeddings; the face distance matrix (FD) holds distances between the faces
currently assigned to those segments, in the same row order. The objective is the
mean over rows of the Pearson correlation between ``SD[i]`` and ``FD[i]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionMismatch, LengthMismatch, OrderMismatch, TooFewElements, ZeroNorm

INCLUDE = "include"
EXCLUDE = "exclude"
DIAGONAL_POLICIES = (INCLUDE, EXCLUDE)


def _check_policy(diagonal):
    if diagonal not in DIAGONAL_POLICIES:
        raise ValueError(f"diagonal policy must be one of {DIAGONAL_POLICIES}, got {diagonal!r}")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    order: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"distance matrix must be square, got shape {v.shape}")
        if len(self.order) != v.shape[0]:
            raise OrderMismatch(f"order has {len(self.order)} ids for a {v.shape[0]}x{v.shape[0]} matrix")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "order", tuple(self.order))

    def __len__(self):
        return len(self.order)

    def row(self, i) -> np.ndarray:
        return self.values[i]

    def to_csv(self, path) -> None:
        header = ",".join(["id"] + [str(o) for o in self.order])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for sid, row in zip(self.order, self.values):
                fh.write(str(sid) + "," + ",".join(repr(float(x)) for x in row) + "\n")


def cosine_distance(u, v) -> float:
    """``1 - cos(u, v)``, clipped to [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"embedding dimensions differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if not (nu > 0 and nv > 0):
        raise ZeroNorm("cosine distance undefined for a zero-norm vector")
    return float(min(2.0, max(0.0, 1.0 - float(u @ v) / (nu * nv))))


def unit_rows(embeddings) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise DimensionMismatch("embeddings must share one dimension")
    norms = np.linalg.norm(e, axis=1)
    if not np.all(norms > 0):
        raise ZeroNorm("cosine distance undefined for a zero-norm vector")
    return e / norms[:, None]


def build_distance_matrix(embeddings: Sequence, order: Optional[Sequence] = None) -> DistanceMatrix:
    """Pairwise cosine distance matrix with an exact zero diagonal."""
    try:
        e = np.asarray(embeddings, dtype=np.float64)
    except ValueError:
        raise DimensionMismatch("embeddings must share one dimension") from None
    if e.ndim != 2:
        raise DimensionMismatch("embeddings must share one dimension")
    if e.shape[0] < 2:
        raise TooFewElements(f"need at least 2 embeddings, got {e.shape[0]}")
    if order is None:
        order = range(e.shape[0])
    return DistanceMatrix(kernels.cosine_distance_matrix(unit_rows(e)), tuple(order))


def similarity_matrix(embeddings) -> np.ndarray:
    """Cosine similarity counterpart of :func:`build_distance_matrix` (diagonal 1)."""
    u = unit_rows(embeddings)
    s = u @ u.T
    np.fill_diagonal(s, 1.0)
    return s


def _pearson(x, y):
    # two-pass centered form; a constant vector correlates 0 with anything
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx <= kernels.DEGENERATE_REL * float(x @ x) or syy <= kernels.DEGENERATE_REL * float(y @ y):
        return 0.0
    if sxx <= 0.0 or syy <= 0.0:
        return 0.0
    return float(np.clip((xc @ yc) / np.sqrt(sxx * syy), -1.0, 1.0))


def row_pearson(x, y, exclude_diag_index: Optional[int] = None) -> float:
    """Sample Pearson correlation of two rows, optionally dropping one position."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"rows differ in length: {x.shape} vs {y.shape}")
    if exclude_diag_index is not None:
        keep = np.ones(x.size, dtype=bool)
        keep[exclude_diag_index] = False
        x, y = x[keep], y[keep]
    if x.size < 2:
        raise LengthMismatch("need at least 2 entries to correlate")
    return _pearson(x, y)


def _matrix(m):
    if isinstance(m, DistanceMatrix):
        return m.values, m.order
    a = np.asarray(m, dtype=np.float64)
    return a, None


def row_correlations(SD, FD, diagonal: str = INCLUDE) -> np.ndarray:
    """Per-row Pearson correlations between matched rows of two matrices."""
    _check_policy(diagonal)
    sd, sd_order = _matrix(SD)
    fd, fd_order = _matrix(FD)
    if sd.shape != fd.shape:
        raise OrderMismatch(f"matrix shapes differ: {sd.shape} vs {fd.shape}")
    if sd_order is not None and fd_order is not None and sd_order != fd_order:
        raise OrderMismatch("SD and FD rows refer to different segment orders")
    out = np.empty(sd.shape[0])
    for i in range(sd.shape[0]):
        out[i] = row_pearson(sd[i], fd[i], i if diagonal == EXCLUDE else None)
    return out


def corr_objective(SD, FD, diagonal: str = INCLUDE) -> float:
    """Mean of the row-wise correlations; 1.0 when FD reproduces SD."""
    return float(np.mean(row_correlations(SD, FD, diagonal)))


def centered_rows(sd: np.ndarray, diagonal: str = INCLUDE):
    """Row-centered SD for the incremental kernels plus per-row sums of squares.

    Excluded diagonal entries are zeroed, and a constant row gets a zero sum of
    squares so that its correlation evaluates to 0.
    """
    _check_policy(diagonal)
    sd = np.asarray(sd, dtype=np.float64)
    n = sd.shape[0]
    if diagonal == EXCLUDE:
        mask = ~np.eye(n, dtype=bool)
        means = np.where(mask, sd, 0.0).sum(axis=1) / (n - 1)
        sdc = np.where(mask, sd - means[:, None], 0.0)
        raw = np.where(mask, sd * sd, 0.0).sum(axis=1)
        n_eff = n - 1
    else:
        sdc = sd - sd.mean(axis=1, keepdims=True)
        raw = (sd * sd).sum(axis=1)
        n_eff = n
    sx2 = (sdc * sdc).sum(axis=1)
    sx2 = np.where((sx2 > kernels.DEGENERATE_REL * raw) & (sx2 > 0.0), sx2, 0.0)
    return np.ascontiguousarray(sdc), sx2, float(n_eff)


def save_matrix(path, matrix: DistanceMatrix) -> None:
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, matrix.values)
    else:
        matrix.to_csv(path)
