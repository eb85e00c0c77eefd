"""Stage 2: flag segments whose speaker is likely off-screen.

A segment whose SD row correlates poorly with its FD row (score below ``tau``)
gets its face assignment removed.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Mapping

import numpy as np

from .core import OFF_SCREEN
from .identity import INCLUDE, DistanceMatrix, row_correlations
from .errors import InvalidParameter, OrderMismatch

DEFAULT_TAU = 0.1


@dataclass(frozen=True)
class SegmentScore:
    segment_id: str
    row_correlation: float


def score_segments(SD: DistanceMatrix, FD: DistanceMatrix, diagonal: str = INCLUDE) -> List[SegmentScore]:
    if tuple(SD.order) != tuple(FD.order):
        raise OrderMismatch("SD and FD rows refer to different segment orders")
    corr = row_correlations(SD, FD, diagonal)
    return [SegmentScore(sid, float(c)) for sid, c in zip(SD.order, corr)]


def classify_offscreen(scores: Iterable[SegmentScore], tau: float, state):
    """Set every segment scoring below ``tau`` to OFF_SCREEN.

    Returns ``(new_state, removed_ids)``; nothing else in ``state`` changes.
    """
    if not -1.0 <= tau <= 1.0:
        raise InvalidParameter(f"tau must lie in [-1, 1], got {tau}")
    choice = dict(state.choice)
    removed = []
    for s in scores:
        if s.row_correlation < tau and choice.get(s.segment_id) is not OFF_SCREEN:
            choice[s.segment_id] = OFF_SCREEN
            removed.append(s.segment_id)
    return replace(state, choice=choice), removed


def offscreen_roc(scores: Mapping[str, float], is_offscreen: Mapping[str, bool]):
    """Threshold sweep of the ``score < tau`` rule against off-screen labels.

    Returns rows ``(tau, tpr, fpr)`` with tau increasing; off-screen is the positive class.
    The last tau sits just above the largest score so that every segment is flagged.
    """
    ids = [s for s in scores if s in is_offscreen]
    x = np.array([scores[s] for s in ids], dtype=float)
    y = np.array([bool(is_offscreen[s]) for s in ids])
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    taus = [-1.0] + sorted(set(float(v) for v in x if v > -1.0))
    taus.append(float(np.nextafter(max(taus[-1], x.max() if x.size else -1.0), np.inf)))
    rows = []
    for tau in taus:
        flagged = x < tau
        tpr = float((flagged & y).sum() / n_pos) if n_pos else 0.0
        fpr = float((flagged & ~y).sum() / n_neg) if n_neg else 0.0
        rows.append((tau, tpr, fpr))
    return rows
