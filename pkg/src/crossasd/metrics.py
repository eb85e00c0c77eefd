"""Detection metrics: P/R/F1, average precision, ROC / auROC and the Mann-Whitney U test."""
from __future__ import annotations

import math
import warnings
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .core import OFF_SCREEN
from .errors import EmptySample, MissingGroundTruth, NoPositives, SingleClass

EXACT_MAX_PRODUCT = 400


@dataclass
class EvaluationReport:
    precision: float
    recall: float
    f1: float
    tp: float
    fp: float
    fn: float
    tn: float
    mAP: Optional[float] = None
    ap_per_video: Dict[str, float] = field(default_factory=dict)
    auROC: Optional[float] = None
    mann_whitney: Optional[dict] = None
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _choice(predictions) -> Mapping[str, Optional[str]]:
    return getattr(predictions, "choice", predictions)


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def confusion_metrics(predictions, ground_truth: Mapping[str, Optional[str]], candidates=None,
                      track_weights: Optional[Mapping[str, float]] = None) -> EvaluationReport:
    """Count (segment, track) outcomes and derive precision, recall and F1.

    A wrong track is both a false positive and a false negative. Ground-truth
    segments missing from ``predictions`` count as predicted OFF_SCREEN.
    ``track_weights`` (e.g. frame counts) weight each unit by its track.
    """
    pred = _choice(predictions)
    missing = [s for s in pred if s not in ground_truth]
    if missing:
        raise MissingGroundTruth(f"no ground truth for {len(missing)} segment(s), e.g. {missing[0]!r}")
    if candidates is not None:
        for sid, tid in pred.items():
            if tid is not OFF_SCREEN and (sid not in candidates or tid not in candidates[sid]):
                raise MissingGroundTruth(f"prediction {sid!r} -> {tid!r} is not a candidate pair")
    w = (lambda t: float(track_weights.get(t, 1.0))) if track_weights else (lambda t: 1.0)
    tp = fp = fn = tn = 0.0
    for sid, g in ground_truth.items():
        p = pred.get(sid, OFF_SCREEN)
        if p is not OFF_SCREEN and p == g:
            tp += w(p)
            continue
        if p is not OFF_SCREEN:
            fp += w(p)
        if g is not OFF_SCREEN:
            fn += w(g)
        if p is OFF_SCREEN and g is OFF_SCREEN:
            tn += 1.0
    notes = []
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        notes.append("no positive predictions: precision undefined, reported as 0")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvaluationReport(precision, recall, _f1(precision, recall), tp, fp, fn, tn, warnings=notes)


def per_identity_f1(predictions, ground_truth: Mapping[str, Optional[str]],
                    identity_of_track: Mapping[str, object]) -> Dict[object, float]:
    """F1 per character, attributing each predicted or true track to the character it shows."""
    pred = _choice(predictions)
    counts: Dict[object, list] = {}
    for sid, g in ground_truth.items():
        p = pred.get(sid, OFF_SCREEN)
        if p is not OFF_SCREEN:
            c = counts.setdefault(identity_of_track[p], [0, 0, 0])
            c[0 if p == g else 1] += 1
        if g is not OFF_SCREEN and p != g:
            counts.setdefault(identity_of_track[g], [0, 0, 0])[2] += 1
        elif g is not OFF_SCREEN:
            counts.setdefault(identity_of_track[g], [0, 0, 0])
    out = {}
    for ident, (tp, fp, fn) in counts.items():
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out[ident] = _f1(prec, rec)
    return out


# ------------------------------------------------------------ ranking / AP

@dataclass(frozen=True)
class RankedPrediction:
    unit_id: str
    score: float
    label: bool
    weight: float = 1.0


def _ranked_order(ranked: Sequence[RankedPrediction]):
    return sorted(ranked, key=lambda r: (-r.score, r.unit_id))


def average_precision(ranked: Iterable[RankedPrediction]) -> float:
    """Non-interpolated AP: sum over positive ranks of precision@k times the recall step."""
    items = _ranked_order(list(ranked))
    if not any(r.label for r in items):
        raise NoPositives("average precision needs at least one positive")
    for r in items:
        if not math.isfinite(r.score):
            raise ValueError(f"non-finite score for unit {r.unit_id!r}")
    if all(float(r.weight).is_integer() for r in items):
        # integer weights (unit or frame counts): exact rational sum, so e.g. (1,0,1) gives 5/6 exactly
        tp = seen = 0
        total = Fraction(0)
        for r in items:
            seen += int(r.weight)
            if r.label:
                tp += int(r.weight)
                total += Fraction(tp * int(r.weight), seen)
        return float(total / tp)
    w = np.array([r.weight for r in items], dtype=float)
    lab = np.array([r.label for r in items], dtype=bool)
    tp_cum = np.cumsum(np.where(lab, w, 0.0))
    prec = tp_cum / np.cumsum(w)
    return float(np.sum(prec[lab] * w[lab]) / tp_cum[-1])


def pr_curve(ranked: Iterable[RankedPrediction]) -> List[Tuple[float, float, float]]:
    """``(threshold, precision, recall)`` at every distinct score, highest first."""
    items = _ranked_order(list(ranked))
    total = sum(r.weight for r in items if r.label)
    out = []
    tp = seen = 0.0
    for k, r in enumerate(items):
        seen += r.weight
        tp += r.weight if r.label else 0.0
        if k + 1 == len(items) or items[k + 1].score != r.score:
            out.append((r.score, tp / seen if seen else 0.0, tp / total if total else 0.0))
    return out


def mean_average_precision(groups: Mapping[str, Sequence[RankedPrediction]]) -> Tuple[float, Dict[str, float]]:
    """Unweighted mean of per-video AP; videos without positives are skipped."""
    per = {}
    for video, ranked in groups.items():
        try:
            per[video] = average_precision(ranked)
        except NoPositives:
            continue
    if not per:
        raise NoPositives("no video has a positive unit")
    return float(np.mean(list(per.values()))), per


def ranked_units(predicted: Mapping[str, Optional[str]], scores: Mapping[str, float],
                 ground_truth: Mapping[str, Optional[str]], candidates=None,
                 track_weights: Optional[Mapping[str, float]] = None) -> List[RankedPrediction]:
    """Score every (segment, track) unit: the segment's row correlation for its predicted
    track, -1 for every other candidate track."""
    out = []
    segs = list(candidates.entries) if candidates is not None else sorted(set(predicted) | set(ground_truth))
    for sid in segs:
        if candidates is not None:
            tracks = list(candidates[sid])
        else:
            tracks = sorted({t for t in (predicted.get(sid), ground_truth.get(sid)) if t is not None})
        p = predicted.get(sid)
        g = ground_truth.get(sid)
        for t in tracks:
            score = float(scores[sid]) if (p == t and sid in scores) else -1.0
            wt = float(track_weights.get(t, 1.0)) if track_weights else 1.0
            out.append(RankedPrediction(f"{sid}|{t}", score, g == t, wt))
    return out


# --------------------------------------------------------------------- ROC

def roc_auc(scores, labels):
    """Area under the ROC curve by the trapezoidal rule over all distinct thresholds.

    Returns ``(auc, points)`` with points ``(threshold, fpr, tpr)`` starting at (inf, 0, 0);
    higher scores mean "positive". Tied scores enter as one diagonal step (worth 1/2).
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both positive and negative labels")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = [(math.inf, 0.0, 0.0)] + [(float(t), float(f), float(p)) for t, f, p in zip(s[last], fpr[1:], tpr[1:])]
    return auc, points


# ------------------------------------------------------------ Mann-Whitney

@dataclass(frozen=True)
class MannWhitneyResult:
    statistic: float
    pvalue: float
    method: str


def mann_whitney_u(x, y, method: str = "auto") -> MannWhitneyResult:
    """U statistic of ``x`` (pairs x > y, ties count 1/2) with a two-sided p-value.

    ``method`` is ``"exact"`` (distribution of midrank sums enumerated by dynamic
    programming, valid with ties), ``"asymptotic"`` (normal approximation with tie
    and continuity correction) or ``"auto"`` (exact when ``n1 * n2 <= 400``).
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise EmptySample("both samples must be non-empty")
    ranks = rankdata(np.r_[x, y])
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    if method == "auto":
        method = "exact" if n1 * n2 <= EXACT_MAX_PRODUCT else "asymptotic"
    if method == "exact":
        p = _exact_p(ranks, n1, n2, u)
    elif method == "asymptotic":
        p = _normal_p(ranks, n1, n2, u)
    else:
        raise ValueError(f"unknown method {method!r}")
    return MannWhitneyResult(u, p, method)


def _normal_p(ranks, n1, n2, u):
    n = n1 + n2
    _, counts = np.unique(ranks, return_counts=True)
    ties = float(np.sum(counts ** 3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - ties / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return 1.0
    z = (abs(u - n1 * n2 / 2.0) - 0.5) / math.sqrt(var)
    if z <= 0:
        return 1.0
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def u_distribution(doubled_ranks, m: int) -> np.ndarray:
    """Counts of size-``m`` subsets by the sum of their (integer) doubled ranks."""
    r = np.asarray(doubled_ranks, dtype=np.int64)
    top = int(np.sort(r)[::-1][:m].sum())
    dp = np.zeros((m + 1, top + 1))
    dp[0, 0] = 1.0
    for v in r:
        if v > top:
            continue
        dp[1:, v:] += dp[:-1, :top + 1 - v].copy()
    return dp[m]


def _exact_p(ranks, n1, n2, u):
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    # enumerate over the smaller sample; U of y is n1*n2 - U of x
    m = min(n1, n2)
    counts = u_distribution(doubled, m)
    sums = np.arange(counts.size)
    two_u = sums - m * (m + 1)  # 2U for the enumerated sample
    center = n1 * n2
    obs = abs(round(2 * u) - center)
    mask = (counts > 0) & (np.abs(two_u - center) >= obs)
    return float(min(1.0, counts[mask].sum() / counts.sum()))
