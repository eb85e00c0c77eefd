import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu

from crossasd.core import OFF_SCREEN
from crossasd.errors import EmptySample, MissingGroundTruth, NoPositives, SingleClass
from crossasd.metrics import (RankedPrediction, average_precision, confusion_metrics, mann_whitney_u,
                              mean_average_precision, per_identity_f1, pr_curve, ranked_units, roc_auc,
                              u_distribution)


def _ranked(labels, scores=None):
    scores = scores if scores is not None else list(range(len(labels), 0, -1))
    return [RankedPrediction(f"u{i}", float(s), bool(l)) for i, (l, s) in enumerate(zip(labels, scores))]


def test_perfect_predictions():
    gt = {"a": "t1", "b": "t2", "c": OFF_SCREEN}
    r = confusion_metrics(dict(gt), gt)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    assert (r.tp, r.fp, r.fn, r.tn) == (2, 0, 0, 1)


def test_counts_formula():
    gt = {"a": "t1", "b": "t2", "c": OFF_SCREEN, "d": "t4"}
    pred = {"a": "t1", "b": "t2", "c": "t3", "d": OFF_SCREEN}
    r = confusion_metrics(pred, gt)
    assert (r.tp, r.fp, r.fn) == (2, 1, 1)
    assert r.precision == pytest.approx(2 / 3) and r.recall == pytest.approx(2 / 3) and r.f1 == pytest.approx(2 / 3)


def test_wrong_track_is_fp_and_fn():
    r = confusion_metrics({"a": "t2"}, {"a": "t1"})
    assert (r.tp, r.fp, r.fn) == (0, 1, 1)


def test_all_offscreen_predictions_warn():
    with pytest.warns(RuntimeWarning):
        r = confusion_metrics({"a": OFF_SCREEN, "b": OFF_SCREEN}, {"a": "t1", "b": "t2"})
    assert r.precision == 0 and r.recall == 0 and r.f1 == 0 and r.warnings


def test_missing_ground_truth():
    with pytest.raises(MissingGroundTruth):
        confusion_metrics({"zz": "t1"}, {"a": "t1"})


def test_weighted_counts():
    r = confusion_metrics({"a": "t1", "b": "t9"}, {"a": "t1", "b": "t2"}, track_weights={"t1": 10, "t9": 2, "t2": 3})
    assert (r.tp, r.fp, r.fn) == (10, 2, 3)


def test_f1_invariant_under_relabeling():
    gt = {"a": "t1", "b": "t2", "c": OFF_SCREEN, "d": "t4"}
    pred = {"a": "t1", "b": "t3", "c": "t5", "d": "t4"}
    ren = {f"t{i}": f"x{9 - i}" for i in range(1, 6)}
    relabel = lambda m: {s: (ren[t] if t else t) for s, t in m.items()}
    assert confusion_metrics(pred, gt).f1 == confusion_metrics(relabel(pred), relabel(gt)).f1


def test_per_identity_f1():
    gt = {"a": "t1", "b": "t2", "c": "t3"}
    pred = {"a": "t1", "b": "t3", "c": "t3"}
    out = per_identity_f1(pred, gt, {"t1": 0, "t2": 1, "t3": 2})
    assert out[0] == 1.0 and out[1] == 0.0 and out[2] == pytest.approx(2 / 3)


def test_ap_examples():
    assert average_precision(_ranked([1, 0, 1])) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision(_ranked([1, 0, 0, 0, 0])) == 1.0
    with pytest.raises(NoPositives):
        average_precision(_ranked([0, 0]))


def test_ap_tie_breaks_by_unit_id():
    ranked = [RankedPrediction("b", 0.5, True), RankedPrediction("a", 0.5, False)]
    assert average_precision(ranked) == 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50).map(lambda v: v / 10), st.booleans()), min_size=1, max_size=30))
def test_ap_invariant_under_monotone_transform(items):
    if not any(l for _, l in items):
        return
    a = [RankedPrediction(f"u{i:02d}", s, l) for i, (s, l) in enumerate(items)]
    b = [RankedPrediction(r.unit_id, math.atan(r.score) * 3 + 1, r.label) for r in a]
    ap = average_precision(a)
    assert 0 <= ap <= 1
    assert average_precision(b) == pytest.approx(ap, abs=1e-12)


def test_pr_curve_and_map():
    curve = pr_curve(_ranked([1, 0, 1]))
    assert curve[0] == (3.0, 1.0, 0.5) and curve[-1] == (1.0, 2 / 3, 1.0)
    m, per = mean_average_precision({"v1": _ranked([1, 0, 1]), "v2": _ranked([1]), "v3": _ranked([0])})
    assert per == {"v1": pytest.approx(5 / 6), "v2": 1.0}
    assert m == pytest.approx((5 / 6 + 1) / 2)


def test_ranked_units_sentinel():
    units = ranked_units({"s1": "t1", "s2": OFF_SCREEN}, {"s1": 0.7, "s2": 0.9}, {"s1": "t1", "s2": "t3"})
    by = {u.unit_id: u for u in units}
    assert by["s1|t1"].score == 0.7 and by["s1|t1"].label
    assert by["s2|t3"].score == -1.0 and by["s2|t3"].label


def test_roc_examples():
    auc, pts = roc_auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])
    assert auc == 1.0 and pts[0] == (math.inf, 0.0, 0.0) and pts[-1][1:] == (1.0, 1.0)
    assert roc_auc([0.5] * 6, [1, 0, 1, 0, 0, 1])[0] == 0.5
    with pytest.raises(SingleClass):
        roc_auc([1, 2], [1, 1])


def test_mann_whitney_examples():
    r = mann_whitney_u([1, 2], [3, 4], method="exact")
    assert r.statistic == 0 and r.pvalue == pytest.approx(2 / 6, abs=1e-15)
    same = [1.0, 2.0, 3.0, 5.0]
    r = mann_whitney_u(same, same)
    assert r.statistic == 8 and r.pvalue == pytest.approx(1.0)
    with pytest.raises(EmptySample):
        mann_whitney_u([], [1])


def brute_force_mw_p(x, y):
    """Two-sided permutation p-value by enumerating every split of the pooled sample."""
    from scipy.stats import rankdata
    pooled = np.r_[x, y]
    ranks = rankdata(pooled)
    n1, n2 = len(x), len(y)
    obs = abs(2 * (ranks[:n1].sum() - n1 * (n1 + 1) / 2) - n1 * n2)
    hits = total = 0
    for idx in itertools.combinations(range(n1 + n2), n1):
        u2 = 2 * (ranks[list(idx)].sum() - n1 * (n1 + 1) / 2)
        total += 1
        hits += abs(u2 - n1 * n2) >= obs - 1e-9
    return hits / total


@pytest.mark.parametrize("seed", range(12))
def test_exact_p_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = rng.integers(1, 8, size=2)
    x = rng.integers(0, 6, n1).astype(float)  # small integers force ties
    y = rng.integers(0, 6, n2).astype(float)
    assert mann_whitney_u(x, y, "exact").pvalue == pytest.approx(brute_force_mw_p(x, y), abs=1e-12)


def test_matches_scipy_without_ties():
    rng = np.random.default_rng(1)
    for n1, n2 in [(3, 5), (8, 9), (15, 20), (30, 40)]:
        x, y = rng.standard_normal(n1), rng.standard_normal(n2) + 0.5
        ours = mann_whitney_u(x, y, "exact" if n1 * n2 <= 400 else "asymptotic")
        ref = mannwhitneyu(x, y, alternative="two-sided", method="exact" if n1 * n2 <= 400 else "asymptotic")
        assert ours.statistic == ref.statistic
        assert ours.pvalue == pytest.approx(ref.pvalue, rel=1e-9)


def test_u_distribution_counts():
    counts = u_distribution([2, 4, 6, 8], 2)
    assert counts.sum() == 6
    # doubled sums 6,8,10,10,12,14
    assert counts[6] == 1 and counts[10] == 2 and counts[14] == 1


def test_auc_equals_normalized_u():
    rng = np.random.default_rng(9)
    for _ in range(30):
        s = np.round(rng.standard_normal(25), 1)
        y = rng.random(25) < 0.4
        if y.all() or not y.any():
            continue
        auc, _ = roc_auc(s, y)
        u = mann_whitney_u(s[y], s[~y]).statistic
        assert auc == pytest.approx(u / (y.sum() * (~y).sum()), abs=1e-12)
