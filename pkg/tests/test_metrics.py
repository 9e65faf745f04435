import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from garment_augkit.core import CategoryDistribution, Landmark, LandmarkSet, ShapeError, Visibility
from garment_augkit.dataio import mask_categories
from garment_augkit.metrics import (
    MISSED_DETECTION_ERROR,
    EmptyEvaluationError,
    EvalSample,
    build_report,
    normalized_error,
    topk_accuracy,
    topk_ranking,
)

NAMES = ("a", "b", "c", "d")


def full_set(points):
    return LandmarkSet(tuple(Landmark(x, y) for x, y in points))


def dist(*p):
    return CategoryDistribution(NAMES, np.array(p, dtype=float))


def test_ne_examples():
    gt = full_set([(10 * i, 5 * i) for i in range(8)])
    assert normalized_error(gt, gt, 224, 224) == [0.0] * 8
    pred = gt.map(lambda lm: Landmark(lm.x + 22.4, lm.y, lm.visibility))
    assert all(abs(e - 0.1) < 1e-15 for e in normalized_error(pred, gt, 224, 224))


def test_ne_absent_and_missed():
    gt = LandmarkSet.from_dict({"L.Collar": Landmark(1, 1), "R.Collar": Landmark(2, 2),
                                "L.Hem": Landmark(3, 3, Visibility.OUT_OF_FRAME)})
    pred = LandmarkSet.from_dict({"L.Collar": Landmark(1, 1), "L.Sleeve": Landmark(9, 9)})
    ne = normalized_error(pred, gt, 100, 50)
    assert ne[0] == 0.0
    assert ne[1] == MISSED_DETECTION_ERROR
    assert ne[2] is None and ne[6] is None


def test_ne_against_formula():
    g = np.random.default_rng(0)
    for _ in range(100):
        a, b = g.uniform(0, 300, (8, 2)), g.uniform(0, 300, (8, 2))
        w, h = int(g.integers(50, 400)), int(g.integers(50, 400))
        ne = normalized_error(full_set(a), full_set(b), w, h)
        for k in range(8):
            want = math.sqrt(((a[k, 0] - b[k, 0]) / w) ** 2 + ((a[k, 1] - b[k, 1]) / h) ** 2)
            assert abs(ne[k] - want) < 1e-12
            assert (ne[k] > 0) == (tuple(a[k]) != tuple(b[k]))


def test_topk_examples():
    preds = [dist(0.1, 0.2, 0.3, 0.4)] * 3
    assert topk_accuracy(preds, ["a", "b", "c"], 4) == 100.0
    one_hot = [dist(1, 0, 0, 0), dist(0, 0, 1, 0)]
    assert topk_accuracy(one_hot, ["a", "c"], 1) == 100.0


def test_topk_hand_fixture():
    # rankings: s0 d>c>b>a, s1 a>c>b>d, s2 b=c=d tie resolved by index
    preds = [dist(0.1, 0.2, 0.3, 0.4), dist(0.5, 0.2, 0.3, 0.0), dist(0.1, 0.3, 0.3, 0.3)]
    labels = ["a", "d", "d"]
    assert topk_ranking(preds[2], 3) == ["b", "c", "d"]
    assert topk_ranking(preds[2], 2) == ["b", "c"]
    # label ranks: s0 -> 4, s1 -> 4, s2 -> 3
    assert topk_accuracy(preds, labels, 1) == 0.0
    assert topk_accuracy(preds, labels, 2) == 0.0
    assert topk_accuracy(preds, labels, 3) == pytest.approx(100 / 3, rel=1e-15)
    assert topk_accuracy(preds, labels, 4) == 100.0


def test_topk_set_label():
    assert topk_accuracy([dist(0.1, 0.6, 0.2, 0.1)], [{"c", "b"}], 1) == 100.0
    assert topk_accuracy([dist(0.1, 0.6, 0.2, 0.1)], [{"c", "d"}], 1) == 0.0


def test_topk_errors():
    with pytest.raises(ShapeError):
        topk_accuracy([dist(1, 0, 0, 0)], ["a", "b"], 1)
    with pytest.raises(ShapeError):
        topk_accuracy([dist(1, 0, 0, 0)], ["a"], 5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_topk_monotone(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(2, 12))
    names = tuple(f"c{i}" for i in range(n))
    preds = []
    for _ in range(int(g.integers(1, 20))):
        p = np.round(g.random(n), 1) + 1e-3  # rounding creates ties
        preds.append(CategoryDistribution(names, p / p.sum()))
    labels = [names[int(g.integers(0, n))] for _ in preds]
    accs = [topk_accuracy(preds, labels, k) for k in range(1, n + 1)]
    assert all(x <= y for x, y in zip(accs, accs[1:]))
    assert accs[-1] == 100.0


def test_masking_never_hurts_allowed_labels():
    g = np.random.default_rng(3)
    names = tuple(f"c{i}" for i in range(10))
    allowed = set(names[:4])
    for _ in range(200):
        p = g.random(10)
        d = CategoryDistribution(names, p / p.sum())
        label = names[int(g.integers(0, 4))]
        for k in (1, 2, 3):
            assert topk_accuracy([mask_categories(d, allowed)], [label], k) >= topk_accuracy([d], [label], k)


def test_report_single_perfect_sample():
    gt = full_set([(i, i) for i in range(8)])
    r = build_report([EvalSample(gt, gt, scores=dist(0, 1, 0, 0), label="b")], (1, 3))
    assert r.per_landmark == [0.0] * 8 and r.average == 0.0
    assert r.overall_topk == {1: 100.0, 3: 100.0}
    assert r.per_category_topk == {"b": {1: 100.0, 3: 100.0}}


def test_report_slot_mean():
    gt = LandmarkSet.from_dict({"L.Hem": Landmark(0, 0)})
    p1 = LandmarkSet.from_dict({"L.Hem": Landmark(10, 0)})
    p2 = LandmarkSet.from_dict({"L.Hem": Landmark(30, 0)})
    r = build_report([EvalSample(p1, gt, 100, 100), EvalSample(p2, gt, 100, 100)], k_list=())
    assert r.per_landmark[6] == pytest.approx(0.2, abs=1e-15)
    assert r.average == r.per_landmark[6]
    assert r.per_landmark[0] is None


def independent_aggregate(samples, k_list):
    """Second implementation: plain dict bookkeeping, no shared helpers."""
    per = {k: [] for k in range(8)}
    for s in samples:
        for k in range(8):
            g, p = s.gt[k], s.pred[k]
            if g is None or g.visibility == Visibility.OUT_OF_FRAME:
                continue
            if p is None or p.visibility == Visibility.OUT_OF_FRAME:
                per[k].append(math.sqrt(2))
            else:
                per[k].append(math.hypot((p.x - g.x) / s.width, (p.y - g.y) / s.height))
    means = [sum(v) / len(v) if v else None for v in per.values()]
    present = [m for m in means if m is not None]
    acc = {}
    for k in k_list:
        hits = 0
        for s in samples:
            ranked = sorted(range(len(s.scores.names)), key=lambda i: (-s.scores.probabilities[i], i))[:k]
            hits += s.label in [s.scores.names[i] for i in ranked]
        acc[k] = 100.0 * hits / len(samples)
    return means, sum(present) / len(present), acc


def test_report_matches_independent_aggregation():
    g = np.random.default_rng(8)
    samples = []
    for _ in range(20):
        gt = LandmarkSet(tuple(None if g.random() < 0.2 else Landmark(*g.uniform(0, 224, 2),
                                                                      Visibility(int(g.integers(0, 3))))
                               for _ in range(8)))
        pred = LandmarkSet(tuple(None if g.random() < 0.1 else Landmark(*g.uniform(0, 224, 2)) for _ in range(8)))
        p = g.random(4)
        samples.append(EvalSample(pred, gt, scores=dist(*(p / p.sum())), label=NAMES[int(g.integers(0, 4))]))
    r = build_report(samples, (1, 3))
    means, avg, acc = independent_aggregate(samples, (1, 3))
    assert r.per_landmark == means
    assert r.average == avg
    assert r.overall_topk == acc


def test_report_tsv_layout():
    gt = full_set([(i, i) for i in range(8)])
    tsv = build_report([EvalSample(gt, gt, scores=dist(0, 1, 0, 0), label="b")], (1,)).to_tsv()
    rows = [ln.split("\t") for ln in tsv.splitlines()]
    assert rows[0] == ["metric", "L.Collar", "R.Collar", "L.Sleeve", "R.Sleeve",
                       "L.Waistline", "R.Waistline", "L.Hem", "R.Hem", "Avg."]
    assert rows[1] == ["NE"] + ["0.0000"] * 9
    assert rows[3] == ["overall", "100.00", "1"]


def test_report_empty():
    with pytest.raises(EmptyEvaluationError):
        build_report([])
