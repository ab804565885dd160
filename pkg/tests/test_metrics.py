import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splat2point.metrics import (
    ConfusionMatrix,
    Taxonomy,
    accumulate,
    group_means,
    load_taxonomy,
    per_class_scores,
    scannet20,
    summarize,
)
from splat2point.types import ValidationError


def test_two_class_example():
    cm = ConfusionMatrix(2, [[1, 1], [0, 2]])
    iou, acc, support = per_class_scores(cm)
    np.testing.assert_allclose(iou, [1 / 2, 2 / 3])
    np.testing.assert_allclose(acc, [1.0, 2 / 3])
    report = summarize(cm)
    assert report["OA"] == 0.75
    assert report["mIoU"] == pytest.approx(7 / 12)


def test_orientation_is_pred_true():
    cm = accumulate([1], [0], 2)
    assert cm.counts[1, 0] == 1


def test_perfect_prediction():
    y = np.array([0, 1, 2, 2, 1])
    r = summarize(accumulate(y, y, 3))
    assert r["mIoU"] == 1.0 and r["OA"] == 1.0


def test_absent_class_excluded():
    r = summarize(accumulate([0, 1], [0, 1], 4))
    assert r["absent_classes"] == ["class_2", "class_3"]
    assert r["mIoU"] == 1.0
    assert r["per_class"]["class_3"]["iou"] is None


def test_ignore_id():
    cm = accumulate([0, 1, 1], [0, 1, 255], 2, ignore_id=255)
    assert cm.total == 2
    with pytest.raises(ValidationError):
        accumulate([0, 1, 1], [0, 1, 255], 2)


def test_empty_raises():
    with pytest.raises(ValidationError):
        summarize(ConfusionMatrix(3))


def test_group_means_skip_missing():
    g = group_means({"a": 0.5, "b": None, "c": 1.0}, {"x": ("a", "b", "c"), "y": ("b",)})
    assert g["x"] == 0.75 and np.isnan(g["y"])


def test_scannet_taxonomy():
    t = scannet20()
    assert t.num_classes == 20
    assert len(t.groups["geometrically_distinguishable"]) == 8
    assert len(t.groups["geometrically_challenging"]) == 6
    assert t.ungrouped == ("counter", "desk", "toilet", "sink", "bathtub", "otherfurniture")
    with pytest.raises(ValidationError):
        Taxonomy(("a",), {"g": ("b",)})


def test_taxonomy_from_json(tmp_path):
    p = tmp_path / "t.json"
    p.write_text(json.dumps({"names": ["a", "b"], "groups": {"g": ["a"]}}))
    t = load_taxonomy(str(p))
    assert t.names == ("a", "b") and t.groups == {"g": ("a",)}
    assert load_taxonomy("classes:3").num_classes == 3


labels = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60)


@settings(max_examples=200, deadline=None)
@given(labels, labels)
def test_additivity(a, b):
    pa, ta = map(list, zip(*a))
    pb, tb = map(list, zip(*b))
    assert accumulate(pa, ta, 5) + accumulate(pb, tb, 5) == accumulate(pa + pb, ta + tb, 5)


@settings(max_examples=200, deadline=None)
@given(labels, st.permutations(range(5)))
def test_relabeling_permutes_scores(pairs, perm):
    p, t = (np.array(x) for x in zip(*pairs))
    perm = np.array(perm)
    iou, acc, _ = per_class_scores(accumulate(p, t, 5))
    iou2, acc2, _ = per_class_scores(accumulate(perm[p], perm[t], 5))
    np.testing.assert_array_equal(iou2[perm], iou)
    np.testing.assert_array_equal(acc2[perm], acc)


@settings(max_examples=200, deadline=None)
@given(labels)
def test_score_ordering(pairs):
    p, t = zip(*pairs)
    iou, acc, support = per_class_scores(accumulate(p, t, 5))
    has = support > 0
    assert np.all(iou[has] >= 0)
    assert np.all(iou[has] <= acc[has])
    assert np.all(acc[has] <= 1)
