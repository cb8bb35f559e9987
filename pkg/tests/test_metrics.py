import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from signnet.data.groups import GROUPS
from signnet.metrics import REFERENCE_OVERALL, evaluate_predictions


def test_perfect_predictions():
    labels = np.arange(43).repeat(2)
    report = evaluate_predictions(labels, labels)
    assert report.overall == 100.0
    assert all(v == 100.0 for v in report.groups.values())
    assert report.confusion.trace() == 86 and report.confusion.sum() == 86


def test_single_class_confusion():
    report = evaluate_predictions([3, 3, 5, 3], [3, 3, 3, 3])
    assert report.overall == 75.0
    assert report.confusion[3, 3] == 3 and report.confusion[3, 5] == 1
    assert report.per_class() == {3: 75.0}
    groups = report.groups
    assert groups["SpeedLimits"] == 75.0 and groups["Danger"] is None


def test_group_accuracies_hand_counted():
    # class 0 is a speed limit, 12 and 14 are unique signs
    report = evaluate_predictions([0, 1, 12, 0], [0, 0, 12, 14])
    assert report.groups["SpeedLimits"] == 50.0 and report.groups["Unique"] == 50.0
    assert report.overall == 50.0


@given(st.lists(st.tuples(st.integers(0, 42), st.integers(0, 42)), min_size=1, max_size=200))
def test_weighted_group_mean_equals_overall(pairs):
    predicted, labels = zip(*pairs)
    report = evaluate_predictions(predicted, labels)
    assert abs(report.weighted_group_mean() - 100.0 * report.correct / report.samples) < 1e-9
    assert sum(report.group_counts) == report.samples == report.confusion.sum()


def test_four_decimal_rounding():
    report = evaluate_predictions([0, 0, 1], [0, 0, 0])
    assert report.overall == 66.6667


def test_jsonl_records():
    report = evaluate_predictions([0, 1, 2], [0, 1, 1])
    rows = [json.loads(line) for line in report.to_jsonl().splitlines()]
    kinds = [r["kind"] for r in rows]
    assert kinds[0] == "overall" and kinds.count("group") == len(GROUPS) and kinds.count("class") == 2
    assert rows[0]["top1"] == 66.6667
    refs = {r["method"]: r["top1"] for r in rows if r["kind"] == "reference_overall"}
    assert refs == REFERENCE_OVERALL and refs["Proposed Method"] == 99.81
    confusion = next(r for r in rows if r["kind"] == "confusion")
    assert sorted(map(tuple, confusion["entries"])) == [(0, 0, 1), (1, 1, 1), (1, 2, 1)]


def test_text_report():
    text = evaluate_predictions([0, 1], [0, 0]).to_text()
    assert "overall top-1  50.0000 %" in text and "n/a" in text and "99.81" in text
