import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memerobust.metrics import (CSV_COLUMNS, ConfusionCounts, MetricError, MetricsRow, abs_robustness, auroc,
                                basic_metrics, compute_row, confusion, rel_robustness, rows_from_csv, rows_to_csv)
from oracles import hand_confusion, pairwise_auroc

# 20 labelled pairs, counted by hand: TP=8 TN=5 FP=3 FN=4
PREDS_20 = [1, 1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1]
LABELS_20 = [1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1, 0, 1, 1, 0, 1, 1]


def test_confusion_all_correct():
    c = confusion([1, 0, 1, 1], [1, 0, 1, 1])
    assert c.fp == 0 and c.fn == 0 and c.total == 4


def test_confusion_all_positive_half_set():
    c = confusion([1] * 10, [1, 0] * 5)
    assert (c.tp, c.fp, c.tn, c.fn) == (5, 5, 0, 0)


def test_confusion_hand_counted_fixture():
    c = confusion(PREDS_20, LABELS_20)
    assert (c.tp, c.tn, c.fp, c.fn) == (8, 5, 3, 4)
    assert (c.tp, c.tn, c.fp, c.fn) == hand_confusion(PREDS_20, LABELS_20)


@pytest.mark.parametrize("preds,labels", [([1, 0], [1]), ([], []), ([2], [1])])
def test_confusion_errors(preds, labels):
    with pytest.raises(MetricError):
        confusion(preds, labels)


def test_basic_metrics_arithmetic():
    m = basic_metrics(ConfusionCounts(tp=3, tn=5, fp=1, fn=1))
    assert m.accuracy == pytest.approx(0.8, abs=1e-15)
    assert m.precision == pytest.approx(0.75, abs=1e-15)
    assert m.recall == pytest.approx(0.75, abs=1e-15)
    assert m.f1 == pytest.approx(0.75, abs=1e-15)
    assert not m.degenerate


def test_basic_metrics_macro_and_balanced():
    m = basic_metrics(ConfusionCounts(tp=3, tn=5, fp=1, fn=1))
    # class 0: precision 5/6, recall 5/6
    assert m.f1_macro == pytest.approx((0.75 + 5 / 6) / 2, abs=1e-15)
    assert m.balanced_accuracy == pytest.approx((0.75 + 5 / 6) / 2, abs=1e-15)


def test_zero_denominator_flagged():
    m = basic_metrics(ConfusionCounts(tp=0, tn=4, fp=0, fn=2))
    assert m.precision == 0.0
    assert "precision" in m.degenerate
    assert "f1" in m.degenerate


def test_basic_metrics_empty():
    with pytest.raises(MetricError):
        basic_metrics(ConfusionCounts(0, 0, 0, 0))


@given(st.integers(1, 50), st.integers(0, 50), st.integers(1, 50), st.integers(0, 50))
def test_f1_is_harmonic_mean(tp, tn, fp, fn):
    m = basic_metrics(ConfusionCounts(tp, tn, fp, fn))
    assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall), rel=1e-12)


@given(st.integers(1, 40))
def test_f1_fixed_point(k):
    # precision == recall when fp == fn
    m = basic_metrics(ConfusionCounts(tp=k, tn=3, fp=2, fn=2))
    assert m.precision == m.recall
    assert m.f1 == pytest.approx(m.precision, rel=1e-15)


# ---------------------------------------------------------------- AUROC

def test_auroc_perfect_and_constant():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_single_class_is_error():
    with pytest.raises(MetricError):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_twelve_sample_fixture():
    scores = [0.9, 0.8, 0.8, 0.7, 0.6, 0.55, 0.5, 0.5, 0.4, 0.3, 0.2, 0.1]
    labels = [1, 1, 0, 1, 0, 1, 1, 0, 0, 1, 0, 0]
    assert abs(auroc(scores, labels) - pairwise_auroc(scores, labels)) <= 1e-12


def _scores_labels(draw_n=st.integers(2, 40)):
    return st.integers(2, 40).flatmap(lambda n: st.tuples(
        st.lists(st.integers(0, 6).map(lambda v: v / 6), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n)).filter(lambda t: 0 < sum(t[1]) < len(t[1])))


@settings(max_examples=200)
@given(_scores_labels())
def test_auroc_matches_pairwise(data):
    s, y = data
    assert abs(auroc(s, y) - pairwise_auroc(s, y)) <= 1e-12


@given(_scores_labels())
def test_auroc_negation_antisymmetry(data):
    s, y = data
    assert auroc(s, y) == pytest.approx(1 - auroc([-v for v in s], y), abs=1e-12)


@given(_scores_labels())
def test_auroc_monotone_invariance(data):
    s, y = data
    t = [np.exp(3 * v) - 7 for v in s]
    assert auroc(s, y) == pytest.approx(auroc(t, y), abs=1e-12)


# ---------------------------------------------------------------- robustness

def test_abs_robustness_examples():
    assert abs_robustness(0.7, 0.7) == 1.0
    assert abs_robustness(0.744, 0.724) == pytest.approx(0.99980, abs=1e-12)
    assert abs_robustness(0.5, 0.0) == pytest.approx(0.995, abs=1e-15)


def test_rel_robustness_examples():
    assert rel_robustness(0.744, 0.724) == pytest.approx(0.97312, abs=5e-6)
    assert rel_robustness(0.768, 0.719) == pytest.approx(0.93620, abs=5e-6)
    with pytest.raises(MetricError):
        rel_robustness(0.0, 0.1)


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_rel_above_one_iff_improves(clean, pert):
    r = rel_robustness(clean, pert)
    assert (r > 1) == (pert > clean)
    assert rel_robustness(clean, clean) == 1.0


@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_robustness_affine_slopes(clean, a, b):
    if abs(a - b) < 1e-3:
        return
    assert (abs_robustness(clean, a) - abs_robustness(clean, b)) / (a - b) == pytest.approx(1 / 100, rel=1e-6)
    assert (rel_robustness(clean, a) - rel_robustness(clean, b)) / (a - b) == pytest.approx(1 / clean, rel=1e-6)


# ---------------------------------------------------------------- rows

def test_compute_row_and_csv_round_trip():
    clean = compute_row("clean", PREDS_20, np.linspace(0, 1, 20), LABELS_20)
    assert clean.abs_robust is None and clean.rel_robust is None
    noisy = compute_row("typos", [1 - p for p in PREDS_20], np.linspace(1, 0, 20), LABELS_20, clean)
    assert noisy.rel_robust == pytest.approx(noisy.accuracy / clean.accuracy)
    text = rows_to_csv([clean, noisy])
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    back = rows_from_csv(text)
    assert back[0].condition == "clean" and back[0].abs_robust is None
    assert back[1].accuracy == pytest.approx(noisy.accuracy, abs=5e-6)
    assert text.splitlines()[1].split(",")[1] == f"{clean.accuracy:.5f}"


def test_table_f1_prefers_macro():
    assert MetricsRow("x", 0.5, 0.5, 0.4).table_f1 == 0.4
    assert MetricsRow("x", 0.5, 0.5, 0.4, f1_macro=0.45).table_f1 == 0.45
