import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import mann_whitney_auc
from sfcgan import classify as C
from sfcgan.connectome import ValidationError


def blobs(seed, k=2, per=20, d=2, sep=6.0):
    rng = np.random.default_rng(seed)
    centers = sep * np.eye(max(k, d))[:k, :d]
    x = np.concatenate([rng.normal(size=(per, d)) * 0.5 + c for c in centers])
    y = np.repeat(np.arange(k), per)
    return C.FeatureSet(x, y, C.Source.REAL_FC)


def test_separable_set_is_learned():
    fs = blobs(0)
    model = C.train_linear_svm(fs)
    pred, _ = C.predict_scores(model, fs)
    assert np.array_equal(pred, fs.labels)
    assert all(1 <= it <= C.MAX_ITER for it in model.iterations)


def test_training_errors():
    fs = blobs(1)
    for c in (0, -1.0):
        with pytest.raises(ValidationError):
            C.train_linear_svm(fs, c)
    with pytest.raises(ValidationError):
        C.train_linear_svm(C.FeatureSet(fs.rows, np.zeros(fs.labels.size), fs.source))
    with pytest.raises(ValidationError):
        C.FeatureSet(np.zeros((3, 2)), [], fs.source)


def test_three_classes_give_three_classifiers():
    fs = blobs(2, k=3, d=3)
    model = C.train_linear_svm(fs)
    assert model.weights.shape == (3, 3) and model.bias.shape == (3,)
    assert np.mean(C.predict_scores(model, fs)[0] == fs.labels) > 0.95


def test_deterministic():
    fs = blobs(3)
    a, b = C.train_linear_svm(fs), C.train_linear_svm(fs)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_zero_weights_predict_first_class():
    fs = blobs(4, k=3, d=3)
    model = C.train_linear_svm(fs)
    model.weights[:] = 0
    model.bias[:] = 0
    pred, _ = C.predict_scores(model, fs)
    assert np.all(pred == 0)


def test_scores_are_linear_in_features():
    fs = blobs(5)
    model = C.train_linear_svm(fs)
    model.mean[:] = 0
    model.scale[:] = 1
    x = fs.rows[:3]
    s1 = C.predict_scores(model, C.FeatureSet(x, [0, 0, 0], fs.source))[1] - model.bias
    s2 = C.predict_scores(model, C.FeatureSet(2 * x, [0, 0, 0], fs.source))[1] - model.bias
    assert np.allclose(s2, 2 * s1, atol=1e-12)


def test_dimension_mismatch():
    model = C.train_linear_svm(blobs(6))
    with pytest.raises(ValidationError):
        C.predict_scores(model, C.FeatureSet(np.zeros((2, 5)), [0, 1], C.Source.REAL_FC))


def test_standardization_uses_train_statistics_only():
    train, test = blobs(7), blobs(8)
    model = C.train_linear_svm(train)
    assert np.allclose(model.mean, train.rows.mean(0)) and np.allclose(model.scale, train.rows.std(0))
    shifted = C.FeatureSet(test.rows + 100, test.labels, test.source)
    C.predict_scores(model, shifted)
    assert np.allclose(model.mean, train.rows.mean(0))


def test_perfect_metrics():
    truth = np.array([0, 0, 1, 1, 2])
    scores = np.eye(3)[truth]
    m = C.classification_metrics(truth, scores, truth)
    assert (m.accuracy, m.precision, m.recall, m.f1, m.auc) == (100, 100, 100, 100, 100)


def test_tied_scores_give_half_auc():
    truth = np.array([0, 1, 0, 1])
    m = C.classification_metrics(np.zeros(4, int), np.zeros((4, 2)), truth)
    assert m.auc == 50 and m.accuracy == 50


def test_hand_built_auc_matches_pair_count():
    scores = np.array([0.9, 0.4, 0.4, 0.7, 0.1, 0.4])
    pos = np.array([1, 0, 1, 1, 0, 0], bool)
    assert C.roc_auc(scores, pos) == pytest.approx(mann_whitney_auc(scores, pos), abs=1e-12)
    assert C.roc_auc(scores, np.ones(6, bool)) is None


@given(st.lists(st.integers(0, 4), min_size=2, max_size=30), st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_auc_equals_mann_whitney(vals, seed):
    pos = np.random.default_rng(seed).random(len(vals)) < 0.5
    if pos.all() or not pos.any():
        return
    s = np.array(vals, float)
    assert C.roc_auc(s, pos) == pytest.approx(mann_whitney_auc(s, pos), abs=1e-12)


def test_weighted_metrics_by_hand():
    truth = np.array([0, 0, 0, 1])
    pred = np.array([0, 0, 1, 1])
    m = C.classification_metrics(pred, np.eye(2)[pred], truth)
    # class 0: p=1, r=2/3; class 1: p=1/2, r=1; weights 3/4, 1/4
    assert m.precision == pytest.approx(100 * (0.75 * 1 + 0.25 * 0.5))
    assert m.recall == pytest.approx(75)
    f0, f1 = 2 * (2 / 3) / (1 + 2 / 3), 2 * 0.5 / 1.5
    assert m.f1 == pytest.approx(100 * (0.75 * f0 + 0.25 * f1))


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(9)
    truth = rng.integers(0, 3, 30)
    scores = rng.normal(size=(30, 3))
    pred = scores.argmax(1)
    perm = rng.permutation(30)
    assert C.classification_metrics(pred, scores, truth) == C.classification_metrics(pred[perm], scores[perm], truth[perm])


def test_metric_errors():
    with pytest.raises(ValidationError):
        C.classification_metrics([], np.zeros((0, 2)), [])
    with pytest.raises(ValidationError):
        C.classification_metrics([0, 1], np.zeros((2, 2)), [0])


def test_source_labels():
    assert [s.label for s in C.Source] == ["Real FC", "Real SC", "Real FC and SC",
                                           "Translated FC", "Translated SC", "Translated FC and SC"]


def test_real_study_and_csv(tiny_dataset, tmp_path):
    res = C.run_study(tiny_dataset, None, sources=(C.Source.REAL_FC, C.Source.REAL_BOTH))
    assert set(res) == {C.Source.REAL_FC, C.Source.REAL_BOTH}
    with pytest.raises(ValidationError):
        C.run_study(tiny_dataset, None, sources=(C.Source.TRANSLATED_FC,))
    path = tmp_path / "m.csv"
    C.write_metrics(res, "synthetic", path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == C.METRIC_COLUMNS
    assert rows[1][:3] == ["linear_svm", "synthetic", "Real FC"]
    assert all(0 <= float(v) <= 100 for r in rows[1:] for v in r[3:])
