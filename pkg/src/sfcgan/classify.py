"""Linear one-vs-rest SVM over vectorized connectomes, plus classification metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .connectome import Connectome, DatasetManifest, Domain, ValidationError, vectorize_upper

MAX_ITER = 10_000
TOL = 1e-4
METRIC_COLUMNS = ("classifier", "dataset", "testing_data", "accuracy", "precision", "recall", "f1", "auc")


class Source(str, Enum):
    REAL_FC = "real_fc"
    REAL_SC = "real_sc"
    REAL_BOTH = "real_both"
    TRANSLATED_FC = "translated_fc"
    TRANSLATED_SC = "translated_sc"
    TRANSLATED_BOTH = "translated_both"

    @property
    def label(self) -> str:
        kind, mod = self.value.split("_")
        return f"{kind.capitalize()} " + {"fc": "FC", "sc": "SC", "both": "FC and SC"}[mod]

    @property
    def modality(self) -> str:
        return self.value.split("_")[1]


@dataclass
class FeatureSet:
    rows: np.ndarray
    labels: np.ndarray
    source: Source

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.size == 0:
            raise ValidationError("feature set has no labels")
        if self.rows.shape[0] != self.labels.size:
            raise ValidationError(f"{self.rows.shape[0]} rows but {self.labels.size} labels")


@dataclass
class SVMModel:
    classes: np.ndarray   # (K,)
    weights: np.ndarray   # (K, d)
    bias: np.ndarray      # (K,)
    mean: np.ndarray      # train statistics used for standardization
    scale: np.ndarray
    iterations: list[int]


@dataclass
class ClassifierMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float


def build_features(fc: Sequence[Connectome], sc: Sequence[Connectome], labels, source: Source) -> FeatureSet:
    mod = source.modality
    parts = []
    if mod in ("fc", "both"):
        parts.append(np.stack([vectorize_upper(c) for c in fc]))
    if mod in ("sc", "both"):
        parts.append(np.stack([vectorize_upper(c) for c in sc]))
    return FeatureSet(np.concatenate(parts, axis=1), labels, source)


def _binary_svm(x: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float, int]:
    """Full-batch Pegasos on lam/2 |w|^2 + mean hinge; bias unregularized."""
    nsamp, d = x.shape
    w = np.zeros(d)
    b = 0.0
    radius = 1.0 / np.sqrt(lam)
    prev = None
    it = 0
    for it in range(1, MAX_ITER + 1):
        margin = y * (x @ w + b)
        viol = margin < 1
        obj = 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1 - margin).mean())
        if prev is not None and abs(prev - obj) <= TOL * max(abs(prev), 1e-12):
            break
        prev = obj
        eta = 1.0 / (lam * it)
        gw = lam * w - (y[viol, None] * x[viol]).sum(0) / nsamp
        gb = -float(y[viol].sum()) / nsamp
        w = w - eta * gw
        b = b - eta * gb
        norm = float(np.linalg.norm(w))
        if norm > radius:
            w *= radius / norm
    return w, b, it


def train_linear_svm(train: FeatureSet, c: float = 1.0) -> SVMModel:
    """One-vs-rest linear SVMs on z-scored features (zero initialization, so no seed is consumed)."""
    if not c > 0:
        raise ValidationError(f"regularization c must be > 0, got {c}")
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise ValidationError("training set has a single class")
    mean = train.rows.mean(0)
    scale = train.rows.std(0)
    scale[scale == 0] = 1.0
    x = (train.rows - mean) / scale
    lam = 1.0 / (c * x.shape[0])
    ws, bs, its = [], [], []
    for k in classes:
        y = np.where(train.labels == k, 1.0, -1.0)
        w, b, it = _binary_svm(x, y, lam)
        ws.append(w)
        bs.append(b)
        its.append(it)
    return SVMModel(classes, np.stack(ws), np.array(bs), mean, scale, its)


def predict_scores(model: SVMModel, test: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
    if test.rows.shape[1] != model.weights.shape[1]:
        raise ValidationError(f"feature length {test.rows.shape[1]} != model's {model.weights.shape[1]}")
    x = (test.rows - model.mean) / model.scale
    scores = x @ model.weights.T + model.bias
    # np.argmax returns the first maximum, i.e. the smaller class index on ties
    return model.classes[np.argmax(scores, axis=1)], scores


def roc_auc(scores: np.ndarray, positive: np.ndarray) -> float | None:
    """Trapezoidal ROC area; tied scores move diagonally. None without both classes."""
    positive = np.asarray(positive, dtype=bool)
    npos, nneg = int(positive.sum()), int((~positive).sum())
    if npos == 0 or nneg == 0:
        return None
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    s, p = np.asarray(scores)[order], positive[order]
    distinct = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.r_[0, np.cumsum(p)[distinct]] / npos
    fps = np.r_[0, np.cumsum(~p)[distinct]] / nneg
    return float(np.sum(np.diff(fps) * (tps[1:] + tps[:-1]) / 2))


def classification_metrics(pred, scores, truth, classes=None) -> ClassifierMetrics:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if truth.size == 0:
        raise ValidationError("empty input")
    if pred.shape != truth.shape or scores.shape[0] != truth.size:
        raise ValidationError("pred, scores and truth lengths differ")
    classes = np.unique(truth) if classes is None else np.asarray(classes)
    acc = float(np.mean(pred == truth))
    prec = rec = f1 = 0.0
    for k in np.unique(truth):
        tp = int(np.sum((pred == k) & (truth == k)))
        npred, support = int(np.sum(pred == k)), int(np.sum(truth == k))
        p = tp / npred if npred else 0.0
        r = tp / support
        w = support / truth.size
        prec += w * p
        rec += w * r
        f1 += w * (2 * p * r / (p + r) if p + r else 0.0)
    aucs = []
    for j, k in enumerate(classes):
        a = roc_auc(scores[:, j], truth == k)
        if a is not None:
            aucs.append(a)
    auc = float(np.mean(aucs)) if aucs else 0.5
    return ClassifierMetrics(100 * acc, 100 * prec, 100 * rec, 100 * f1, 100 * auc)


Translator = Callable[[Connectome], Connectome]


def run_study(manifest: DatasetManifest, translators: Mapping[Domain, Translator] | None,
              sources: Sequence[Source] = tuple(Source), c: float = 1.0) -> dict[Source, ClassifierMetrics]:
    """Train on real train-split features; test on real or translated test-split features."""
    tr_fc, tr_sc = manifest.load_split("train")
    te_fc, te_sc = manifest.load_split("test")
    if not te_fc:
        raise ValidationError("test split is empty")
    y_tr = np.array([s.label for s in manifest.split("train")])
    y_te = np.array([s.label for s in manifest.split("test")])
    if any(v is None for v in list(y_tr) + list(y_te)):
        raise ValidationError("every subject needs a label for classification")
    tx_fc = tx_sc = None
    if any(s.value.startswith("translated") for s in sources):
        if translators is None:
            raise ValidationError("translated sources need a trained model")
        tx_fc = [translators[Domain.FC](s) for s in te_sc]
        tx_sc = [translators[Domain.SC](f) for f in te_fc]
    out = {}
    models: dict[str, SVMModel] = {}
    for src in sources:
        mod = src.modality
        if mod not in models:
            real = Source(f"real_{mod}")
            models[mod] = train_linear_svm(build_features(tr_fc, tr_sc, y_tr, real), c)
        if src.value.startswith("real"):
            test = build_features(te_fc, te_sc, y_te, src)
        else:
            test = build_features(tx_fc, tx_sc, y_te, src)
        pred, scores = predict_scores(models[mod], test)
        out[src] = classification_metrics(pred, scores, y_te, models[mod].classes)
    return out


def write_metrics(results: Mapping[Source, ClassifierMetrics], dataset: str, path: str | Path,
                  classifier: str = "linear_svm") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for src, m in results.items():
            w.writerow([classifier, dataset, src.label] +
                       [f"{getattr(m, k):.2f}" for k in METRIC_COLUMNS[3:]])
