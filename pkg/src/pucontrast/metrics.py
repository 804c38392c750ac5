"""Classification metrics on fully labeled test data."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import CompositionError, ContractError, LabelError


@dataclass(frozen=True)
class MetricsRecord:
    accuracy: float
    f1: float
    auc: float
    n_test: int
    threshold: float = 0.0

    def __post_init__(self):
        for name in ("accuracy", "f1", "auc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} outside [0, 1]")
        if self.n_test < 1:
            raise ContractError("n_test must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred, true = np.asarray(pred).reshape(-1), np.asarray(true).reshape(-1)
    if pred.shape != true.shape:
        raise ContractError(f"length mismatch: {pred.size} predictions, {true.size} labels")
    return pred, true


def accuracy(pred_labels, true_labels) -> float:
    pred, true = _pair(pred_labels, true_labels)
    if pred.size == 0:
        raise ContractError("accuracy of an empty set is undefined")
    return float(np.mean(pred == true))


def f1_score(pred_labels, true_labels, positive=1) -> float:
    """``2TP / (2TP + FP + FN)``; 0 when there are no true positives."""
    pred, true = _pair(pred_labels, true_labels)
    pp, tp_ = pred == positive, true == positive
    tp = int(np.sum(pp & tp_))
    if tp == 0:
        return 0.0
    fp = int(np.sum(pp & ~tp_))
    fn = int(np.sum(~pp & tp_))
    return 2.0 * tp / (2.0 * tp + fp + fn)


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores, true_labels, positive=1) -> float:
    """Probability that a random positive outranks a random negative, ties counting one half."""
    s, y = _pair(scores, true_labels)
    pos = y == positive
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise CompositionError("AUC needs both classes")
    u = midranks(s)[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def predict_labels(scores, threshold: float = 0.0) -> np.ndarray:
    """+1 strictly above the threshold, -1 otherwise."""
    return np.where(np.asarray(scores) > threshold, 1, -1)


def evaluate_scores(scores, y_true, threshold: float = 0.0) -> MetricsRecord:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    pred = predict_labels(scores, threshold)
    return MetricsRecord(
        accuracy=accuracy(pred, y_true),
        f1=f1_score(pred, y_true),
        auc=auc(scores, y_true),
        n_test=len(scores),
        threshold=threshold,
    )


def model_scores(encoder, classifier, features) -> np.ndarray:
    from .models import classifier_score, encoder_forward

    h = features if encoder is None else encoder_forward(encoder, features).data
    return classifier_score(classifier, h).data


def evaluate_model(encoder, classifier, test, threshold: float = 0.0) -> MetricsRecord:
    """Metrics of ``classifier(encoder(x))`` on a test set carrying true labels."""
    if test.y_true is None:
        raise LabelError(f"test set {test.name!r} has no true labels")
    return evaluate_scores(model_scores(encoder, classifier, test.features), test.y_true, threshold)

