"""Embedding quality: linear SVM accuracy and kappa, kNN accuracy, PCA baseline."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


@dataclass
class LinearSVM:
    """One-vs-rest linear classifier; scores are ``x @ weights + bias``."""

    weights: np.ndarray  # (e, C)
    bias: np.ndarray  # (C,)
    mean: np.ndarray
    scale: np.ndarray

    def decision_function(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weights + self.bias

    def predict(self, x):
        # argmax picks the smallest class id among tied scores
        return np.argmax(self.decision_function(x), axis=1)


def linear_svm_train(x, labels, train_mask=None, c=1e-3, epochs=200, seed=0,
                     lr=0.5, batch_size=64):
    """Fit one-vs-rest L2-regularised hinge-loss classifiers by subgradient descent.

    Each binary problem minimises ``c/2 |w|^2 + mean(max(0, 1 - t (w.x + b)))``
    with targets ``t = +-1``; the step size decays as ``lr / sqrt(step)`` and
    the returned weights are the average of the second half of the iterates.
    Features are standardised on the training rows first.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if train_mask is not None:
        x, labels = x[train_mask], labels[train_mask]
    classes = np.unique(labels)
    if classes.size < 2:
        raise EvalError("training split must contain at least 2 classes")
    if c < 0:
        raise EvalError("c must be >= 0")
    if c == 0:
        logger.warning("c=0: training an unregularised hinge-loss classifier")
    n_classes = int(labels.max()) + 1
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (x - mean) / scale
    n, e = z.shape
    t = np.where(labels[:, None] == np.arange(n_classes)[None, :], 1.0, -1.0)

    rng = np.random.default_rng(seed)
    w = np.zeros((e, n_classes))
    b = np.zeros(n_classes)
    w_avg = np.zeros_like(w)
    b_avg = np.zeros_like(b)
    n_avg = 0
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            step += 1
            margin = t[idx] * (z[idx] @ w + b)
            viol = (margin < 1.0) * t[idx]
            gw = c * w - z[idx].T @ viol / idx.size
            gb = -viol.sum(axis=0) / idx.size
            eta = lr / np.sqrt(step)
            w -= eta * gw
            b -= eta * gb
            if epoch >= epochs // 2:
                w_avg += w
                b_avg += b
                n_avg += 1
    if n_avg:
        w, b = w_avg / n_avg, b_avg / n_avg
    # classes absent from training never win
    absent = np.setdiff1d(np.arange(n_classes), classes)
    b[absent] = -np.inf
    return LinearSVM(w, b, mean, scale)


def confusion_matrix(truth, pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def accuracy_kappa(cm):
    """Overall accuracy and Cohen's kappa of a confusion matrix (rows = truth)."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise EvalError("empty confusion matrix")
    p_o = np.trace(cm) / total
    p_e = float(np.sum(cm.sum(axis=1) * cm.sum(axis=0))) / total**2
    if np.isclose(p_e, 1.0):
        kappa = 1.0 if np.isclose(p_o, 1.0) else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return float(p_o), float(kappa)


def stratified_split(labels, train_fraction, seed):
    """Boolean train mask with ``train_fraction`` of every class (at least one each side)."""
    if not 0 < train_fraction < 1:
        raise EvalError("train_fraction must lie in (0, 1)")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    mask = np.zeros(labels.size, dtype=bool)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise EvalError(f"class {cls} has fewer than 2 samples; cannot stratify")
        n_train = int(np.clip(round(train_fraction * idx.size), 1, idx.size - 1))
        mask[rng.permutation(idx)[:n_train]] = True
    return mask


@dataclass
class EvalReport:
    accuracy: float
    kappa: float
    per_class: list
    confusion: list
    split: dict

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "split": self.split,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(embeddings, labels, train_fraction=0.7, seed=0, c=1e-3, epochs=200):
    """Stratified split, SVM fit on train rows, accuracy/kappa on the rest.

    Samples labelled ``-1`` are ignored.
    """
    if labels is None:
        raise EvalError("evaluation needs labels")
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels >= 0
    x, labels = x[keep], labels[keep]
    mask = stratified_split(labels, train_fraction, seed)
    clf = linear_svm_train(x, labels, mask, c=c, epochs=epochs, seed=seed)
    pred = clf.predict(x[~mask])
    n_classes = int(labels.max()) + 1
    cm = confusion_matrix(labels[~mask], pred, n_classes)
    acc, kappa = accuracy_kappa(cm)
    rows = cm.sum(axis=1)
    per_class = [float(cm[i, i] / rows[i]) if rows[i] else None for i in range(n_classes)]
    return EvalReport(
        accuracy=acc,
        kappa=kappa,
        per_class=per_class,
        confusion=cm.tolist(),
        split={"train_fraction": train_fraction, "seed": seed,
               "n_train": int(mask.sum()), "n_test": int((~mask).sum())},
    )


def pca_components(x, e):
    """Top-``e`` principal axes as orthonormal columns, sign-fixed.

    Each axis is flipped so its largest-magnitude loading is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if e > x.shape[1] or e < 1:
        raise EvalError(f"target dimension {e} must lie in [1, {x.shape[1]}]")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:e]
    v = vecs[:, order]
    pivot = np.argmax(np.abs(v), axis=0)
    v *= np.sign(v[pivot, np.arange(e)])
    return v


def pca_project(x, e):
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    v = pca_components(x, e)
    return (x - x.mean(axis=0)) @ v


def knn_classify_accuracy(embeddings, labels, k=1):
    """Leave-one-out k-NN accuracy; ties go to the lower index / class id."""
    from .graph import knn_indices

    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1 or k >= x.shape[0]:
        raise EvalError(f"k must lie in [1, n-1], got {k}")
    nbrs = knn_indices(x, k)
    n_classes = int(labels.max()) + 1
    votes = np.zeros((x.shape[0], n_classes), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(x.shape[0]), k), labels[nbrs].ravel()), 1)
    pred = np.argmax(votes, axis=1)
    return float(np.mean(pred == labels))
