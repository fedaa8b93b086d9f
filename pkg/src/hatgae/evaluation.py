"""Frozen-encoder embeddings and the l2-regularized logistic-regression probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .gat import encode
from .utils import rng_stream

L2_GRID = (1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class ProbeConfig:
    l2: float | tuple = L2_GRID
    probe_epochs: int = 300
    probe_lr: float = 0.01
    seed: int = 0
    metric: str = "accuracy"

    def l2_values(self):
        vals = (self.l2,) if np.isscalar(self.l2) else tuple(self.l2)
        if any(v < 0 for v in vals):
            raise ValueError(f"l2 must be >= 0, got {vals}")
        return vals


def export_embeddings(g, params):
    """Encoder output on the unmasked, uncorrupted features."""
    if params.n_dims != g.n_dims:
        raise ValueError(f"checkpoint expects {params.n_dims} feature dims, graph has {g.n_dims}")
    return encode(g, g.features, params).value.copy()


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained full-batch with Adam.

    Objective: mean softmax cross-entropy plus ``l2 / 2 * ||W||^2`` (the bias is
    not penalized).

    Parameters
    ----------
    l2 : float, default=1e-3
        Weight penalty.
    epochs : int, default=300
        Full-batch Adam steps.
    lr : float, default=0.01
        Adam step size.
    seed : int, default=0
        Seeds the small random weight initialization.
    """

    def __init__(self, l2=1e-3, epochs=300, lr=0.01, seed=0):
        self.l2 = l2
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def _objective(self, X, onehot, W, b):
        p = _softmax(X @ W + b)
        n = X.shape[0]
        loss = -np.sum(onehot * np.log(np.clip(p, 1e-300, None))) / n + 0.5 * self.l2 * np.sum(W * W)
        d = (p - onehot) / n
        return loss, X.T @ d + self.l2 * W, d.sum(axis=0)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("training split contains a single class")
        k = len(self.classes_)
        onehot = np.eye(k)[yi]
        rng = rng_stream(self.seed, "probe")
        W = rng.normal(0.0, 0.01, size=(X.shape[1], k))
        b = np.zeros(k)
        mw, vw = np.zeros_like(W), np.zeros_like(W)
        mb, vb = np.zeros_like(b), np.zeros_like(b)
        b1, b2, eps = 0.9, 0.999, 1e-8
        curve = []
        for t in range(1, self.epochs + 1):
            loss, gw, gb = self._objective(X, onehot, W, b)
            curve.append(loss)
            for p, g, m, v in ((W, gw, mw, vw), (b, gb, mb, vb)):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= self.lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        curve.append(self._objective(X, onehot, W, b)[0])
        self.coef_, self.intercept_ = W, b
        self.loss_curve_ = np.array(curve)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def metrics(preds, labels, kind="accuracy"):
    """Accuracy or micro-F1.

    1-D inputs are single-label class ids; 2-D inputs are multi-label 0/1
    indicator matrices. For single-label data micro-F1 equals accuracy.
    """
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("empty prediction set")
    if kind == "accuracy":
        if preds.ndim == 2:
            return float(np.all(preds == labels, axis=1).mean())
        return float(np.mean(preds == labels))
    if kind == "micro_f1":
        if preds.ndim == 2:
            p, t = preds.astype(bool), labels.astype(bool)
            tp = np.sum(p & t)
            fp = np.sum(p & ~t)
            fn = np.sum(~p & t)
        else:
            tp = np.sum(preds == labels)
            fp = fn = np.sum(preds != labels)
        denom = 2 * tp + fp + fn
        return float(2 * tp / denom) if denom else 0.0
    raise ValueError(f"unknown metric {kind!r}")


def linear_probe(emb, labels, split, cfg=None):
    """Select l2 on the validation split, report the metric on the test split.

    Returns ``(value, report)`` with ``report`` holding the chosen l2, the
    validation score per candidate and per-class test recall.
    """
    cfg = cfg or ProbeConfig()
    if labels is None:
        raise ValueError("linear probe needs node labels")
    if split is None:
        raise ValueError("linear probe needs a train/val/test split")
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    split = np.asarray(split)
    tr, va, te = (split == t for t in ("train", "val", "test"))
    if not tr.any() or not te.any():
        raise ValueError("split needs non-empty train and test sets")
    if len(np.unique(labels[tr])) < 2:
        raise ValueError("training split contains a single class")

    val_scores = {}
    best = None
    for l2 in cfg.l2_values():
        clf = LinearProbe(l2, cfg.probe_epochs, cfg.probe_lr, cfg.seed).fit(emb[tr], labels[tr])
        score = metrics(clf.predict(emb[va]), labels[va], cfg.metric) if va.any() else 0.0
        val_scores[l2] = score
        if best is None or score > best[0]:
            best = (score, l2, clf)
    _, l2, clf = best
    pred = clf.predict(emb[te])
    value = metrics(pred, labels[te], cfg.metric)
    per_class = {}
    for c in np.unique(labels[te]):
        sel = labels[te] == c
        per_class[int(c)] = {"support": int(sel.sum()), "recall": float(np.mean(pred[sel] == c))}
    report = {
        "metric": cfg.metric,
        "value": value,
        "l2_chosen": l2,
        "seed": cfg.seed,
        "val_scores": {repr(k): v for k, v in val_scores.items()},
        "per_class": per_class,
    }
    return value, report


def save_embeddings(path, emb):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, row in enumerate(np.asarray(emb).tolist()):
            fh.write("\t".join([str(i)] + [repr(v) for v in row]) + "\n")


def load_embeddings(path):
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            toks = line.rstrip("\n").split("\t")
            try:
                rows[int(toks[0])] = [float(t) for t in toks[1:]]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed embedding row") from None
    if sorted(rows) != list(range(len(rows))):
        raise ValueError(f"{path}: node ids must be 0..N-1")
    return np.array([rows[i] for i in range(len(rows))], dtype=np.float64)
