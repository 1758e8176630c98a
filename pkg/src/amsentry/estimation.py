"""Supervised state estimation: emission features -> control-signal labels."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import TASKS, FeatureVector, LabeledDataset, layout_digest

MODEL_FORMAT = 1


class LayoutMismatchError(ValueError):
    pass


class KNearestClassifier(ClassifierMixin, BaseEstimator):
    """Exhaustive-scan k-nearest-neighbour classifier with order-free ties.

    Neighbours are ranked by Euclidean distance, equal distances by label
    index. The vote goes to the most frequent label; a tie in votes goes to
    the label whose neighbours have the smaller summed distance, then to the
    lower label index. Shuffling the training rows never changes a
    prediction.

    Parameters
    ----------
    n_neighbors : int, default=3
        Must be odd and at most the number of training rows.
    """

    def __init__(self, n_neighbors=3):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        k = self.n_neighbors
        if not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
            raise ValueError(f"n_neighbors must be a positive odd integer, got {k!r}")
        if k > len(X):
            raise ValueError(f"n_neighbors={k} exceeds the {len(X)} training rows")
        self.classes_, self._y = np.unique(y, return_inverse=True)
        self._fit_X = X
        self.n_features_in_ = X.shape[1]
        return self

    def _vote(self, X, chunk=64):
        k = self.n_neighbors
        n_classes = len(self.classes_)
        out = np.empty(len(X), dtype=np.int64)
        for lo in range(0, len(X), chunk):
            q = X[lo:lo + chunk]
            diff = q[:, None, :] - self._fit_X[None, :, :]
            dist = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
            labels = np.broadcast_to(self._y, dist.shape)
            order = np.lexsort((labels, dist), axis=-1)[:, :k]
            nn_label = np.take_along_axis(labels, order, axis=1)
            nn_dist = np.take_along_axis(dist, order, axis=1)
            onehot = nn_label[:, :, None] == np.arange(n_classes)
            votes = onehot.sum(axis=1)
            sums = np.where(onehot, nn_dist[:, :, None], 0.0).sum(axis=1)
            cand = votes == votes.max(axis=1, keepdims=True)
            sums = np.where(cand, sums, np.inf)
            cand &= sums == sums.min(axis=1, keepdims=True)
            out[lo:lo + chunk] = np.argmax(cand, axis=1)
        return out

    def predict(self, X):
        check_is_fitted(self, "_fit_X")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.classes_[self._vote(X)]


@dataclass(frozen=True)
class KNearest:
    k: int = 3


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray
    n: int
    labels: tuple = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n": self.n,
            "labels": [int(v) for v in self.labels],
            "confusion": self.confusion.tolist(),
        }


@dataclass
class Model:
    """A fitted per-task classifier together with its normalization.

    Predictions are only made on features whose layout digest equals
    ``layout_digest``.
    """

    task: str
    algorithm: str
    estimator: KNearestClassifier
    scaler: StandardScaler
    layout: tuple
    speed_table: tuple

    @property
    def layout_digest(self) -> str:
        return layout_digest(self.layout)

    def predict_matrix(self, X, digest: str) -> np.ndarray:
        if digest != self.layout_digest:
            raise LayoutMismatchError(
                f"feature layout {digest} does not match model layout {self.layout_digest}"
            )
        return self.estimator.predict(self.scaler.transform(np.atleast_2d(X)))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "algorithm": self.algorithm,
            "k": int(self.estimator.n_neighbors),
            "layout": [list(p) for p in self.layout],
            "layout_digest": self.layout_digest,
            "speed_table": list(self.speed_table),
            "normalization": {
                "mean": self.scaler.mean_.tolist(),
                "scale": self.scaler.scale_.tolist(),
                "var": self.scaler.var_.tolist(),
                "n_samples_seen": int(self.scaler.n_samples_seen_),
            },
            "train_X": self.estimator._fit_X.tolist(),
            "train_y": self.estimator.classes_[self.estimator._y].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Model":
        layout = tuple(tuple(p) for p in d["layout"])
        if layout_digest(layout) != d["layout_digest"]:
            raise LayoutMismatchError("stored layout digest does not match stored layout")
        if d["algorithm"] != "knn":
            raise ValueError(f"unsupported algorithm {d['algorithm']!r}")
        norm = d["normalization"]
        scaler = StandardScaler()
        scaler.mean_ = np.asarray(norm["mean"], dtype=float)
        scaler.scale_ = np.asarray(norm["scale"], dtype=float)
        scaler.var_ = np.asarray(norm["var"], dtype=float)
        scaler.n_samples_seen_ = norm["n_samples_seen"]
        scaler.n_features_in_ = len(scaler.mean_)
        est = KNearestClassifier(int(d["k"])).fit(
            np.asarray(d["train_X"], dtype=float), np.asarray(d["train_y"])
        )
        return cls(d["task"], "knn", est, scaler, layout, tuple(d["speed_table"]))


def train(dataset: LabeledDataset, task: str, algorithm: KNearest = KNearest()) -> Model:
    """Fit a classifier for ``task`` on the dataset's z-scored features."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not isinstance(algorithm, KNearest):
        raise ValueError(f"unsupported algorithm {algorithm!r}")
    est = KNearestClassifier(algorithm.k).fit(dataset.normalized(), dataset.labels(task))
    return Model(task, "knn", est, dataset.scaler, dataset.layout, dataset.speed_table)


def predict(model: Model, features: FeatureVector):
    """Predicted label for one feature vector."""
    return model.predict_matrix(features.values, features.digest)[0].item()


def metrics_from_labels(y_true, y_pred, labels=None) -> Metrics:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if labels is None:
        labels = np.union1d(y_true, y_pred)
    labels = np.asarray(labels)
    pos = {v: i for i, v in enumerate(labels.tolist())}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        confusion[pos[t], pos[p]] += 1
    accuracy = float(np.trace(confusion) / len(y_true))
    return Metrics(accuracy, confusion, len(y_true), tuple(labels.tolist()))


def evaluate(model: Model, dataset: LabeledDataset) -> Metrics:
    y_pred = model.predict_matrix(dataset.X, dataset.layout_digest)
    y_true = dataset.labels(model.task)
    if model.task == "velocity":
        labels = np.arange(len(model.speed_table))
    else:
        labels = np.array([0, 1])
    return metrics_from_labels(y_true, y_pred, np.union1d(labels, np.union1d(y_true, y_pred)))


@dataclass
class ModelSet:
    """Per-task models sharing one layout, plus held-out error estimates."""

    models: dict[str, Model]
    validation_error: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        digests = {m.layout_digest for m in self.models.values()}
        if len(digests) > 1:
            raise LayoutMismatchError("models in a set must share one layout")

    @property
    def layout_digest(self) -> str:
        return next(iter(self.models.values())).layout_digest

    @property
    def speed_table(self) -> tuple:
        return next(iter(self.models.values())).speed_table

    @property
    def tasks(self) -> list[str]:
        return list(self.models)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "layout_digest": self.layout_digest,
            "validation_error": self.validation_error,
            "models": [self.models[t].to_dict() for t in self.models],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSet":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        models = {m["task"]: Model.from_dict(m) for m in d["models"]}
        ms = cls(models, {k: float(v) for k, v in d.get("validation_error", {}).items()})
        if ms.layout_digest != d["layout_digest"]:
            raise LayoutMismatchError("model set digest does not match its models")
        return ms

    @classmethod
    def load(cls, path) -> "ModelSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_state_estimator(
    dataset: LabeledDataset,
    k: int = 3,
    tasks=TASKS,
    test_size: float = 0.3,
    seed: int = 0,
) -> tuple[ModelSet, dict[str, Metrics]]:
    """Train one model per task on a stratified split and measure held-out error."""
    train_ds, test_ds = dataset.split(test_size, seed)
    models, metrics = {}, {}
    for task in tasks:
        models[task] = train(train_ds, task, KNearest(k))
        if test_ds is not None:
            metrics[task] = evaluate(models[task], test_ds)
    errors = {t: 1.0 - m.accuracy for t, m in metrics.items()}
    return ModelSet(models, errors), metrics
