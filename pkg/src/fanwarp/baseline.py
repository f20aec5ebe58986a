"""Logistic regression on downsampled pixels, with accuracy and ROC-AUC."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .augment import derive_seed
from .raster import GrayImage, downsample

__all__ = [
    "LinearModel",
    "Metrics",
    "features",
    "sigmoid",
    "loss_and_grad",
    "train",
    "predict",
    "roc_auc",
    "accuracy",
    "evaluate",
]

BATCH_SIZE = 32

Sample = tuple  # (GrayImage, label) or a StreamItem
SampleSource = Union[Iterable[Sample], Callable[[int], Iterable[Sample]]]


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Weights over ``fw * fh`` pixel features, bias stored last."""

    weights: np.ndarray
    feature_spec: tuple[int, int] = (32, 32)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        fw, fh = (int(v) for v in self.feature_spec)
        if w.size != fw * fh + 1:
            raise ValueError(f"expected {fw * fh + 1} weights for feature_spec {fw}x{fh}, got {w.size}")
        if not np.all(np.isfinite(w)):
            raise ValueError("model weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "feature_spec", (fw, fh))

    @classmethod
    def zeros(cls, feature_spec=(32, 32)) -> "LinearModel":
        fw, fh = feature_spec
        return cls(np.zeros(fw * fh + 1), feature_spec)

    def to_json(self) -> dict:
        return {"feature_spec": list(self.feature_spec), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LinearModel":
        if not isinstance(obj, dict) or not {"weights", "feature_spec"} <= set(obj):
            raise ValueError("model JSON must be an object with 'feature_spec' and 'weights'")
        return cls(np.asarray(obj["weights"], dtype=np.float64), tuple(obj["feature_spec"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    auc: float | None
    n_pos: int
    n_neg: int

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "auc": self.auc, "n_pos": self.n_pos, "n_neg": self.n_neg}


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def features(img: GrayImage, feature_spec=(32, 32)) -> np.ndarray:
    fw, fh = feature_spec
    return downsample(img, fw, fh).data.reshape(-1)


def _design(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def loss_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean logistic loss and its gradient; ``x`` excludes the bias column."""
    xb = _design(np.atleast_2d(x))
    z = xb @ weights
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    grad = xb.T @ (sigmoid(z) - y) / len(y)
    return loss, grad


def _unpack(sample) -> tuple[GrayImage, int]:
    return sample[0], int(sample[1])


def _epoch_data(source: SampleSource, epoch: int, feature_spec) -> tuple[np.ndarray, np.ndarray]:
    items = source(epoch) if callable(source) else source
    xs, ys = [], []
    for sample in items:
        img, label = _unpack(sample)
        xs.append(features(img, feature_spec))
        ys.append(label)
    if not xs:
        return np.zeros((0, feature_spec[0] * feature_spec[1])), np.zeros(0)
    return np.vstack(xs), np.asarray(ys, dtype=np.float64)


def train(
    source: SampleSource,
    epochs: int,
    learning_rate: float,
    seed: int,
    feature_spec: tuple[int, int] = (32, 32),
    batch_size: int = BATCH_SIZE,
) -> LinearModel:
    """Mini-batch SGD on the mean logistic loss, starting from zero weights.

    ``source`` is either a reusable iterable of ``(image, label)`` samples
    or a callable ``epoch -> iterable`` (for per-epoch augmentation).
    Within each epoch samples are reshuffled by a generator derived from
    ``(seed, epoch)``.
    """
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    fw, fh = feature_spec
    w = np.zeros(fw * fh + 1)
    if epochs == 0:
        return LinearModel(w, feature_spec)
    for epoch in range(epochs):
        x, y = _epoch_data(source, epoch, feature_spec)
        if epoch == 0:
            if len(y) < 2 or len(np.unique(y)) < 2:
                raise ValueError("training needs at least two samples covering both classes")
        order = np.random.Generator(np.random.PCG64(derive_seed(seed, "sgd", epoch))).permutation(len(y))
        xb = _design(x[order])
        yb = y[order]
        for start in range(0, len(yb), batch_size):
            bx = xb[start:start + batch_size]
            by = yb[start:start + batch_size]
            grad = bx.T @ (sigmoid(bx @ w) - by) / len(by)
            w = w - learning_rate * grad
    return LinearModel(w, feature_spec)


def predict(model: LinearModel, img: GrayImage) -> float:
    z = float(features(img, model.feature_spec) @ model.weights[:-1] + model.weights[-1])
    return float(sigmoid(np.array([z]))[0])


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean((scores >= threshold) == labels))


def evaluate(model: LinearModel, samples: Iterable[Sample]) -> Metrics:
    """Accuracy at 0.5 and AUC; AUC is ``None`` when one class is absent."""
    scores, labels = [], []
    for sample in samples:
        img, label = _unpack(sample)
        scores.append(predict(model, img))
        labels.append(label)
    if not scores:
        raise ValueError("cannot evaluate on an empty stream")
    n_pos = int(sum(labels))
    n_neg = len(labels) - n_pos
    auc = roc_auc(scores, labels) if n_pos and n_neg else None
    return Metrics(accuracy(scores, labels), auc, n_pos, n_neg)
