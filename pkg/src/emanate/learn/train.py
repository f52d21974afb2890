"""Training loop, evaluation metrics and finite-difference gradient checking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError, TrainingError
from .nn import ConvNetModel

log = logging.getLogger(__name__)

__all__ = ["Metrics", "TrainConfig", "evaluate", "grad_check", "train", "train_arrays"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    batch_size: int = 32
    epochs: int = 12
    seed: int = 0
    weight_decay: float = 1e-4
    momentum: float = 0.9

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidArgumentError("batch_size and epochs must be >= 1")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise InvalidArgumentError("weight_decay must be >= 0 and momentum in [0, 1)")


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray
    classes: tuple = ()
    per_class_recall: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": round(float(self.accuracy), 10),
            "classes": [str(c) for c in self.classes],
            "confusion": self.confusion.astype(int).tolist(),
            "per_class_recall": {str(k): round(float(v), 10) for k, v in self.per_class_recall.items()},
        }


def _label_index(model: ConvNetModel, labels) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(model.classes)}
    try:
        return np.array([lookup[l] for l in labels], dtype=int)
    except KeyError as exc:
        raise InvalidArgumentError(f"label {exc.args[0]!r} is not one of the model classes") from None


def confusion_metrics(y_true, y_pred, classes) -> Metrics:
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if t not in index:
            raise InvalidArgumentError(f"label {t!r} is not one of the model classes")
        conf[index[t], index[p]] += 1
    total = conf.sum()
    rows = conf.sum(axis=1)
    recall = {c: (conf[i, i] / rows[i] if rows[i] else float("nan")) for i, c in enumerate(classes)}
    return Metrics(float(np.trace(conf) / total) if total else float("nan"), conf, classes, recall)


def _xy(examples_or_xy, labels=None):
    if labels is not None:
        return examples_or_xy, labels
    if isinstance(examples_or_xy, tuple) and len(examples_or_xy) == 2:
        return examples_or_xy
    examples = list(examples_or_xy)
    if not examples:
        return np.empty((0,)), []
    return np.stack([e.features for e in examples]), [e.label for e in examples]


def evaluate(model: ConvNetModel, examples, labels=None) -> Metrics:
    """Confusion matrix on ``examples`` (``LabeledExample`` list or ``(X, y)``)."""
    features, labels = _xy(examples, labels)
    if len(labels) == 0:
        raise InvalidArgumentError("empty test set")
    pred_idx = np.argmax(model.forward(features), axis=1)
    pred = [model.classes[i] for i in pred_idx]
    return confusion_metrics(list(labels), pred, model.classes)


def accuracy(model: ConvNetModel, features, labels) -> float:
    idx = _label_index(model, labels)
    return float(np.mean(np.argmax(model.forward(features), axis=1) == idx))


def train(model: ConvNetModel, split, cfg: TrainConfig) -> tuple[ConvNetModel, list[dict]]:
    """Train on ``split.train``, selecting the epoch with the best ``split.validation`` accuracy."""
    return train_arrays(model, split.arrays("train"), split.arrays("validation"), cfg)


def train_arrays(model: ConvNetModel, train_xy, val_xy, cfg: TrainConfig) -> tuple[ConvNetModel, list[dict]]:
    """Momentum SGD on cross-entropy; keeps the epoch with the best validation accuracy.

    ``train_xy`` and ``val_xy`` are ``(features, labels)`` pairs.  Returns a
    new model (the input is left untouched) and one log row per epoch.
    """
    x_tr, y_tr = train_xy
    x_va, y_va = val_xy
    if len(y_tr) == 0 or len(y_va) == 0:
        raise InvalidArgumentError("training and validation sets must be non-empty")
    x_tr = np.asarray(x_tr, dtype=model.dtype)
    idx_tr = _label_index(model, y_tr)
    model = model.copy()
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    rng = np.random.default_rng(cfg.seed)
    n = len(idx_tr)
    best_acc, best_params, best_epoch = -1.0, None, 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grad(x_tr[batch], idx_tr[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} during epoch {epoch}", epoch=epoch)
            loss_sum += loss * len(batch)
            for k, w in model.params.items():
                v = velocity[k]
                v *= cfg.momentum
                v -= cfg.learning_rate * (grads[k] + cfg.weight_decay * w)
                w += v
        val_acc = accuracy(model, x_va, y_va)
        history.append({"epoch": epoch, "train_loss": loss_sum / n, "val_accuracy": val_acc})
        log.info("epoch %d loss %.4f val_acc %.4f", epoch, loss_sum / n, val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    for row in history:
        row["selected"] = row["epoch"] == best_epoch
    return model, history


def grad_check(
    model: ConvNetModel,
    features,
    label,
    epsilon: float = 1e-4,
    n_weights: int = 120,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    Runs in float64 on a copy.  Relative error is
    ``|a - n| / max(|a| + |n|, 1e-6)``: gradients below ~1e-6 are compared
    in absolute terms, where float64 finite differences are still exact to
    ~1e-11.  At least one weight is drawn from every parameter tensor.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise InvalidArgumentError(f"epsilon must be in [1e-6, 1e-3], got {epsilon}")
    m = model.astype(np.float64)
    x = np.asarray(features, dtype=np.float64)[None]
    y = _label_index(m, [label])
    _, grads = m.loss_and_grad(x, y)
    rng = np.random.default_rng(seed)
    names = list(m.params)
    sizes = np.array([m.params[k].size for k in names], dtype=float)
    picks = list(names)
    picks += list(rng.choice(names, size=max(0, n_weights - len(names)), p=sizes / sizes.sum()))
    worst = 0.0
    for name in picks:
        w = m.params[name].reshape(-1)
        j = int(rng.integers(w.size))
        old = w[j]
        w[j] = old + epsilon
        lp = m.loss(x, y)
        w[j] = old - epsilon
        lm = m.loss(x, y)
        w[j] = old
        numeric = (lp - lm) / (2 * epsilon)
        analytic = grads[name].reshape(-1)[j]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, err)
    return float(worst)
