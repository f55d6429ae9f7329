"""Mini-batch training, prediction and evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyClass
from .model import Model
from .optim import AdamState, adam_step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0
    # stop after the first epoch whose mean training loss is at or below this
    target_loss: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)


def train(model: Model, images, labels, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Train ``model`` in place with Adam on shuffled mini-batches.

    Loss and accuracy per epoch are accumulated over that epoch's batches as
    they are processed.
    """
    labels = np.asarray(labels, dtype=int)
    images = np.asarray(images)
    for c in range(model.n_classes):
        if not np.any(labels == c):
            raise EmptyClass(f"class {c} has no training samples")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    rng = np.random.default_rng(config.rng_seed)
    tensors = [a for _, _, a in model.param_list()]
    state = AdamState.for_params(tensors)
    history = []
    n = len(labels)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, probs = model.loss_and_grads(images[idx], labels[idx])
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == labels[idx]))
            flat = [g[k] for g in grads if g is not None for k in ("W", "b")]
            adam_step(tensors, flat, state, config.learning_rate, config.beta1, config.beta2, config.eps)
        history.append(EpochRecord(epoch, loss_sum / n, correct / n))
        if config.target_loss is not None and history[-1].loss <= config.target_loss:
            break
    return TrainResult(model, history)


def predict_proba(model: Model, images, batch_size: int = 128) -> np.ndarray:
    images = np.asarray(images)
    single = images.shape in (model.input_shape, model.input_shape[:2])
    if single:
        return model.forward(images)[0]
    out = [model.forward(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def predict(model: Model, image):
    """(class index, probability vector) for one image; ties go to the lowest index."""
    probs = predict_proba(model, image)
    return int(np.argmax(probs)), probs


def evaluate(model: Model, images, labels) -> float:
    labels = np.asarray(labels, dtype=int)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    pred = np.argmax(predict_proba(model, images), axis=1)
    return float(np.mean(pred == labels))


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc"])
        for rec in history:
            w.writerow([rec.epoch, repr(float(rec.loss)), repr(float(rec.train_acc))])
