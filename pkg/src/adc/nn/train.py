"""Mini-batch training loop and evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from adc.nn.adam import AdamState, adam_step
from adc.nn.model import Model, loss_grads_correct, predict_proba
from adc.rng import Stream


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    train_scope: str = "all"
    shuffle: bool = True
    learning_rate: float = 1e-3

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.train_scope not in ("all", "dense_only"):
            raise ValueError(f"train_scope must be 'all' or 'dense_only', got {self.train_scope!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_acc: float


def argmax_first(p: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the smaller class index."""
    return np.argmax(p, axis=-1)


def train(model: Model, X, y, config: TrainConfig) -> tuple[Model, list[EpochStats]]:
    """Train for exactly ``config.epochs`` passes (no early stopping).

    ``X`` is (N, T, I), ``y`` is (N,). The input model is not modified.
    History reports the mean batch loss and the running training accuracy
    of each epoch, both measured on the batches as they were seen.
    """
    config.validate()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    model = model.copy()
    params = model.arrays()
    state = AdamState.fresh(params, alpha=config.learning_rate)
    shuffler = Stream(config.seed).substream("shuffle")
    history = []
    for epoch in range(config.epochs):
        order = shuffler.permutation(n) if config.shuffle else np.arange(n)
        total, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, hits, grads = loss_grads_correct(model, X[idx], y[idx], config.train_scope)
            # dense_only: zero LSTM gradients keep their moments at zero, so
            # Adam leaves those parameters bit-identical
            params, state = adam_step(params, grads, state)
            model = Model.from_arrays(params)
            params = model.arrays()
            total += loss * len(idx)
            correct += hits
        history.append(EpochStats(epoch + 1, total / n, correct / n))
    return model, history


def evaluate(model: Model, X, y) -> float:
    """Fraction of sequences whose most probable class equals the label."""
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    pred = argmax_first(predict_proba(model, X))
    return float(np.mean(pred == y))


def history_csv(history: list[EpochStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "train_acc"])
    for h in history:
        w.writerow([h.epoch, repr(float(h.loss)), repr(float(h.train_acc))])
    return buf.getvalue()
