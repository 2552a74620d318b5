"""Optimization loop pieces: SGD over parameter groups, epochs, early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, cross_entropy_from_logits, no_grad
from .autograd.tensor import Parameter
from .models import Model

log = logging.getLogger(__name__)


class MissingGradientError(RuntimeError):
    pass


@dataclass
class Split:
    """In-memory examples: ``x`` is [N, 1, frames, mels] float32, ``y`` class indices."""

    x: np.ndarray
    y: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class ParamGroup:
    name: str
    params: list[tuple[str, Parameter]]
    lr: float
    weight_decay: float = 0.0
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"group {self.name}: learning rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError(f"group {self.name}: weight decay must be >= 0")


class SGD:
    """Heavy-ball SGD with L2 decay added to the gradient before the momentum buffer::

        v <- momentum * v + (grad + weight_decay * p)
        p <- p - lr * v
    """

    def __init__(self, groups: Sequence[ParamGroup]) -> None:
        self.groups = list(groups)
        seen: set[int] = set()
        for g in self.groups:
            for name, p in g.params:
                if id(p) in seen:
                    raise ValueError(f"parameter {name} appears in more than one group")
                seen.add(id(p))
        self.velocity: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for g in self.groups:
            for _, p in g.params:
                p.grad = None

    def step(self) -> None:
        for g in self.groups:
            for name, p in g.params:
                if p.grad is None:
                    raise MissingGradientError(f"no gradient for {name}")
                d = p.grad + g.weight_decay * p.data if g.weight_decay else p.grad
                v = self.velocity.get(id(p))
                v = d.copy() if v is None else g.momentum * v + d
                self.velocity[id(p)] = v
                p.data -= (g.lr * v).astype(p.dtype)


def single_group(model: Model, lr: float, weight_decay: float = 0.0, momentum: float = 0.9) -> list[ParamGroup]:
    return [ParamGroup("all", list(model.named_parameters()), lr, weight_decay, momentum)]


def head_body_groups(
    model: Model,
    head_lr: float = 0.005,
    head_wd: float = 1e-4,
    body_lr: float = 0.001,
    body_wd: float = 0.0,
    momentum: float = 0.9,
) -> list[ParamGroup]:
    parts = model.parameter_groups()
    return [
        ParamGroup("head", parts["head"], head_lr, head_wd, momentum),
        ParamGroup("body", parts["body"], body_lr, body_wd, momentum),
    ]


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    n_batches: int


@dataclass
class Metrics:
    loss: float
    accuracy: float
    n: int


def iter_batches(n: int, batch_size: int, order: np.ndarray | None = None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_epoch(model: Model, split: Split, optimizer: SGD, batch_size: int, rng: np.random.Generator) -> EpochMetrics:
    """One shuffled pass with one optimizer step per batch; metrics are example-weighted."""
    if len(split) == 0:
        raise ValueError("cannot train on an empty split")
    model.train()
    total_loss, correct, batches = 0.0, 0, 0
    for idx in iter_batches(len(split), batch_size, rng.permutation(len(split))):
        logits = model(Tensor(split.x[idx]))
        loss = cross_entropy_from_logits(logits, split.y[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total_loss += loss.item() * len(idx)
        correct += int((logits.data.argmax(axis=1) == split.y[idx]).sum())
        batches += 1
    return EpochMetrics(total_loss / len(split), correct / len(split), batches)


def predict(model: Model, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits, batch by batch."""
    model.eval()
    out = []
    with no_grad():
        for idx in iter_batches(len(x), batch_size):
            out.append(model(Tensor(x[idx])).data)
    return np.concatenate(out)


def evaluate(model: Model, split: Split, batch_size: int = 64) -> Metrics:
    """Accuracy and mean loss in eval mode; leaves parameters and running statistics untouched."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    logits = predict(model, split.x, batch_size)
    loss = cross_entropy_from_logits(Tensor(logits.astype(np.float64)), split.y).item()
    acc = float((logits.argmax(axis=1) == split.y).mean())
    return Metrics(loss, acc, len(split))


@dataclass
class EarlyStopState:
    """Tracks the best validation metric; ties keep the earlier epoch."""

    patience: int = 10
    best_metric: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    best_checkpoint: dict | None = None

    def update(self, epoch: int, metric: float, snapshot: Callable[[], dict]) -> bool:
        """Record ``metric`` for ``epoch`` (1-based); True when training should stop."""
        if metric > self.best_metric:
            self.best_metric, self.best_epoch = metric, epoch
            self.epochs_since_improvement = 0
            self.best_checkpoint = snapshot()
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


@dataclass
class FitResult:
    history: list[dict]
    best_epoch: int
    stopped_epoch: int
    early_stopped: bool


def fit_with_early_stopping(
    model: Model,
    train_one: Callable[[int], EpochMetrics],
    validate: Callable[[int], float],
    patience: int = 10,
    max_epochs: int = 500,
) -> FitResult:
    """Train until validation stops improving for ``patience`` epochs, then reload the best epoch."""
    state = EarlyStopState(patience)
    history = []
    stopped = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        m = train_one(epoch)
        val = validate(epoch)
        history.append({"epoch": epoch, "train_loss": m.loss, "train_acc": m.accuracy, "val_acc": val})
        log.debug("epoch %d loss %.4f train %.3f val %.3f", epoch, m.loss, m.accuracy, val)
        if state.update(epoch, val, model.state_dict):
            stopped = True
            break
    if state.best_checkpoint is not None:
        model.load_state_dict(state.best_checkpoint)
    return FitResult(history, state.best_epoch, epoch, stopped)


def train_fixed_epochs(
    model: Model,
    optimizer: SGD,
    train: Split,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    val: Split | None = None,
) -> list[dict]:
    history = []
    for epoch in range(1, epochs + 1):
        m = train_epoch(model, train, optimizer, batch_size, rng)
        val_acc = evaluate(model, val, batch_size).accuracy if val is not None and len(val) else None
        history.append({"epoch": epoch, "train_loss": m.loss, "train_acc": m.accuracy, "val_acc": val_acc})
    return history
