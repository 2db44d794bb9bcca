"""Optimizer, learning-rate schedules, evaluation and weight statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .arch import Model, build_model
from .data import Dataset, batches
from .errors import NumericalError
from .tensor import Tensor
from .zoo import build_zoo_arch


class SGDMomentum:
    """Classical momentum SGD with coupled weight decay.

    Update rule:  v <- m * v + g + wd * theta;  theta <- theta - lr * v.
    """

    def __init__(self, params: list[tuple[str, Tensor]], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        if momentum < 0 or weight_decay < 0:
            raise ValueError("momentum and weight decay must be non-negative")
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for _, p in params]

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        for (name, p), v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch on {name}")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v


def sgd_momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                      lr: float, momentum: float = 0.9,
                      weight_decay: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """One update on raw arrays; returns (new_param, new_velocity)."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ValueError("parameter/gradient/velocity shapes must match")
    v = momentum * velocity + grad + weight_decay * param
    return param - lr * v, v


def constant_schedule(lr: float) -> Callable[[int], float]:
    if lr <= 0:
        raise ValueError("learning rate must be positive")

    def schedule(step: int) -> float:
        if step < 0:
            raise ValueError("step must be non-negative")
        return lr

    return schedule


def step_decay_schedule(lr0: float, factor: float = 0.92, every: int = 4000,
                        floor: float | None = None) -> Callable[[int], float]:
    """lr0 * factor ** (step // every), optionally clamped to a floor."""
    if lr0 <= 0 or not 0 < factor <= 1 or every < 1:
        raise ValueError("invalid schedule parameters")

    def schedule(step: int) -> float:
        if step < 0:
            raise ValueError("step must be non-negative")
        lr = lr0 * factor ** (step // every)
        if floor is not None:
            lr = max(lr, floor)
        return lr

    return schedule


@dataclass
class EvalResult:
    """Error counts over a dataset; for closed-set classification the
    insertion and deletion counts are zero."""

    total: int
    substitutions: int
    insertions: int = 0
    deletions: int = 0

    def __post_init__(self):
        if min(self.total, self.substitutions, self.insertions, self.deletions) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def cer(self) -> float:
        return (self.substitutions + self.insertions + self.deletions) / self.total

    @property
    def accuracy(self) -> float:
        return 1.0 - self.cer


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> EvalResult:
    """Argmax classification error rate; ties break to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    wrong = 0
    for images, labels in batches(dataset, batch_size, shuffle_seed=None):
        logits = model.forward(images, training=False)
        pred = np.argmax(logits.data, axis=1)
        wrong += int((pred != labels).sum())
    return EvalResult(total=len(dataset), substitutions=wrong)


def train_classifier(model: Model, train_data: Dataset, epochs: int,
                     batch_size: int = 64,
                     schedule: Callable[[int], float] | None = None,
                     momentum: float = 0.9, weight_decay: float = 1e-4,
                     seed: int = 0, eval_data: Dataset | None = None,
                     checkpoint_prefix=None) -> list[dict]:
    """Plain cross-entropy training; returns per-iteration metrics rows
    (epoch, iteration, loss, lr, test_error).

    With ``checkpoint_prefix`` the model is saved after every epoch, so a
    divergence abort leaves the last completed epoch's weights in place.
    """
    from .distill import cross_entropy  # local import to avoid a cycle

    schedule = schedule or constant_schedule(0.01)
    opt = SGDMomentum(model.params(), momentum=momentum, weight_decay=weight_decay)
    metrics: list[dict] = []
    iteration = 0
    for epoch in range(epochs):
        for images, labels in batches(train_data, batch_size,
                                      shuffle_seed=seed + epoch):
            logits = model.forward(images, training=True)
            loss = cross_entropy(T.log_softmax(logits), labels)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"training diverged at iteration {iteration} (loss={value}); "
                    f"last epoch checkpoint retained")
            model.zero_grad()
            loss.backward()
            lr = schedule(iteration)
            opt.step(lr)
            metrics.append({"epoch": epoch, "iteration": iteration,
                            "loss": value, "lr": lr, "test_error": ""})
            iteration += 1
        if eval_data is not None:
            err = evaluate(model, eval_data).cer
            metrics.append({"epoch": epoch, "iteration": iteration,
                            "loss": "", "lr": "", "test_error": err})
        if checkpoint_prefix is not None:
            model.save(checkpoint_prefix)
    return metrics


def build_zoo_model(name: str, seed: int = 0) -> Model:
    """Instantiate a named zoo architecture with seeded initialization."""
    return build_model(build_zoo_arch(name), seed=seed)


def weight_histogram(model: Model, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of all conv/linear weights (biases and BN excluded).

    Returns (bin_edges, counts) with a symmetric range around zero.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    weights = [p.data.reshape(-1) for name, p in model.params()
               if name.endswith("weight") and p.ndim >= 2]
    if not weights:
        raise ValueError("model has no conv/linear weights")
    flat = np.concatenate(weights)
    limit = float(np.abs(flat).max())
    if limit == 0.0:
        limit = 1.0
    counts, edges = np.histogram(flat, bins=bins, range=(-limit, limit))
    return edges, counts


def histogram_csv(edges: np.ndarray, counts: np.ndarray) -> str:
    lines = ["bin_left,bin_right,count"]
    for i, c in enumerate(counts):
        lines.append(f"{edges[i]:.8g},{edges[i + 1]:.8g},{int(c)}")
    return "\n".join(lines) + "\n"
