"""Teacher-student distillation: losses and the training loop.

The objective combines three terms,

    loss = mu * soft_label_loss + beta * hard_label_loss + lambda * sp_loss

where the soft-label term is the cross entropy of the student's
log-posteriors against the frozen teacher's posteriors (the constant
teacher-entropy part of the KL divergence is dropped), the hard-label term
is the usual cross entropy against ground truth, and the solving-procedure
term compares Frobenius-normalized differences of attention maps taken at
matching points of the two networks.

All components are averaged over the minibatch so the weights are
batch-size independent; the logged component values are pre-weighting.
Teacher activations are treated as constants: no gradient ever reaches
teacher parameters.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .arch import Model
from .data import Dataset, batches
from .errors import NumericalError
from .tensor import Tensor
from .train import SGDMomentum, constant_schedule

log = logging.getLogger(__name__)

ZERO_NORM_EPS = 1e-12
_NORM_TINY = 1e-30   # keeps sqrt differentiable at an all-zero map


def attention_map(feature: Tensor) -> Tensor:
    """Plain channel sum of a (N, C, H, W) feature map -> (N, H, W)."""
    if feature.ndim != 4:
        raise ValueError(f"attention_map expects a 4-D feature map, got {feature.shape}")
    return T.tsum(feature, axis=1)


def spm(a_i: Tensor, a_j: Tensor) -> Tensor:
    """Solving-procedure matrix: elementwise a_j - a_i for a tap pair (i, j)."""
    if a_i.shape != a_j.shape:
        raise ValueError(f"attention maps differ in shape: {a_i.shape} vs {a_j.shape}")
    return T.sub(a_j, a_i)


def _normalized(s: Tensor) -> tuple[Tensor, np.ndarray]:
    """Per-sample Frobenius-normalized map and the raw norms (constants)."""
    ssq = T.tsum(T.square(s), axis=(1, 2), keepdims=True)
    norm = T.sqrt(T.add(ssq, Tensor(np.asarray(_NORM_TINY, dtype=s.dtype))))
    return T.div(s, norm), np.sqrt(ssq.data)


def sp_loss(teacher_spms: list[Tensor], student_spms: list[Tensor]) -> Tensor:
    """Mean squared distance of normalized teacher/student solving procedures.

    Terms whose teacher or student map has Frobenius norm below 1e-12
    contribute zero for that sample/pair. The result is averaged over the
    minibatch and over the number of pairs.
    """
    if len(teacher_spms) != len(student_spms):
        raise ValueError(f"SPM list lengths differ: {len(teacher_spms)} vs "
                         f"{len(student_spms)}")
    n_pairs = len(teacher_spms)
    if n_pairs == 0:
        raise ValueError("need at least one SPM pair")
    total: Tensor | None = None
    batch = None
    for s_teacher, s_student in zip(teacher_spms, student_spms):
        if s_teacher.shape != s_student.shape:
            raise ValueError(f"SPM shapes differ: {s_teacher.shape} vs "
                             f"{s_student.shape}")
        if s_student.ndim != 3:
            raise ValueError("SPMs must be (batch, D, D)")
        batch = s_student.shape[0]
        t_ssq = (s_teacher.data.astype(s_student.dtype) ** 2).sum(
            axis=(1, 2), keepdims=True)
        t_hat = s_teacher.data / np.sqrt(t_ssq + _NORM_TINY)
        s_hat, s_norm = _normalized(s_student)
        mask = ((np.sqrt(t_ssq) >= ZERO_NORM_EPS) & (s_norm >= ZERO_NORM_EPS))
        diff = T.sub(s_hat, Tensor(t_hat))
        per_sample = T.tsum(T.square(diff), axis=(1, 2), keepdims=True)
        term = T.tsum(T.mul(per_sample, Tensor(mask.astype(s_student.dtype))))
        total = term if total is None else T.add(total, term)
    scale = Tensor(np.asarray(1.0 / (n_pairs * batch), dtype=total.dtype))
    return T.mul(total, scale)


def soft_cross_entropy(student_log_probs: Tensor, teacher_probs: Tensor | np.ndarray,
                       ) -> Tensor:
    """- mean_t sum_s p_teacher(s) * log p_student(s); teacher is constant."""
    probs = teacher_probs.data if isinstance(teacher_probs, Tensor) else \
        np.asarray(teacher_probs)
    if probs.shape != student_log_probs.shape:
        raise ValueError(f"shape mismatch: teacher {probs.shape} vs student "
                         f"{student_log_probs.shape}")
    row_sums = probs.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-4:
        raise ValueError("teacher posterior rows must sum to 1 (within 1e-4)")
    batch = student_log_probs.shape[0]
    weighted = T.mul(student_log_probs, Tensor(probs.astype(student_log_probs.dtype)))
    return T.mul(T.tsum(weighted),
                 Tensor(np.asarray(-1.0 / batch, dtype=student_log_probs.dtype)))


def cross_entropy(student_log_probs: Tensor, labels: np.ndarray) -> Tensor:
    """- mean_t log p_student(label_t)."""
    labels = np.asarray(labels)
    batch, n_classes = student_log_probs.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels must be ({batch},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels out of range [0, {n_classes})")
    onehot = np.zeros((batch, n_classes), dtype=student_log_probs.dtype)
    onehot[np.arange(batch), labels] = 1.0
    picked = T.mul(student_log_probs, Tensor(onehot))
    return T.mul(T.tsum(picked),
                 Tensor(np.asarray(-1.0 / batch, dtype=student_log_probs.dtype)))


def kd_loss(student_log_probs: Tensor, teacher_probs: Tensor | np.ndarray,
            hard_labels: np.ndarray, mu: float, beta: float) -> Tensor:
    """mu * soft-label cross entropy + beta * hard-label cross entropy."""
    if mu < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")
    if mu + beta <= 0:
        raise ValueError("mu + beta must be positive")
    soft = soft_cross_entropy(student_log_probs, teacher_probs)
    hard = cross_entropy(student_log_probs, hard_labels)
    return T.add(T.mul(soft, Tensor(np.asarray(mu, soft.dtype))),
                 T.mul(hard, Tensor(np.asarray(beta, hard.dtype))))


def total_loss(kd: Tensor, sp: Tensor, lam: float) -> Tensor:
    """kd + lambda * sp; differentiable through the student only."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return T.add(kd, T.mul(sp, Tensor(np.asarray(lam, sp.dtype))))


@dataclass
class DistillConfig:
    """Weights, tap pairs, optimizer settings and the seed for one run."""

    mu: float = 0.8
    beta: float = 0.2
    lam: float = 0.1
    tap_pairs: list[tuple[str, str]] | None = None   # None: derive from the arch
    epochs: int = 1
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0    # iterations; 0 = once per epoch

    def __post_init__(self):
        if self.mu < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("loss weights must be non-negative")
        if self.mu + self.beta <= 0:
            raise ValueError("mu + beta must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid batch size or epoch count")


def resolve_tap_pairs(teacher: Model, student: Model,
                      config: DistillConfig) -> list[tuple[str, str]]:
    pairs = config.tap_pairs or teacher.arch.default_tap_pairs()
    if not pairs:
        raise ValueError("no tap pairs available; architectures carry no taps")
    t_shapes = teacher.arch.tap_shapes()
    s_shapes = student.arch.tap_shapes()
    for i, j in pairs:
        for name in (i, j):
            if name not in t_shapes:
                raise ValueError(f"teacher has no tap named {name!r}")
            if name not in s_shapes:
                raise ValueError(f"student has no tap named {name!r}")
            if t_shapes[name][1:] != s_shapes[name][1:]:
                raise ValueError(
                    f"tap {name!r} spatial mismatch: teacher {t_shapes[name]} vs "
                    f"student {s_shapes[name]}")
        if t_shapes[i][1:] != t_shapes[j][1:]:
            raise ValueError(f"tap pair ({i}, {j}) differs in spatial size")
    return list(pairs)


def spms_from_taps(taps: dict[str, Tensor],
                   pairs: list[tuple[str, str]]) -> list[Tensor]:
    return [spm(attention_map(taps[i]), attention_map(taps[j])) for i, j in pairs]


def distill_train(teacher: Model, student: Model, train_data: Dataset,
                  config: DistillConfig, run_dir: str | Path | None = None,
                  ) -> list[dict]:
    """Minibatch SGD of the student against the frozen teacher.

    Returns one metrics row per iteration: iteration, kl, ce, sp, total, lr
    (component losses pre-weighting). A NaN/Inf loss aborts with
    NumericalError; the most recent periodic checkpoint is left in place.
    """
    pairs = resolve_tap_pairs(teacher, student, config)
    teacher.set_requires_grad(False)
    opt = SGDMomentum(student.params(), momentum=config.momentum,
                      weight_decay=config.weight_decay)
    schedule = constant_schedule(config.lr)
    run_dir = Path(run_dir) if run_dir is not None else None
    metrics: list[dict] = []
    iteration = 0
    for epoch in range(config.epochs):
        for images, labels in batches(train_data, config.batch_size,
                                      shuffle_seed=config.seed + epoch):
            t_taps: dict[str, Tensor] = {}
            t_logits = teacher.forward(images, training=False, taps=t_taps)
            t_probs = T.softmax(t_logits).data

            s_taps: dict[str, Tensor] = {}
            s_logits = student.forward(images, training=True, taps=s_taps)
            log_probs = T.log_softmax(s_logits)

            kl = soft_cross_entropy(log_probs, t_probs)
            ce = cross_entropy(log_probs, labels)
            sp = sp_loss(spms_from_taps(t_taps, pairs), spms_from_taps(s_taps, pairs))
            loss = total_loss(
                kd_loss(log_probs, t_probs, labels, config.mu, config.beta),
                sp, config.lam)

            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"distillation diverged at iteration {iteration} "
                    f"(loss={value}); last checkpoint retained")
            student.zero_grad()
            loss.backward()
            lr = schedule(iteration)
            opt.step(lr)
            metrics.append({"iteration": iteration, "kl": kl.item(),
                            "ce": ce.item(), "sp": sp.item(), "total": value,
                            "lr": lr})
            iteration += 1
            if run_dir is not None and config.checkpoint_every \
                    and iteration % config.checkpoint_every == 0:
                student.save(run_dir / "student_last")
        if run_dir is not None:
            student.save(run_dir / "student_last")
            student.save(run_dir / f"student_epoch{epoch + 1}")
    return metrics
