"""Optimizer, learning-rate schedule, loss, and the epoch loop.

The recipe: AdamW with decoupled weight decay, learning rate warmed up
linearly to the peak and then cosine-annealed, sigmoid cross-entropy with
optional inverse-sqrt-frequency class weights, and a classifier bias seeded
from a class prior. Sets are ragged, so minibatches accumulate per-sample
gradients and step once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .errors import DataError, NumericError
from .seeding import derive_rng, sample_rng


@dataclass
class ScheduleConfig:
    """Linear warmup to ``peak_lr`` followed by cosine decay to ``min_lr``."""

    total_epochs: int
    warmup_epochs: int = 5
    peak_lr: float = 0.001
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError(
                f"warmup_epochs must lie in [0, total_epochs): "
                f"{self.warmup_epochs} vs {self.total_epochs}"
            )
        if not self.peak_lr > self.min_lr >= 0.0:
            raise ValueError(f"need peak_lr > min_lr >= 0, got {self.peak_lr}, {self.min_lr}")


def lr_at(schedule: ScheduleConfig, progress: float) -> float:
    """Learning rate at fractional epoch ``progress`` in [0, total_epochs]."""
    s = schedule
    if not 0.0 <= progress <= s.total_epochs:
        raise ValueError(f"progress {progress} outside [0, {s.total_epochs}]")
    if progress < s.warmup_epochs:
        return s.peak_lr * progress / s.warmup_epochs
    frac = (progress - s.warmup_epochs) / (s.total_epochs - s.warmup_epochs)
    return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + math.cos(math.pi * frac))


class AdamWState:
    """Per-parameter moment buffers plus the shared step counter."""

    def __init__(self, params: dict[str, T.Tensor], base_lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.t = 0
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay


def adamw_step(params: dict[str, T.Tensor], grads: dict[str, Optional[np.ndarray]],
               state: AdamWState, lr: float) -> None:
    """One AdamW update: bias-corrected Adam step, then theta *= 1 - lr*wd.

    The decay is decoupled from the gradient term, so a zero-gradient step
    is a pure multiplicative shrink. A parameter with no gradient this step
    (grads entry None) still has its moments decayed and its decay applied.
    """
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        v *= state.beta2
        if g is not None:
            m += (1.0 - state.beta1) * g
            v += (1.0 - state.beta2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay


def weighted_sigmoid_ce(logits: T.Tensor, targets: np.ndarray, weights: np.ndarray) -> T.Tensor:
    """Class-weighted sigmoid cross-entropy, averaged over classes.

    Stable for logits of any magnitude; targets must be exactly 0/1.
    """
    z = logits.data
    if z.ndim != 2 or z.shape[0] != 1:
        raise ValueError(f"expected [1,C] logits, got shape {z.shape}")
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    n_classes = z.shape[1]
    if t.shape[0] != n_classes or w.shape[0] != n_classes:
        raise ValueError(f"targets/weights must have {n_classes} entries")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("targets must be binary 0/1")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise ValueError("class weights must be positive and finite")
    zr = z[0]
    per_class = np.maximum(zr, 0.0) - zr * t + np.log1p(np.exp(-np.abs(zr)))
    out = T.Tensor([[float((w * per_class).sum() / n_classes)]])

    def backward_fn():
        g = out.grad
        if g is None:
            return
        dz = (w * (T.sigmoid_values(zr) - t) / n_classes * g[0, 0])[None, :]
        T.accumulate_grad(logits, dz)

    return T.register_op(out, (logits,), backward_fn)


def init_classifier_bias(num_classes: int, prior: float = 0.01) -> np.ndarray:
    """[1,C] bias vector with every entry -log((1-prior)/prior)."""
    if not 0.0 < prior < 1.0:
        raise ValueError(f"prior must lie in (0, 1), got {prior}")
    return np.full((1, num_classes), -math.log((1.0 - prior) / prior))


def inverse_sqrt_class_weights(label_matrix: np.ndarray) -> np.ndarray:
    """Per-class weights 1/sqrt(freq), normalized to mean 1.

    Frequency is the per-class positive rate over the samples. Classes with
    no positives are counted as having one, which keeps every weight finite.
    """
    labels = np.asarray(label_matrix, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise ValueError("need a nonempty [n,C] label matrix")
    counts = np.maximum(labels.sum(axis=0), 1.0)
    w = 1.0 / np.sqrt(counts / labels.shape[0])
    return w / w.mean()


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 32
    peak_lr: float = 0.001
    warmup_epochs: int = 5
    min_lr: float = 0.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    class_weighting: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(
                f"warmup_epochs must lie in [0, epochs): "
                f"{self.warmup_epochs} vs {self.epochs}")


def _accuracy_terms(scores: np.ndarray, labels: np.ndarray, task: str) -> float:
    if task == "single_label":
        return float(np.argmax(scores) == np.argmax(labels))
    return float(np.mean((scores >= 0.5) == (labels == 1)))


def train(model, samples, config: TrainConfig, task: str = "single_label",
          on_epoch: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Run the full training loop in place; returns the per-epoch history.

    Args:
        model: a fusion or concat model exposing ``forward(sample, training,
            rng)`` and ``named_parameters()``.
        samples: sequence of dataset samples.
        config: optimizer/schedule settings; ``config.seed`` drives epoch
            shuffling, subsampling, and dropout, so identical configs give
            bit-identical trained parameters.
        task: "single_label" or "multi_label", for the logged accuracy.
        on_epoch: optional callback receiving each epoch's log record.

    Each epoch shuffles the sample order and walks minibatches; sets are
    ragged so the loop runs one forward/backward per sample, scaling each
    loss by the batch size, and steps the optimizer once per batch.
    """
    if not samples:
        raise DataError("cannot train on an empty dataset")
    params = model.named_parameters()
    state = AdamWState(params, base_lr=config.peak_lr, beta1=config.beta1,
                       beta2=config.beta2, eps=config.eps,
                       weight_decay=config.weight_decay)
    schedule = ScheduleConfig(total_epochs=config.epochs,
                              warmup_epochs=config.warmup_epochs,
                              peak_lr=config.peak_lr, min_lr=config.min_lr)
    if config.class_weighting:
        weights = inverse_sqrt_class_weights(np.stack([s.labels for s in samples]))
    else:
        weights = np.ones(model.num_classes)

    history = []
    n = len(samples)
    for epoch in range(config.epochs):
        lr = lr_at(schedule, epoch)
        order = derive_rng(config.seed, "shuffle", epoch).permutation(n)
        loss_sum = 0.0
        acc_sum = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            for p in params.values():
                p.grad = None
            for i in batch:
                s = samples[i]
                rng = sample_rng(config.seed, epoch, s.sample_id)
                with T.Tape():
                    logits, _ = model.forward(s, training=True, rng=rng)
                    loss = weighted_sigmoid_ce(logits, s.labels, weights)
                    scaled = T.scale(loss, 1.0 / len(batch))
                T.backward(scaled)
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, sample {s.sample_id!r}"
                    )
                loss_sum += loss_value
                acc_sum += _accuracy_terms(T.sigmoid_values(logits.data[0]), s.labels, task)
            adamw_step(params, {name: p.grad for name, p in params.items()}, state, lr)
        record = {
            "epoch": epoch,
            "lr": lr,
            "loss": loss_sum / n,
            "train_accuracy": acc_sum / n,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return history


def kfold_split(num_samples: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic shuffled k-fold partition of ``range(num_samples)``.

    Returns k (train_indices, eval_indices) pairs; eval folds are disjoint,
    cover every index, and differ in size by at most one (larger folds
    first).
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if num_samples < k:
        raise ValueError(f"dataset of {num_samples} samples is smaller than k={k}")
    perm = np.random.default_rng(seed).permutation(num_samples)
    folds = np.array_split(perm, k)
    splits = []
    for i in range(k):
        train_idx = np.concatenate([folds[j] for j in range(k) if j != i])
        splits.append((train_idx, folds[i]))
    return splits
