"""Batch samplers, SGD with momentum and learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class BatchPlan:
    batches: list[np.ndarray]
    batch_size: int
    classes_per_batch: int | None = None

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)


def class_balanced_batches(labels, batch_size: int, classes_per_batch: int,
                           rng: np.random.Generator) -> BatchPlan:
    """One epoch of batches, each with ``classes_per_batch`` classes and
    ``batch_size // classes_per_batch`` examples per class.

    Each class's examples are shuffled and cut into chunks; chunks that do
    not fill a whole slot, and slots that cannot complete a batch, are dropped.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    per_class = batch_size // classes_per_batch
    if classes_per_batch < 1 or per_class < 1:
        raise ValueError("need batch_size >= classes_per_batch >= 1")
    if classes_per_batch > classes.size:
        raise ValueError(f"{classes_per_batch} classes per batch but only {classes.size} classes")
    chunks = {}
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if idx.size < per_class:
            raise ValueError(f"class {c} has {idx.size} examples, needs {per_class}")
        idx = rng.permutation(idx)
        n = idx.size // per_class
        chunks[c] = [idx[i * per_class:(i + 1) * per_class] for i in range(n)]
    batches = []
    while True:
        available = [c for c in classes if chunks[c]]
        if len(available) < classes_per_batch:
            break
        # favour classes with the most chunks left so fewer get stranded
        counts = np.array([len(chunks[c]) for c in available], dtype=float)
        pick = rng.choice(len(available), size=classes_per_batch, replace=False,
                          p=counts / counts.sum())
        batches.append(np.concatenate([chunks[available[i]].pop() for i in pick]))
    return BatchPlan(batches, per_class * classes_per_batch, classes_per_batch)


def random_batches(n: int, batch_size: int, rng: np.random.Generator) -> BatchPlan:
    """Uniformly shuffled batches; the last partial batch is dropped."""
    order = rng.permutation(n)
    n_batches = n // batch_size
    return BatchPlan([order[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)],
                     batch_size)


class SGD:
    """SGD with momentum and L2 weight decay.

    ``v = momentum * v + g + weight_decay * theta`` then
    ``theta -= lr * schedule_scale * multiplier * v``.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0, lr_multipliers: dict[str, float] | None = None,
                 no_decay: set[str] | frozenset = frozenset()):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_multipliers = dict(lr_multipliers or {})
        self.no_decay = set(no_decay)
        self.velocity = {k: np.zeros(p.shape) for k, p in params.items()}
        self.iteration = 0

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        missing = set(self.params) - set(grads)
        if missing:
            raise KeyError(f"missing gradients for {sorted(missing)}")
        for name, p in self.params.items():
            g = grads[name]
            if self.weight_decay and name not in self.no_decay:
                g = g + self.weight_decay * p.data
            v = self.momentum * self.velocity[name] + g
            self.velocity[name] = v
            lr = self.lr * lr_scale * self.lr_multipliers.get(name, 1.0)
            p.data = p.data - lr * v
        self.iteration += 1


def poly_decay(base_lr: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base_lr * (1.0 - iteration / max_iter) ** power


def exponential_decay(base_lr: float, epoch: int, gamma: float = 0.94) -> float:
    return base_lr * gamma ** epoch


@dataclass
class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` evaluations
    without a new best score. Higher scores are better."""

    patience: int = 4
    factor: float = 0.1
    scale: float = 1.0
    best: float = -np.inf
    stale: int = 0
    reductions: list[int] = field(default_factory=list)
    _seen: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be a positive integer")
        if not 0 < self.factor < 1:
            raise ValueError("factor must be in (0, 1)")

    def step(self, score: float) -> float:
        if score > self.best:
            self.best = score
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.scale *= self.factor
                self.stale = 0
                self.reductions.append(self._seen)
        self._seen += 1
        return self.scale


def reduce_on_plateau(history, patience: int = 4, factor: float = 0.1) -> float:
    """Learning-rate scale after replaying a history of dev scores."""
    sched = ReduceOnPlateau(patience, factor)
    for score in history:
        sched.step(score)
    return sched.scale
