"""Auxiliary losses for semi-supervised training and pseudo-label hygiene."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, log_softmax
from .layers import dropout

IGNORE = -1


@dataclass
class PseudoLabelSet:
    """Integer labels per element; ``IGNORE`` marks erased entries."""

    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        bad = (self.labels != IGNORE) & ((self.labels < 0) | (self.labels >= self.n_classes))
        if np.any(bad):
            raise ValueError(f"labels must be IGNORE or in [0, {self.n_classes})")

    @property
    def fraction_ignored(self) -> float:
        return float(np.mean(self.labels == IGNORE)) if self.labels.size else 0.0

    def checksum(self) -> str:
        return hashlib.sha256(self.labels.tobytes()).hexdigest()

    def dumps(self) -> str:
        flat = self.labels.reshape(-1)
        return f"n: {flat.size} k: {self.n_classes}\n" + "".join(f"{v}\n" for v in flat)

    @classmethod
    def loads(cls, text: str) -> "PseudoLabelSet":
        head, *rows = text.strip().splitlines()
        fields = head.split()
        if len(fields) != 4 or fields[0] != "n:" or fields[2] != "k:":
            raise ValueError(f"bad header {head!r}")
        n, k = int(fields[1]), int(fields[3])
        labels = np.array([int(r) for r in rows], dtype=np.int64)
        if labels.size != n:
            raise ValueError(f"header promises {n} labels, found {labels.size}")
        return cls(labels, k)


def self_perturbation_loss(z, z_star) -> Tensor:
    """Mean over every entry of the squared gap between two predictions."""
    z, z_star = as_tensor(z), as_tensor(z_star)
    if z.shape != z_star.shape:
        raise ShapeError("self_perturbation_loss", z.shape, z_star.shape)
    diff = z - z_star
    return (diff * diff).mean()


def contrastive_loss(z_i, z_j, same: bool, margin: float = 1.0) -> Tensor:
    """Pull same-label pairs together; push others apart up to ``margin``.

    The distance is the mean squared difference. At ``Dist == margin`` the
    hinge derivative is taken as zero.
    """
    z_i, z_j = as_tensor(z_i), as_tensor(z_j)
    if z_i.shape != z_j.shape:
        raise ShapeError("contrastive_loss", z_i.shape, z_j.shape)
    diff = z_i - z_j
    dist = (diff * diff).mean()
    return dist if same else (margin - dist).relu()


def masked_cross_entropy(o, labels) -> Tensor:
    """Cross-entropy averaged over non-ignored elements.

    ``o`` holds logits with classes on the last axis; ``labels`` has the
    leading shape of ``o`` and may contain ``IGNORE``.
    """
    o = as_tensor(o)
    if isinstance(labels, PseudoLabelSet):
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != o.shape[:-1]:
        raise ShapeError("masked_cross_entropy", o.shape, labels.shape)
    n_classes = o.shape[-1]
    o = o.reshape(-1, n_classes)
    labels = labels.reshape(-1)
    keep = np.flatnonzero(labels != IGNORE)
    if keep.size == 0:
        raise ValueError("every label is IGNORE; the mean loss is undefined")
    if labels[keep].max() >= n_classes or labels[keep].min() < 0:
        raise ValueError("label out of range")
    logp = log_softmax(o[keep], axis=1)
    return -logp[np.arange(keep.size), labels[keep]].mean()


def ema_update(teacher: dict, student: dict, beta: float = 0.9) -> dict:
    """``teacher * beta + student * (1 - beta)`` for every parameter.

    Accepts arrays or tensors; returns plain arrays.
    """
    if not 0 <= beta <= 1:
        raise ValueError("EMA beta must be in [0, 1]")
    out = {}
    for name, t in teacher.items():
        t = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        s = student[name]
        s = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
        if t.shape != s.shape:
            raise ShapeError(f"ema_update {name}", t.shape, s.shape)
        out[name] = t * beta + s * (1.0 - beta)
    return out


def consistency_feature_loss(f_student, f_teacher, p_drop: float,
                             rng: np.random.Generator | None = None) -> Tensor:
    """Mean absolute gap between independently dropped, pooled features.

    Features shaped ``(B, S, E)`` are average-pooled over ``S`` first.
    """
    f_student, f_teacher = as_tensor(f_student), as_tensor(f_teacher)
    if f_student.shape != f_teacher.shape:
        raise ShapeError("consistency_feature_loss", f_student.shape, f_teacher.shape)
    if f_student.ndim == 3:
        f_student, f_teacher = f_student.mean(axis=1), f_teacher.mean(axis=1)
    fs = dropout(f_student, p_drop, rng)
    ft = dropout(f_teacher, p_drop, rng)
    return (fs - ft).abs().mean()


def erase_low_confidence(c, phi: float, n_classes: int | None = None) -> PseudoLabelSet:
    """Argmax labels where the top probability reaches ``phi``, ``IGNORE`` elsewhere."""
    c = np.asarray(c.data if isinstance(c, Tensor) else c, dtype=np.float64)
    if not 0 <= phi <= 1:
        raise ValueError("phi must be in [0, 1]")
    if np.any(c < 0) or not np.allclose(c.sum(axis=-1), 1.0, atol=1e-6):
        raise ValueError("rows must be probability distributions")
    labels = np.argmax(c, axis=-1)
    labels = np.where(c.max(axis=-1) >= phi, labels, IGNORE)
    return PseudoLabelSet(labels, n_classes or c.shape[-1])


def soften_logits(y, beta: float) -> np.ndarray:
    """``softmax(beta * y)`` over the last axis; small ``beta`` flattens it."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64) * beta
    y = y - y.max(axis=-1, keepdims=True)
    e = np.exp(y)
    return e / e.sum(axis=-1, keepdims=True)
