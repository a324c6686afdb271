"""Proxy-based metric learning losses.

All losses take raw (un-normalized) embeddings and proxies and normalize
them internally, so rescaling either input by a positive constant leaves
the loss unchanged. Batch losses are averaged over the batch.

``beta`` is an inverse temperature: logits are multiplied by it, so large
values sharpen the softmax and small values flatten it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, log_softmax, logsumexp, softmax
from .layers import l2_normalize


@dataclass
class ProxySet:
    """One learnable proxy row per class, trained at its own rate."""

    proxies: Tensor
    lr_multiplier: float = 1.0

    def __post_init__(self):
        if self.lr_multiplier <= 0:
            raise ValueError("lr_multiplier must be positive")

    @classmethod
    def init(cls, n_classes: int, dim: int, rng: np.random.Generator,
             lr_multiplier: float = 1.0, scale: float = 1.0) -> "ProxySet":
        """Gaussian rows with standard deviation ``scale``.

        The losses normalize proxies, so ``scale`` only sets how far a raw
        proxy must travel to turn, i.e. how small its gradients are.
        """
        if scale <= 0:
            raise ValueError("proxy init scale must be positive")
        return cls(Tensor(scale * rng.standard_normal((n_classes, dim)), requires_grad=True),
                   lr_multiplier)

    @property
    def n_classes(self) -> int:
        return self.proxies.shape[0]


def _check_beta(beta: float) -> float:
    if not beta > 0:
        raise ValueError(f"inverse temperature must be positive, got {beta}")
    return float(beta)


def _labels(labels, batch: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise ShapeError("labels", (batch,), labels.shape)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must index one of {n_classes} proxies")
    return labels


def pairwise_sq_distance(a, b) -> Tensor:
    """``D[i, j] = ||a_i - b_j||^2`` for row sets ``a`` (B, E) and ``b`` (K, E)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError("pairwise_sq_distance", a.shape, b.shape)
    aa = (a * a).sum(axis=1, keepdims=True)
    bb = (b * b).sum(axis=1, keepdims=True).T
    return aa + bb - 2.0 * (a @ b.T)


def _normalized_distances(x, proxies) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return pairwise_sq_distance(l2_normalize(x), l2_normalize(proxies))


def nca_loss(x_i, same_class, diff_class) -> Tensor:
    """Negative log ratio of same-class to different-class neighbour mass.

    Uses raw squared Euclidean distances. Because the denominator omits the
    same-class points this is a ratio, not a probability, and can go negative.
    """
    x_i = as_tensor(x_i).reshape(1, -1)
    same_class, diff_class = as_tensor(same_class), as_tensor(diff_class)
    if diff_class.shape[0] < 1 or same_class.shape[0] < 1:
        raise ValueError("need at least one same-class and one different-class point")
    d_pos = pairwise_sq_distance(x_i, same_class).reshape(-1)
    d_neg = pairwise_sq_distance(x_i, diff_class).reshape(-1)
    return logsumexp(-d_neg, axis=0) - logsumexp(-d_pos, axis=0)


def proxynca_loss(x, labels, proxies, beta: float = 1.0) -> Tensor:
    """Classic ProxyNCA: own-proxy distance against the other proxies only.

    ``beta`` scales every distance; ``beta=1`` is the original loss.
    """
    beta = _check_beta(beta)
    proxies = as_tensor(proxies)
    K = proxies.shape[0]
    if K < 2:
        raise ValueError("ProxyNCA needs at least two proxies")
    d = _normalized_distances(x, proxies)
    if beta != 1.0:
        d = beta * d
    B = d.shape[0]
    labels = _labels(labels, B, K)
    rows = np.arange(B)
    others = np.array([[k for k in range(K) if k != y] for y in labels])
    return (d[rows, labels] + logsumexp(-d[rows[:, None], others], axis=1)).mean()


def proxy_assignment_distribution(x, proxies, beta: float = 1.0) -> Tensor:
    """Softmax over all proxies of ``-beta * distance``; rows sum to one."""
    beta = _check_beta(beta)
    d = _normalized_distances(x, proxies)
    out = softmax(-beta * d, axis=1)
    return out.reshape(-1) if as_tensor(x).ndim == 1 else out


def proxynca_pp_loss(x, labels, proxies, beta: float = 9.0) -> Tensor:
    """ProxyNCA++: negative log proxy-assignment probability at inverse temperature ``beta``."""
    beta = _check_beta(beta)
    proxies = as_tensor(proxies)
    K = proxies.shape[0]
    if K < 2:
        raise ValueError("ProxyNCA++ needs at least two proxies")
    d = _normalized_distances(x, proxies)
    labels = _labels(labels, d.shape[0], K)
    logp = log_softmax(-beta * d, axis=1)
    return -logp[np.arange(d.shape[0]), labels].mean()


def normsoftmax_loss(x, labels, proxies, beta: float = 2.0) -> Tensor:
    """Softmax cross-entropy over scaled cosine similarities to the proxies."""
    beta = _check_beta(beta)
    proxies = as_tensor(proxies)
    x = as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    K = proxies.shape[0]
    if K < 2:
        raise ValueError("NormSoftMax needs at least two proxies")
    cos = l2_normalize(x) @ l2_normalize(proxies).T
    labels = _labels(labels, cos.shape[0], K)
    logp = log_softmax(beta * cos, axis=1)
    return -logp[np.arange(cos.shape[0]), labels].mean()


def proxy_loss(kind: str, x, labels, proxies, beta: float) -> Tensor:
    """Dispatch by name: ``proxynca``, ``proxynca_pp`` or ``normsoftmax``."""
    if kind == "proxynca":
        return proxynca_loss(x, labels, proxies, beta)
    if kind == "proxynca_pp":
        return proxynca_pp_loss(x, labels, proxies, beta)
    if kind == "normsoftmax":
        return normsoftmax_loss(x, labels, proxies, beta)
    raise ValueError(f"unknown loss {kind!r}")
