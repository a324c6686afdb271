"""Backbone building blocks and a small sequential model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor

LAYER_NORM_EPS = 1e-5


def linear(x, W, b=None) -> Tensor:
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError("linear", x.shape, W.shape)
    out = x @ W
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError("linear bias", W.shape, b.shape)
        out = out + b
    return out


def relu(x) -> Tensor:
    return as_tensor(x).relu()


def layer_norm(x) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance.

    No learnable scale or shift. A constant row maps to zeros.
    """
    x = as_tensor(x)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs at least 2 features")
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + LAYER_NORM_EPS).sqrt()


def l2_normalize(x) -> Tensor:
    x = as_tensor(x)
    sq = (x * x).sum(axis=-1, keepdims=True)
    if np.any(sq.data == 0):
        raise ValueError("cannot L2-normalize a zero vector")
    return x / sq.sqrt()


def global_k_max_pool(g, k: int) -> Tensor:
    """Mean of the ``k`` largest spatial activations, per channel.

    ``g`` has shape ``(B, S, E)`` with ``S`` flattened spatial positions.
    ``k=1`` is global max pooling and ``k=S`` is global average pooling.
    Ties go to the lowest spatial index.
    """
    g = as_tensor(g)
    if g.ndim != 3:
        raise ValueError(f"expected (batch, positions, channels), got {g.shape}")
    n_pos = g.shape[1]
    if not 1 <= k <= n_pos:
        raise ValueError(f"k must be in [1, {n_pos}], got {k}")
    if k == n_pos:
        return g.mean(axis=1)
    # stable sort on the negated values keeps lower indices first among ties
    order = np.argsort(-g.data, axis=1, kind="stable")[:, :k, :]
    b = np.arange(g.shape[0])[:, None, None]
    c = np.arange(g.shape[2])[None, None, :]
    return g[b, order, c].mean(axis=1)


def dropout(x, p: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0:
        return x
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


# ---- layer specs ------------------------------------------------------------


@dataclass(frozen=True)
class Linear:
    n_in: int
    n_out: int
    init_scale: float | None = None

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("linear dimensions must be positive")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class LayerNorm:
    pass


@dataclass(frozen=True)
class L2Norm:
    pass


@dataclass(frozen=True)
class Dropout:
    p: float

    def __post_init__(self):
        if not 0 <= self.p < 1:
            raise ValueError("dropout p must be in [0, 1)")


@dataclass(frozen=True)
class KMaxPool:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")


@dataclass(frozen=True)
class Spatial:
    """Reshape flat ``(B, S*C)`` inputs into a ``(B, S, C)`` feature map."""
    positions: int


LayerSpec = Linear | ReLU | LayerNorm | L2Norm | Dropout | KMaxPool | Spatial


@dataclass
class Model:
    """An ordered stack of layers with named parameters.

    ``lr_multipliers`` maps parameter names to learning-rate multipliers;
    names not present train at the base rate.
    """

    layers: list
    params: dict[str, Tensor] = field(default_factory=dict)
    lr_multipliers: dict[str, float] = field(default_factory=dict)

    @classmethod
    def build(cls, layers, rng: np.random.Generator) -> "Model":
        params = {}
        for i, spec in enumerate(layers):
            if isinstance(spec, Linear):
                scale = spec.init_scale if spec.init_scale is not None else 1.0 / np.sqrt(spec.n_in)
                params[f"{i}.W"] = Tensor(rng.normal(0.0, scale, (spec.n_in, spec.n_out)),
                                          requires_grad=True)
                params[f"{i}.b"] = Tensor(np.zeros(spec.n_out), requires_grad=True)
        return cls(list(layers), params)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None,
                return_features: bool = False):
        """Run the stack; optionally also return the input to the last pooling layer."""
        h = as_tensor(x)
        features = None
        for i, spec in enumerate(self.layers):
            if isinstance(spec, Linear):
                h = linear(h, self.params[f"{i}.W"], self.params[f"{i}.b"])
            elif isinstance(spec, ReLU):
                h = h.relu()
            elif isinstance(spec, LayerNorm):
                h = layer_norm(h)
            elif isinstance(spec, L2Norm):
                h = l2_normalize(h)
            elif isinstance(spec, Dropout):
                h = dropout(h, spec.p, rng, training=training)
            elif isinstance(spec, KMaxPool):
                features = h
                h = global_k_max_pool(h, spec.k)
            elif isinstance(spec, Spatial):
                h = h.reshape(h.shape[0], spec.positions, -1)
            else:
                raise TypeError(f"unknown layer {spec!r}")
        return (h, features) if return_features else h

    __call__ = forward

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ShapeError(f"load {k}", self.params[k].shape, v.shape)
            self.params[k].data = np.array(v, dtype=np.float64)

    def clone(self) -> "Model":
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return Model(list(self.layers), params, dict(self.lr_multipliers))
