"""Temperature scaling on a small two-moons softmax classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .autodiff import gradients, log_softmax
from .data import Dataset, make_two_moons
from .optim import SGD


@dataclass
class MoonsResult:
    beta: float
    seed: int
    train_accuracy: float
    losses: list[float]
    model: L.Model


def moons_model(rng: np.random.Generator, hidden: int = 100) -> L.Model:
    return L.Model.build([L.Linear(2, hidden), L.ReLU(), L.Linear(hidden, 2)], rng)


def train_moons(beta: float, seed: int = 0, data: Dataset | None = None, iters: int = 200,
                lr: float = 0.05, momentum: float = 0.9, hidden: int = 100) -> MoonsResult:
    """Full-batch SGD on ``CE(softmax(beta * logits))`` for a fixed number of steps.

    ``beta`` is the inverse temperature; the data defaults to 600 points
    with noise 0.3. ``seed`` only drives the weight initialisation.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    data = data if data is not None else make_two_moons(600, 0.3, seed=0)
    model = moons_model(np.random.default_rng([seed, 1]), hidden)
    opt = SGD(model.params, lr, momentum)
    x, y = data.inputs, data.labels
    rows = np.arange(len(y))
    losses = []
    for _ in range(iters):
        logp = log_softmax(model.forward(x) * beta, axis=1)
        loss = -logp[rows, y].mean()
        opt.step(gradients(loss, model.params))
        losses.append(loss.item())
    acc = float(np.mean(np.argmax(model.forward(x).data, axis=1) == y))
    return MoonsResult(beta, seed, acc, losses, model)


def temperature_study(betas=(1.0, 9.0), seeds=range(5), **kw) -> dict[float, list[float]]:
    """Training accuracy per beta, one entry per seed."""
    data = make_two_moons(600, 0.3, seed=0)
    return {b: [train_moons(b, s, data, **kw).train_accuracy for s in seeds] for b in betas}
