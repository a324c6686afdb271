"""Proxy-based metric learning on synthetic zero-shot retrieval data."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from .autodiff import gradients
from .data import Dataset, make_gaussian_classes
from .evaluation import EvalReport, evaluate_retrieval, extract_embeddings, recall_at_k
from .losses import ProxySet, proxy_loss
from .optim import SGD, ReduceOnPlateau, class_balanced_batches, exponential_decay, \
    poly_decay, random_batches
from .rng import streams

TOGGLES = ("prob", "scale", "max", "norm", "cbs", "fast")


@dataclass
class RetrievalConfig:
    # data
    n_classes: int = 128
    per_class: int = 20
    dim: int = 8
    latent_dim: int | None = 4
    spread: float = 0.25
    positions: int = 8
    object_positions: int = 2
    background_spread: float | None = 0.1
    dev_fraction: float = 0.25
    # model
    hidden: int = 32
    embedding: int = 64
    embedding_init: float | None = None
    proxy_init: float = 1.0
    layer_norm: bool = True
    k_max: int = 1
    # loss
    loss: str = "proxynca_pp"
    beta: float = 9.0
    # sampler
    cbs: bool = True
    batch_size: int = 32
    classes_per_batch: int = 4
    # optimizer
    base_lr: float = 0.005
    proxy_lr_multiplier: float = 100.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: str = "plateau"
    patience: int = 4
    factor: float = 0.5
    poly_power: float = 0.9
    gamma: float = 0.94
    epochs: int = 20
    eval_every: int = 0
    retrain_combined: bool = False
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.loss not in ("proxynca", "proxynca_pp", "normsoftmax"):
            problems.append(f"loss: unknown {self.loss!r}")
        if self.beta <= 0:
            problems.append("beta: must be positive")
        if not 1 <= self.k_max <= self.positions:
            problems.append(f"k_max: must be in [1, {self.positions}]")
        if self.schedule not in ("plateau", "poly", "exp", "none"):
            problems.append(f"schedule: unknown {self.schedule!r}")
        if self.cbs and self.batch_size // max(self.classes_per_batch, 1) < 1:
            problems.append("batch_size: must be at least classes_per_batch")
        elif self.cbs:
            n_train = self.per_class - int(round(self.dev_fraction * self.per_class))
            if n_train < self.batch_size // self.classes_per_batch:
                problems.append(f"per_class: {n_train} training examples per class after the dev "
                                f"split, class-balanced batches need "
                                f"{self.batch_size // self.classes_per_batch}")
            if self.n_classes // 2 < self.classes_per_batch:
                problems.append("classes_per_batch: more than the number of training classes")
        elif not self.cbs and self.batch_size < 1:
            problems.append("batch_size: must be positive")
        if self.n_classes < 4:
            problems.append("n_classes: need at least 4")
        if self.base_lr <= 0 or self.proxy_lr_multiplier <= 0:
            problems.append("base_lr/proxy_lr_multiplier: must be positive")
        if not 0 <= self.momentum < 1:
            problems.append("momentum: must be in [0, 1)")
        return problems

    def with_toggles(self, **on: bool) -> "RetrievalConfig":
        """Switch ProxyNCA++ enhancements on or off by name."""
        changes = {}
        for name, enabled in on.items():
            if name == "prob":
                changes["loss"] = "proxynca_pp" if enabled else "proxynca"
            elif name == "scale":
                changes["beta"] = 9.0 if enabled else 1.0
            elif name == "max":
                changes["k_max"] = 1 if enabled else self.positions
            elif name == "norm":
                changes["layer_norm"] = enabled
            elif name == "cbs":
                changes["cbs"] = enabled
            elif name == "fast":
                changes["proxy_lr_multiplier"] = 100.0 if enabled else 1.0
            else:
                raise ValueError(f"unknown toggle {name!r}")
        return replace(self, **changes)


def build_model(cfg: RetrievalConfig, rng: np.random.Generator) -> L.Model:
    spec = [L.Spatial(cfg.positions), L.Linear(cfg.dim, cfg.hidden), L.ReLU(),
            L.KMaxPool(cfg.k_max), L.Linear(cfg.hidden, cfg.embedding, cfg.embedding_init)]
    if cfg.layer_norm:
        spec.append(L.LayerNorm())
    return L.Model.build(spec, rng)


def make_data(cfg: RetrievalConfig, seed: int | None = None) -> Dataset:
    return make_gaussian_classes(cfg.n_classes, cfg.per_class, cfg.dim, cfg.spread,
                                 seed=cfg.seed if seed is None else seed,
                                 latent_dim=cfg.latent_dim, dev_fraction=cfg.dev_fraction,
                                 positions=cfg.positions, object_positions=cfg.object_positions,
                                 background_spread=cfg.background_spread)


@dataclass
class RetrievalRun:
    config: RetrievalConfig
    model: L.Model
    proxies: ProxySet
    history: list[dict] = field(default_factory=list)
    report: EvalReport | None = None

    @property
    def dev_curve(self) -> list[float]:
        return [row["dev_r1"] for row in self.history]


class RetrievalTrainer:
    """Owns the model, proxies and optimizer for one training run."""

    def __init__(self, cfg: RetrievalConfig, data: Dataset | None = None):
        problems = cfg.validate()
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))
        self.cfg = cfg
        self.rngs = streams(cfg.seed)
        self.data = data if data is not None else make_data(cfg)
        train = self.data.subset("train")
        classes = np.unique(train.labels)
        self.class_index = {c: i for i, c in enumerate(classes)}
        self.x_train = train.inputs
        self.y_train = np.array([self.class_index[c] for c in train.labels])
        self.dev = self.data.subset("dev")
        self.test = self.data.subset("test")
        self.model = build_model(cfg, self.rngs["init"])
        self.proxies = ProxySet.init(len(classes), cfg.embedding, self.rngs["init"],
                                     cfg.proxy_lr_multiplier, cfg.proxy_init)
        self.params = dict(self.model.params, proxies=self.proxies.proxies)
        self.optimizer = SGD(self.params, cfg.base_lr, cfg.momentum, cfg.weight_decay,
                             lr_multipliers={"proxies": cfg.proxy_lr_multiplier},
                             no_decay={"proxies"})
        self.plateau = ReduceOnPlateau(cfg.patience, cfg.factor)
        self.iteration = 0

    # one optimisation step on a batch of training indices
    def loss_and_grads(self, idx):
        emb = self.model.forward(self.x_train[idx], training=True, rng=self.rngs["dropout"])
        loss = proxy_loss(self.cfg.loss, emb, self.y_train[idx], self.proxies.proxies,
                          self.cfg.beta)
        return loss, gradients(loss, self.params)

    def epoch_plan(self):
        cfg = self.cfg
        if cfg.cbs:
            return class_balanced_batches(self.y_train, cfg.batch_size, cfg.classes_per_batch,
                                          self.rngs["sampler"])
        return random_batches(len(self.y_train), cfg.batch_size, self.rngs["sampler"])

    def lr_scale(self, epoch: int, total_iters: int) -> float:
        cfg = self.cfg
        if cfg.schedule == "plateau":
            return self.plateau.scale
        if cfg.schedule == "poly":
            return poly_decay(1.0, min(self.iteration, total_iters), total_iters, cfg.poly_power)
        if cfg.schedule == "exp":
            return exponential_decay(1.0, epoch, cfg.gamma)
        return 1.0

    def dev_recall(self) -> float:
        if len(self.dev.labels) < 2:
            return float("nan")
        emb = extract_embeddings(self.model, self.dev.inputs)
        return recall_at_k(emb, self.dev.labels, (1,))[1]

    def _record(self, run: RetrievalRun, epoch: int, losses: list[float]) -> None:
        # the plateau schedule counts evaluations, not epochs
        dev_r1 = self.dev_recall()
        run.history.append(dict(epoch=epoch, iteration=self.iteration,
                                loss=float(np.mean(losses)), dev_r1=dev_r1))
        if self.cfg.schedule == "plateau" and not np.isnan(dev_r1):
            self.plateau.step(dev_r1)

    def run(self) -> RetrievalRun:
        cfg = self.cfg
        run = RetrievalRun(cfg, self.model, self.proxies)
        total_iters = None
        for epoch in range(cfg.epochs):
            plan = self.epoch_plan()
            if total_iters is None:
                total_iters = max(1, len(plan) * cfg.epochs)
            losses = []
            for idx in plan:
                loss, grads = self.loss_and_grads(idx)
                self.optimizer.step(grads, self.lr_scale(epoch, total_iters))
                self.iteration += 1
                losses.append(loss.item())
                if cfg.eval_every and self.iteration % cfg.eval_every == 0:
                    self._record(run, epoch, losses)
            if not cfg.eval_every:
                self._record(run, epoch, losses)
        emb = extract_embeddings(self.model, self.test.inputs)
        run.report = evaluate_retrieval(emb, self.test.labels, rng=self.rngs["eval"])
        return run


def merge_dev(data: Dataset) -> Dataset:
    split = np.where(data.split == "dev", "train", data.split)
    return Dataset(data.inputs, data.labels, split, data.labeled, dict(data.meta))


def train_retrieval(cfg: RetrievalConfig, data: Dataset | None = None) -> RetrievalRun:
    """Train and report test retrieval metrics.

    With ``retrain_combined`` the dev curve only picks the number of epochs:
    a fresh model is then trained on train plus dev for that many epochs.
    """
    data = data if data is not None else make_data(cfg)
    run = RetrievalTrainer(cfg, data).run()
    if not cfg.retrain_combined:
        return run
    best = int(np.nanargmax(run.dev_curve)) if cfg.eval_every == 0 else cfg.epochs - 1
    final = RetrievalTrainer(replace(cfg, epochs=best + 1, retrain_combined=False),
                             merge_dev(data)).run()
    final.history = run.history + final.history
    return final


def ablation_configs(base: RetrievalConfig, toggles=TOGGLES, mode: str = "factorial"):
    """Named configs for an ablation grid.

    ``factorial`` enumerates every on/off combination of ``toggles`` with
    the rest as in ``base``; ``leave_one_out`` gives the full model, the
    full model minus each toggle, and the all-off baseline.
    """
    if mode == "factorial":
        for values in itertools.product((True, False), repeat=len(toggles)):
            name = " ".join(("+" if v else "-") + t for t, v in zip(toggles, values))
            yield name, base.with_toggles(**dict(zip(toggles, values)))
    elif mode == "leave_one_out":
        full = base.with_toggles(**{t: True for t in TOGGLES})
        yield "full", full
        for t in toggles:
            yield f"-{t}", full.with_toggles(**{t: False})
        yield "baseline", base.with_toggles(**{t: False for t in TOGGLES})
    else:
        raise ValueError(f"unknown ablation mode {mode!r}")


def ablate(base: RetrievalConfig, seeds, toggles=TOGGLES, mode: str = "factorial") -> list[dict]:
    """Mean and standard deviation of test R@1 per ablation row."""
    rows = []
    for name, cfg in ablation_configs(base, toggles, mode):
        scores = [train_retrieval(replace(cfg, seed=s)).report.recall_at[1] for s in seeds]
        rows.append(dict(name=name, mean_r1=float(np.mean(scores)),
                         std_r1=float(np.std(scores)), scores=scores))
    return rows
