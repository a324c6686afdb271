"""Iterative self-training with stage-wise human/pseudo label mixing.

A stage fine-tunes a learner for a fixed number of iterations on
``alpha * CE(human) + (1 - alpha) * CE(pseudo)``, with pseudo-labels
regenerated once at stage entry. The search strategies decide the alpha
of each stage:

* FIST keeps one alpha throughout,
* GIST runs a beam search over alpha in {0, 1},
* RIST draws random binary paths and keeps the best by dev score.

Paths are written with ``L`` for alpha=1 (human labels only) and ``P``
for alpha=0 (pseudo-labels only).
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from .autodiff import Tensor, gradients, log_softmax
from .optim import SGD, poly_decay
from .semi import (IGNORE, PseudoLabelSet, consistency_feature_loss, ema_update,
                   erase_low_confidence, masked_cross_entropy, soften_logits)

BATCH = "batch"
RESULT_COLUMNS = ("trial", "stage", "path_prefix", "dev_score", "test_score")


# ---- alpha paths ------------------------------------------------------------


@dataclass(frozen=True)
class AlphaPath:
    """Per-stage alpha values. ``binary`` paths hold only 0 and 1."""

    stages: tuple
    mode: str = "binary"

    def __post_init__(self):
        if self.mode not in ("binary", "fixed", BATCH):
            raise ValueError(f"unknown path mode {self.mode!r}")
        if self.mode == "binary" and any(a not in (0, 1) for a in self.stages):
            raise ValueError("binary paths hold only 0 and 1")
        if self.mode == "fixed" and any(not 0 <= a <= 1 for a in self.stages):
            raise ValueError("alpha must be in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "AlphaPath":
        if set(text) - {"L", "P"}:
            raise ValueError(f"path strings use only L and P, got {text!r}")
        return cls(tuple(1 if ch == "L" else 0 for ch in text))

    def __len__(self):
        return len(self.stages)

    def __str__(self):
        if self.mode == "binary":
            return "".join("L" if a == 1 else "P" for a in self.stages)
        if self.mode == BATCH:
            return "B" * len(self.stages)
        return ",".join(f"{a:g}" for a in self.stages)

    def extend(self, alpha) -> "AlphaPath":
        return AlphaPath(self.stages + (alpha,), self.mode)


def longest_run(path: AlphaPath) -> int:
    best = run = 0
    prev = object()
    for a in path.stages:
        run = run + 1 if a == prev else 1
        prev = a
        best = max(best, run)
    return best


def joint_alpha_loss(l_human, l_pseudo, alpha: float):
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 1:
        return l_human
    if alpha == 0:
        return l_pseudo
    return l_human * alpha + l_pseudo * (1.0 - alpha)


# ---- segmentation learner ---------------------------------------------------


def neighbourhood_features(images: np.ndarray, grid: int, radius: int = 1) -> np.ndarray:
    """Per-pixel patches of side ``2 * radius + 1`` with edge padding.

    ``images`` is ``(N, grid*grid)``; the result is ``(N, grid*grid, side**2)``.
    """
    imgs = np.asarray(images, dtype=np.float64).reshape(-1, grid, grid)
    padded = np.pad(imgs, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    side = 2 * radius + 1
    patches = [padded[:, i:i + grid, j:j + grid] for i in range(side) for j in range(side)]
    return np.stack(patches, axis=-1).reshape(imgs.shape[0], grid * grid, side * side)


def mean_iou(pred: np.ndarray, target: np.ndarray, n_classes: int = 2) -> float:
    """Dataset-level IoU averaged over classes that appear in either map."""
    pred, target = np.asarray(pred).reshape(-1), np.asarray(target).reshape(-1)
    ious = []
    for c in range(n_classes):
        p, t = pred == c, target == c
        union = np.sum(p | t)
        if union:
            ious.append(np.sum(p & t) / union)
    return float(np.mean(ious)) if ious else 1.0


@dataclass
class SegmentationLearner:
    """A per-pixel MLP over a small neighbourhood of each pixel."""

    model: L.Model
    grid: int
    radius: int = 1
    n_classes: int = 2

    @classmethod
    def build(cls, grid: int, hidden: int, rng: np.random.Generator, radius: int = 1,
              n_classes: int = 2) -> "SegmentationLearner":
        n_in = (2 * radius + 1) ** 2
        model = L.Model.build([L.Linear(n_in, hidden), L.ReLU(), L.Linear(hidden, n_classes)], rng)
        return cls(model, grid, radius, n_classes)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.model.params

    def features(self, images) -> np.ndarray:
        return neighbourhood_features(images, self.grid, self.radius)

    def hidden(self, feats) -> Tensor:
        """Pre-classifier activations, ``(N, pixels, hidden)``."""
        m = self.model
        return L.linear(feats, m.params["0.W"], m.params["0.b"]).relu()

    def logits(self, images=None, feats=None) -> Tensor:
        feats = self.features(images) if feats is None else feats
        m = self.model
        return L.linear(self.hidden(feats), m.params["2.W"], m.params["2.b"])

    def predict_logits(self, images) -> np.ndarray:
        return self.logits(images).data

    def predict_probabilities(self, images) -> np.ndarray:
        return np.exp(log_softmax(Tensor(self.predict_logits(images)), axis=-1).data)

    def predict(self, images) -> np.ndarray:
        return np.argmax(self.predict_logits(images), axis=-1)

    def score(self, images, labels) -> float:
        """mIoU of raw-logit predictions against per-pixel labels."""
        return mean_iou(self.predict(images), labels, self.n_classes)

    def clone(self) -> "SegmentationLearner":
        return replace(self, model=self.model.clone())


def generate_pseudo_labels(learner, unlabeled, phi: float = 0.0, beta: float = 1.0) -> PseudoLabelSet:
    """Softened argmax labels with low-confidence entries erased.

    Raises if every entry is erased, since the pseudo-label loss would be
    undefined.
    """
    probs = soften_logits(learner.predict_logits(unlabeled), beta)
    labels = erase_low_confidence(probs, phi, probs.shape[-1])
    if labels.labels.size and labels.fraction_ignored == 1.0:
        raise ValueError(f"every pseudo-label erased (fraction ignored = 1.0) at phi={phi}, "
                         f"beta={beta}")
    return labels


# ---- stage training ---------------------------------------------------------


@dataclass
class SelfTrainConfig:
    # data
    grid: int = 8
    n_images: int = 1000
    labeled_fraction: float = 1 / 50
    n_dev: int = 50
    n_test: int = 200
    noise: float = 1.5
    threshold: float = 0.8
    # learner
    hidden: int = 64
    radius: int = 2
    # optimisation
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_labeled: int = 4
    batch_unlabeled: int = 8
    stage0_iters: int = 300
    k_iters: int = 200
    # pseudo-labels and add-ons
    phi: float = 0.0
    beta_ts: float = 1.0
    cl: bool = False
    cl_weight: float = 1.0
    cl_dropout: float = 0.5
    ema_beta: float = 0.9
    # search
    strategy: str = "fist"
    stages: int = 9
    alpha: float = 0.75
    beam: int = 2
    n_trials: int = 5
    degenerate_filter: bool = False
    workers: int = 1
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.strategy not in ("fist", "gist", "rist", BATCH):
            problems.append(f"strategy: unknown {self.strategy!r}")
        if self.stages < 1:
            problems.append("stages: must be at least 1")
        if not 0 <= self.alpha <= 1:
            problems.append("alpha: must be in [0, 1]")
        if self.beam < 1:
            problems.append("beam: must be at least 1")
        if self.n_trials < 1:
            problems.append("n_trials: must be at least 1")
        if not 0 <= self.phi <= 1:
            problems.append("phi: must be in [0, 1]")
        if self.beta_ts <= 0:
            problems.append("beta_ts: must be positive")
        if not 0 < self.labeled_fraction <= 1:
            problems.append("labeled_fraction: must be in (0, 1]")
        if self.k_iters < 0 or self.stage0_iters < 0:
            problems.append("k_iters/stage0_iters: must be non-negative")
        if self.lr <= 0:
            problems.append("lr: must be positive")
        if self.workers < 1:
            problems.append("workers: must be at least 1")
        return problems


def _sample(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(n, size=min(size, n), replace=False)


def run_stage(learner, alpha, labeled, unlabeled, k_iters: int, cfg: SelfTrainConfig,
              rng: np.random.Generator, pseudo: PseudoLabelSet | None = None, on_step=None):
    """Fine-tune a copy of ``learner`` for ``k_iters`` iterations.

    ``labeled`` is ``(images, labels)`` and ``unlabeled`` an image array.
    ``alpha`` is a number in [0, 1] or ``"batch"``, which flips a fair coin
    per iteration between the human and the pseudo-label loss. Pseudo-labels
    come from ``learner`` at entry and stay fixed for the whole stage;
    ``on_step(iteration, pseudo)`` sees them after every update.
    """
    if alpha != BATCH and not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1] or {BATCH!r}, got {alpha}")
    student = learner.clone()
    if k_iters == 0:
        return student
    x_l, y_l = labeled
    needs_pseudo = alpha != 1
    if needs_pseudo and pseudo is None:
        pseudo = generate_pseudo_labels(learner, unlabeled, cfg.phi, cfg.beta_ts)
    teacher = student.clone() if cfg.cl else None
    params = student.params
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    feats_l = student.features(x_l)
    feats_u = student.features(unlabeled) if (needs_pseudo or cfg.cl) else None
    for it in range(k_iters):
        a = float(rng.random() < 0.5) if alpha == BATCH else alpha
        loss = None
        if a > 0:
            idx = _sample(len(y_l), cfg.batch_labeled, rng)
            l_h = masked_cross_entropy(student.logits(feats=feats_l[idx]), y_l[idx])
        if a < 1:
            idx_u = _sample(len(feats_u), cfg.batch_unlabeled, rng)
            target = pseudo.labels[idx_u]
            if np.all(target == IGNORE):
                # nothing to learn from this batch; fall back to the human term
                loss = l_h if a > 0 else None
            else:
                l_p = masked_cross_entropy(student.logits(feats=feats_u[idx_u]), target)
                loss = joint_alpha_loss(l_h, l_p, a) if a > 0 else l_p
        else:
            loss = l_h
        if cfg.cl:
            idx_c = _sample(len(feats_u), cfg.batch_unlabeled, rng)
            f_s = student.hidden(feats_u[idx_c])
            f_t = teacher.hidden(feats_u[idx_c]).detach()
            l_c = consistency_feature_loss(f_s, f_t, cfg.cl_dropout, rng) * cfg.cl_weight
            loss = l_c if loss is None else loss + l_c
        if loss is not None:
            opt.step(gradients(loss, params), poly_decay(1.0, it, k_iters))
        if teacher is not None:
            teacher.model.load_state(ema_update(teacher.params, params, cfg.ema_beta))
        if on_step is not None:
            on_step(it, pseudo)
    return student


class SelfTrainer:
    """Binds a dataset and config to the stage/evaluate protocol the searches use.

    Any object with ``stage(learner, alpha, rng) -> learner`` and
    ``evaluate(learner) -> (dev_score, test_score)`` can stand in.
    """

    def __init__(self, cfg: SelfTrainConfig, data):
        self.cfg = cfg
        train = data.subset("train")
        self.x_labeled = train.inputs[train.labeled]
        self.y_labeled = train.labels[train.labeled]
        self.x_unlabeled = train.inputs[~train.labeled]
        if len(self.x_unlabeled) == 0:
            self.x_unlabeled = train.inputs
        self.dev = data.subset("dev")
        self.test = data.subset("test")

    def initial(self, rng: np.random.Generator) -> SegmentationLearner:
        """Stage 0: a learner trained on the human labels only."""
        learner = SegmentationLearner.build(self.cfg.grid, self.cfg.hidden, rng, self.cfg.radius)
        return self.stage(learner, 1.0, rng, self.cfg.stage0_iters)

    def stage(self, learner, alpha, rng, k_iters: int | None = None):
        k = self.cfg.k_iters if k_iters is None else k_iters
        return run_stage(learner, alpha, (self.x_labeled, self.y_labeled), self.x_unlabeled, k,
                         self.cfg, rng)

    def evaluate(self, learner) -> tuple[float, float]:
        return (learner.score(self.dev.inputs, self.dev.labels),
                learner.score(self.test.inputs, self.test.labels))


# ---- search strategies ------------------------------------------------------


@dataclass
class SearchResult:
    best_path: AlphaPath
    best_dev: float
    best_test: float
    best_learner: object
    log: list[dict] = field(default_factory=list)

    def per_stage_dev_scores(self, trial: int = 0) -> list[float]:
        return [row["dev_score"] for row in self.log if row["trial"] == trial]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in self.log:
            w.writerow([row["trial"], row["stage"], row["path_prefix"],
                        f"{row['dev_score']:.6f}", f"{row['test_score']:.6f}"])
        return out.getvalue()


def _path_code(path: AlphaPath) -> int:
    # leading 1 keeps paths of different lengths distinct
    code = 1
    for a in path.stages:
        code = code * 2 + int(a)
    return code


def _node(trial, stage, path, scores) -> dict:
    return dict(trial=trial, stage=stage, path_prefix=str(path),
                dev_score=float(scores[0]), test_score=float(scores[1]))


def _pick_best(nodes):
    """First node with the top dev score; nodes are ``(row, path, learner)``."""
    best = nodes[0]
    for node in nodes[1:]:
        if node[0]["dev_score"] > best[0]["dev_score"]:
            best = node
    row, path, learner = best
    return path, row, learner


def _run_path(trainer, learner0, scores0, path: AlphaPath, seed: int, trial: int):
    """Train stage by stage along ``path``; one node per stage, stage 0 included."""
    nodes = [(_node(trial, 0, AlphaPath((), path.mode), scores0), AlphaPath((), path.mode), learner0)]
    learner = learner0
    for s, alpha in enumerate(path.stages, start=1):
        prefix = AlphaPath(path.stages[:s], path.mode)
        rng = np.random.default_rng([seed, trial, s])
        learner = trainer.stage(learner, alpha, rng)
        nodes.append((_node(trial, s, prefix, trainer.evaluate(learner)), prefix, learner))
    return nodes


def _finish(nodes) -> SearchResult:
    path, row, learner = _pick_best(nodes)
    return SearchResult(path, row["dev_score"], row["test_score"], learner,
                        [n[0] for n in nodes])


def fist_run(trainer, learner0, stages: int, alpha: float, seed: int = 0) -> SearchResult:
    """A single path with the same alpha at every stage."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    mode = "binary" if alpha in (0, 1) else "fixed"
    path = AlphaPath((int(alpha) if mode == "binary" else alpha,) * stages, mode)
    return _finish(_run_path(trainer, learner0, trainer.evaluate(learner0), path, seed, 0))


def gist_search(trainer, learner0, stages: int, beam: int, seed: int = 0) -> SearchResult:
    """Beam search over binary alpha paths.

    Every kept node is expanded with alpha=1 then alpha=0, children are
    scored on the dev set and the top ``beam`` survive (ties keep the
    earlier child). The answer is the best node over all stages.
    """
    if stages < 1 or beam < 1:
        raise ValueError("stages and beam must be at least 1")
    root = AlphaPath(())
    nodes = [(_node(0, 0, root, trainer.evaluate(learner0)), root, learner0)]
    frontier = [nodes[0]]
    for s in range(1, stages + 1):
        children = []
        for _, path, learner in frontier:
            for alpha in (1, 0):
                child = path.extend(alpha)
                rng = np.random.default_rng([seed, s, _path_code(child)])
                trained = trainer.stage(learner, alpha, rng)
                children.append((_node(0, s, child, trainer.evaluate(trained)), child, trained))
        nodes.extend(children)
        order = sorted(range(len(children)), key=lambda i: (-children[i][0]["dev_score"], i))
        frontier = [children[i] for i in order[:beam]]
    return _finish(nodes)


def sample_binary_path(stages: int, rng: np.random.Generator, degenerate_filter: bool = False,
                       max_run: int = 4, max_tries: int = 10_000) -> AlphaPath:
    """Fair-coin alpha per stage. With the filter, redraw paths that repeat
    the same choice more than ``max_run`` times in a row."""
    for _ in range(max_tries):
        path = AlphaPath(tuple(int(u > 0.5) for u in rng.random(stages)))
        if not degenerate_filter or longest_run(path) <= max_run:
            return path
    raise RuntimeError("could not draw a non-degenerate path")


def rist_search(trainer, learner0, stages: int, n_trials: int, seed: int = 0,
                degenerate_filter: bool = False, workers: int = 1,
                mode: str = "binary") -> SearchResult:
    """Random binary paths trained end to end; the best dev node over all
    stages of all trials wins.

    Trial ``t`` draws its path and its training randomness from streams
    keyed by ``(seed, t)``, so trials do not depend on one another.
    ``mode="batch"`` replaces the per-stage coin with a per-iteration one.
    """
    if stages < 1 or n_trials < 1:
        raise ValueError("stages and n_trials must be at least 1")
    scores0 = trainer.evaluate(learner0)

    def trial(t):
        if mode == BATCH:
            path = AlphaPath((BATCH,) * stages, BATCH)
        else:
            path = sample_binary_path(stages, np.random.default_rng([seed, t]), degenerate_filter)
        return _run_path(trainer, learner0, scores0, path, seed, t)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_trial = list(pool.map(trial, range(n_trials)))
    else:
        per_trial = [trial(t) for t in range(n_trials)]
    return _finish([n for nodes in per_trial for n in nodes])


def batchwise_search(trainer, learner0, stages: int, n_trials: int, seed: int = 0,
                     workers: int = 1) -> SearchResult:
    """Like RIST but alpha is redrawn for every mini-batch instead of every stage."""
    return rist_search(trainer, learner0, stages, n_trials, seed, workers=workers, mode=BATCH)


def run_selftrain(cfg: SelfTrainConfig, data=None):
    """Stage 0 plus the configured strategy. Returns ``(trainer, result)``."""
    from .data import make_toy_grid_segmentation

    problems = cfg.validate()
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    if data is None:
        data = make_toy_grid_segmentation(cfg.grid, cfg.n_images, cfg.labeled_fraction, cfg.seed,
                                          cfg.n_dev, cfg.n_test, cfg.noise, cfg.threshold)
    trainer = SelfTrainer(cfg, data)
    learner0 = trainer.initial(np.random.default_rng([cfg.seed, 0]))
    if cfg.strategy == "fist":
        result = fist_run(trainer, learner0, cfg.stages, cfg.alpha, cfg.seed)
    elif cfg.strategy == "gist":
        result = gist_search(trainer, learner0, cfg.stages, cfg.beam, cfg.seed)
    elif cfg.strategy == "rist":
        result = rist_search(trainer, learner0, cfg.stages, cfg.n_trials, cfg.seed,
                             cfg.degenerate_filter, cfg.workers)
    else:
        result = batchwise_search(trainer, learner0, cfg.stages, cfg.n_trials, cfg.seed, cfg.workers)
    return trainer, result
