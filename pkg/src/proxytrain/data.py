"""Deterministic synthetic datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff


@dataclass
class Dataset:
    """Inputs with integer labels and a split tag per example.

    For segmentation data ``labels`` holds one label per pixel and
    ``labeled`` marks the training images whose labels may be used.
    """

    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    labeled: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def subset(self, name: str) -> "Dataset":
        mask = self.split == name
        return Dataset(self.inputs[mask], self.labels[mask], self.split[mask],
                       None if self.labeled is None else self.labeled[mask], dict(self.meta))

    def classes(self, name: str | None = None) -> set[int]:
        labels = self.labels if name is None else self.labels[self.split == name]
        return set(np.unique(labels).tolist())

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        autodiff.save(self.inputs, directory / "inputs.txt")
        np.savetxt(directory / "labels.txt", self.labels.reshape(len(self.labels), -1), fmt="%d")
        (directory / "split.txt").write_text("\n".join(self.split.tolist()) + "\n")
        if self.labeled is not None:
            np.savetxt(directory / "labeled.txt", self.labeled.astype(int), fmt="%d")
        manifest = dict(self.meta, label_shape=list(self.labels.shape))
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        meta = json.loads((directory / "manifest.json").read_text())
        label_shape = tuple(meta.pop("label_shape"))
        inputs = autodiff.load(directory / "inputs.txt").data
        labels = np.loadtxt(directory / "labels.txt", dtype=np.int64, ndmin=2).reshape(label_shape)
        split = np.array((directory / "split.txt").read_text().split())
        labeled = None
        if (directory / "labeled.txt").exists():
            labeled = np.loadtxt(directory / "labeled.txt", dtype=np.int64, ndmin=1).astype(bool)
        return cls(inputs, labels, split, labeled, meta)


def make_two_moons(n: int = 600, noise: float = 0.3, seed: int = 0) -> Dataset:
    """Two interleaving half circles with isotropic Gaussian noise."""
    if n < 2 or n % 2:
        raise ValueError("n must be a positive even number")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    x = np.concatenate([upper, lower])
    y = np.repeat([0, 1], half)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    x, y = x[perm], y[perm]
    if noise > 0:
        x = x + rng.normal(0.0, noise, x.shape)
    meta = dict(generator="two_moons", n=n, noise=noise, seed=seed)
    return Dataset(x, y, np.full(n, "train"), meta=meta)


def make_gaussian_classes(n_classes: int, per_class: int, dim: int, spread: float,
                          seed: int = 0, latent_dim: int | None = None,
                          dev_fraction: float = 0.0, positions: int = 1,
                          object_positions: int = 1,
                          background_spread: float | None = None) -> Dataset:
    """Isotropic Gaussian blobs around unit-norm random class means.

    The first half of the classes are ``train`` and the rest ``test``, so
    the two never share a class. With ``latent_dim`` the means are drawn
    inside a random ``latent_dim``-dimensional subspace, which gives a
    learner structure that transfers to unseen classes. ``dev_fraction``
    of each train class is held out under the ``dev`` tag.

    With ``positions > 1`` every example is a flattened map of
    ``positions`` slots of width ``dim``: the class mean (plus noise) sits
    in ``object_positions`` randomly chosen slots and the other slots hold
    noise only, with standard deviation ``background_spread`` (defaults to
    ``spread``).
    """
    if n_classes < 4:
        raise ValueError("need at least 4 classes so both halves have 2")
    if not 1 <= object_positions <= positions:
        raise ValueError("object_positions must be in [1, positions]")
    rng = np.random.default_rng(seed)
    latent_dim = dim if latent_dim is None else latent_dim
    basis = np.linalg.qr(rng.standard_normal((dim, latent_dim)))[0]
    means = rng.standard_normal((n_classes, latent_dim)) @ basis.T
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(n_classes), per_class)
    n = labels.size
    noise = rng.standard_normal((n, positions, dim))
    slots = np.argsort(rng.random((n, positions)), axis=1)[:, :object_positions]
    signal = np.zeros((n, positions, dim))
    signal[np.arange(n)[:, None], slots] = means[labels][:, None, :]
    scale = np.full((n, positions, 1), spread if background_spread is None else background_spread)
    scale[np.arange(n)[:, None], slots] = spread
    inputs = (signal + scale * noise).reshape(n, positions * dim)
    n_train = n_classes // 2
    split = np.where(labels < n_train, "train", "test").astype("<U5")
    n_dev = int(round(dev_fraction * per_class))
    if n_dev:
        within = np.tile(np.arange(per_class), n_classes)
        split[(labels < n_train) & (within < n_dev)] = "dev"
    meta = dict(generator="gaussian_classes", n_classes=n_classes, per_class=per_class, dim=dim,
                spread=spread, seed=seed, latent_dim=latent_dim, dev_fraction=dev_fraction,
                positions=positions, object_positions=object_positions,
                background_spread=background_spread)
    return Dataset(inputs, labels, split, meta=meta)


def _smooth_fields(rng: np.random.Generator, n: int, grid: int, n_waves: int = 3) -> np.ndarray:
    """Random sums of a few low-frequency plane waves on a ``grid x grid`` lattice."""
    ii, jj = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    fields = np.zeros((n, grid, grid))
    for _ in range(n_waves):
        freq = rng.uniform(0.5, 1.5, (n, 2)) * (2 * np.pi / grid)
        freq *= rng.choice([-1.0, 1.0], (n, 2))
        phase = rng.uniform(0, 2 * np.pi, n)
        fields += np.cos(freq[:, 0, None, None] * ii + freq[:, 1, None, None] * jj
                         + phase[:, None, None])
    return fields / np.sqrt(n_waves / 2.0)


def make_toy_grid_segmentation(grid: int = 8, n_images: int = 1000, labeled_fraction: float = 1 / 50,
                               seed: int = 0, n_dev: int = 50, n_test: int = 200,
                               noise: float = 1.0, threshold: float = 0.5) -> Dataset:
    """Two-class toy segmentation on smooth random fields.

    Each image is a low-frequency field plus per-pixel noise; a pixel's
    label is whether the clean field exceeds ``threshold``. ``inputs`` has
    shape ``(N, grid*grid)`` and ``labels`` the same. A rounded
    ``labeled_fraction`` of the ``n_images`` training images keep their
    labels; the rest form the unlabeled pool. ``n_dev`` and ``n_test``
    extra labeled images are generated for the dev and test splits.
    """
    if not 0 < labeled_fraction <= 1:
        raise ValueError("labeled_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    total = n_images + n_dev + n_test
    clean = _smooth_fields(rng, total, grid)
    noisy = clean + noise * rng.standard_normal(clean.shape)
    labels = (clean > threshold).astype(np.int64).reshape(total, -1)
    split = np.array(["train"] * n_images + ["dev"] * n_dev + ["test"] * n_test)
    n_labeled = max(1, int(round(labeled_fraction * n_images)))
    labeled = np.zeros(total, dtype=bool)
    labeled[rng.choice(n_images, n_labeled, replace=False)] = True
    labeled[n_images:] = True
    meta = dict(generator="toy_grid_segmentation", grid=grid, n_images=n_images,
                labeled_fraction=labeled_fraction, seed=seed, n_dev=n_dev, n_test=n_test,
                noise=noise, threshold=threshold)
    return Dataset(noisy.reshape(total, -1), labels, split, labeled, meta)
