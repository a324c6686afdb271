"""Zero-shot retrieval metrics: Recall@K and k-means NMI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    nmi: float
    n_queries: int

    def to_text(self) -> str:
        lines = [f"R@{k}={v:.17g}" for k, v in sorted(self.recall_at.items())]
        lines += [f"NMI={self.nmi:.17g}", f"n_queries={self.n_queries}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        recall, nmi_value, n = {}, None, None
        for line in text.strip().splitlines():
            key, value = line.split("=", 1)
            if key.startswith("R@"):
                recall[int(key[2:])] = float(value)
            elif key == "NMI":
                nmi_value = float(value)
            elif key == "n_queries":
                n = int(value)
        return cls(recall, nmi_value, n)

    def csv_header(self) -> list[str]:
        return [f"R@{k}" for k in sorted(self.recall_at)] + ["NMI", "n_queries"]

    def csv_row(self) -> list:
        return [f"{self.recall_at[k]:.6f}" for k in sorted(self.recall_at)] + \
            [f"{self.nmi:.6f}", self.n_queries]


def _as_array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def recall_at_k(emb, labels, ks=(1, 2, 4, 8)) -> dict[int, float]:
    """Fraction of queries with a same-label item among their K nearest neighbours.

    Every point is a query against all others (itself excluded). Distance
    ties go to the lower index. A query whose class has no other member
    always counts as a miss.
    """
    emb = _as_array(emb)
    labels = np.asarray(labels)
    n = emb.shape[0]
    if max(ks) > n - 1:
        raise ValueError(f"K={max(ks)} needs at least {max(ks) + 1} points, got {n}")
    d = sq_distances(emb, emb)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :max(ks)]
    hit = labels[order] == labels[:, None]
    first_hit = np.where(hit.any(1), hit.argmax(1), max(ks))
    return {k: float(np.mean(first_hit < k)) for k in ks}


@dataclass
class KMeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = sq_distances(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point already coincides with a center
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, sq_distances(x, x[idx][None])[:, 0])
    return np.array(centers)


def kmeans(emb, k: int, rng: np.random.Generator, iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds.

    An emptied cluster is reseeded at the point farthest from its centroid.
    """
    x = _as_array(emb)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    centroids = _kmeans_pp(x, k, rng)
    history = []
    assignment = None
    for _ in range(iters):
        d = sq_distances(x, centroids)
        new = np.argmin(d, axis=1)
        for _repair in range(k):
            empty = [c for c in range(k) if not np.any(new == c)]
            if not empty:
                break
            far = int(np.argmax(d[np.arange(n), new]))
            centroids[empty[0]] = x[far]
            d = sq_distances(x, centroids)
            new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        centroids = np.array([x[assignment == c].mean(axis=0) for c in range(k)])
    return KMeansResult(assignment, centroids, history)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(assignment, labels) -> float:
    """``2 I(A; C) / (H(A) + H(C))`` with natural logs.

    When both partitions are a single block the ratio is 0/0 and we return 1.
    """
    a = np.asarray(assignment)
    c = np.asarray(labels)
    if a.shape != c.shape:
        raise ValueError("assignment and labels differ in length")
    _, a_idx = np.unique(a, return_inverse=True)
    _, c_idx = np.unique(c, return_inverse=True)
    joint = np.zeros((a_idx.max() + 1, c_idx.max() + 1))
    np.add.at(joint, (a_idx, c_idx), 1)
    h_a, h_c = _entropy(joint.sum(1)), _entropy(joint.sum(0))
    if h_a + h_c == 0:
        return 1.0
    mutual = h_a + h_c - _entropy(joint.reshape(-1))
    return float(min(max(2.0 * mutual / (h_a + h_c), 0.0), 1.0))


def extract_embeddings(model, inputs, batch_size: int = 1024) -> np.ndarray:
    """Evaluation-mode forward pass, L2-normalized rows."""
    inputs = _as_array(inputs)
    out = []
    for start in range(0, inputs.shape[0], batch_size):
        out.append(model.forward(inputs[start:start + batch_size], training=False).data)
    emb = np.concatenate(out, axis=0)
    return emb / np.linalg.norm(emb, axis=1, keepdims=True)


def evaluate_retrieval(emb, labels, ks=(1, 2, 4, 8), rng: np.random.Generator | None = None) -> EvalReport:
    emb = _as_array(emb)
    labels = np.asarray(labels)
    rng = rng if rng is not None else np.random.default_rng(0)
    clusters = kmeans(emb, np.unique(labels).size, rng).assignment
    return EvalReport(recall_at_k(emb, labels, ks), nmi(clusters, labels), emb.shape[0])
