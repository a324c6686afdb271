import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxytrain import layers as L
from proxytrain.evaluation import (EvalReport, evaluate_retrieval, extract_embeddings, kmeans,
                                   nmi, recall_at_k)

seeds = st.integers(0, 2 ** 31)


def brute_recall(emb, labels, k):
    """Scan every other point, sort by (distance, index) and look at the first k."""
    n = len(labels)
    hits = 0
    for q in range(n):
        cand = sorted((float(np.sum((emb[q] - emb[j]) ** 2)), j) for j in range(n) if j != q)
        hits += any(labels[j] == labels[q] for _, j in cand[:k])
    return hits / n


def brute_nmi(a, c):
    n = len(a)
    pa = {x: sum(1 for v in a if v == x) / n for x in set(a)}
    pc = {x: sum(1 for v in c if v == x) / n for x in set(c)}
    mi = 0.0
    for x in pa:
        for y in pc:
            pxy = sum(1 for u, v in zip(a, c) if u == x and v == y) / n
            if pxy:
                mi += pxy * math.log(pxy / (pa[x] * pc[y]))
    ha = -sum(p * math.log(p) for p in pa.values())
    hc = -sum(p * math.log(p) for p in pc.values())
    return 1.0 if ha + hc == 0 else 2 * mi / (ha + hc)


def test_recall_examples():
    emb = np.array([[0.0, 0.0], [10.0, 0.0], [0.1, 0.0], [10.1, 0.0]])
    labels = np.array([0, 1, 0, 1])
    assert recall_at_k(emb, labels, (1,))[1] == 1.0
    assert recall_at_k(emb, labels, (3,))[3] == 1.0


def test_recall_planted_configuration():
    emb = np.array([[0.0, 0], [1, 0], [0, 1], [5, 5], [5.5, 5], [0.4, 0.4]])
    labels = np.array([0, 1, 1, 2, 2, 0])
    for k in (1, 2, 3):
        assert recall_at_k(emb, labels, (k,))[k] == brute_recall(emb, labels, k)


def test_singleton_class_counts_as_miss():
    emb = np.array([[0.0], [1.0], [1.1], [3.0]])
    out = recall_at_k(emb, np.array([0, 1, 1, 2]), (1, 3))
    assert out == {1: 0.5, 3: 0.5}
    with pytest.raises(ValueError):
        recall_at_k(emb, np.array([0, 1, 1, 2]), (4,))


def test_recall_ties_go_to_lower_index():
    # query 0 is equidistant from 1 (same class) and 2 (other); 1 wins
    emb = np.array([[0.0], [1.0], [-1.0]])
    assert recall_at_k(emb, np.array([0, 0, 1]), (1,))[1] == pytest.approx(2 / 3)
    emb = np.array([[0.0], [-1.0], [1.0]])
    assert recall_at_k(emb, np.array([0, 1, 0]), (1,))[1] == pytest.approx(1 / 3)


@given(seeds)
def test_recall_monotone_in_k(seed):
    r = np.random.default_rng(seed)
    emb, labels = r.standard_normal((20, 3)), r.integers(0, 5, 20)
    out = recall_at_k(emb, labels, (1, 2, 4, 8))
    assert out[1] <= out[2] <= out[4] <= out[8]


def test_kmeans_examples(rng):
    x = rng.standard_normal((6, 2))
    res = kmeans(x, 6, rng)
    assert len(set(res.assignment.tolist())) == 6 and res.inertia == pytest.approx(0, abs=1e-20)
    res = kmeans(x, 1, rng)
    np.testing.assert_allclose(res.centroids[0], x.mean(0), atol=1e-15)
    with pytest.raises(ValueError):
        kmeans(x, 7, rng)


def test_kmeans_recovers_blobs(rng):
    truth = np.repeat([0, 1], 30)
    x = np.where(truth[:, None] == 0, -5.0, 5.0) + rng.standard_normal((60, 2)) * 0.3
    a = kmeans(x, 2, rng).assignment
    assert max(np.mean(a == truth), np.mean(a != truth)) == 1.0
    assert nmi(a, truth) == pytest.approx(1.0)


@given(seeds, st.integers(1, 6))
def test_kmeans_inertia_nonincreasing(seed, k):
    r = np.random.default_rng(seed)
    hist = kmeans(r.standard_normal((25, 3)), k, r).inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_nmi_examples():
    assert nmi([0, 0, 1, 1, 2], [5, 5, 7, 7, 9]) == pytest.approx(1.0)
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert nmi([3, 3], [1, 1]) == 1.0
    with pytest.raises(ValueError):
        nmi([0, 1], [0, 1, 1])


@given(seeds)
def test_nmi_symmetric_and_matches_oracle(seed):
    r = np.random.default_rng(seed)
    a, c = r.integers(0, 4, 30), r.integers(0, 3, 30)
    assert abs(nmi(a, c) - nmi(c, a)) <= 1e-12
    assert nmi(a, c) == pytest.approx(brute_nmi(a.tolist(), c.tolist()), abs=1e-12)


def test_extract_embeddings_properties(rng):
    model = L.Model.build([L.Linear(3, 8), L.ReLU(), L.Dropout(0.5), L.Linear(8, 4)], rng)
    x = rng.standard_normal((10, 3))
    x[3] = x[7]
    emb = extract_embeddings(model, x, batch_size=4)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(emb[3], emb[7])
    perm = rng.permutation(10)
    assert np.array_equal(extract_embeddings(model, x[perm]), emb[perm])


def test_report_text_round_trip(rng):
    labels = np.repeat(np.arange(4), 5)
    report = evaluate_retrieval(rng.standard_normal((20, 3)), labels)
    back = EvalReport.from_text(report.to_text())
    assert back == report
    assert report.csv_header() == ["R@1", "R@2", "R@4", "R@8", "NMI", "n_queries"]
    assert len(report.csv_row()) == 6
    assert 0 <= report.nmi <= 1
