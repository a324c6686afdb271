"""Recall@k and clustering NMI on a hand-made embedding.

Run: python demos/metrics.py
"""

import numpy as np

from proxytrain import evaluate_retrieval, kmeans, nmi, recall_at_k

rng = np.random.default_rng(0)
centers = rng.standard_normal((5, 3)) * 4
labels = np.repeat(np.arange(5), 20)
for noise in (0.5, 2.0, 6.0):
    emb = centers[labels] + rng.standard_normal((100, 3)) * noise
    r = recall_at_k(emb, labels, (1, 4))
    km = kmeans(emb, 5, np.random.default_rng(1))
    print(f"noise {noise}: R@1 {r[1]:.2f}  R@4 {r[4]:.2f}  NMI {nmi(km.assignment, labels):.3f}")

print(evaluate_retrieval(emb, labels, rng=np.random.default_rng(1)).to_text())
