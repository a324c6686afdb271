"""Fixed, greedy and random alpha schedules for iterative self-training.

A toy segmentation task with 2% human labels. Every stage fine-tunes on a
mix of human labels (weight alpha) and the previous model's pseudo-labels
(weight 1 - alpha). FIST keeps alpha fixed, GIST grows a beam of paths
greedily, RIST samples whole paths at random and keeps the best on dev.

Run: python demos/self_training_search.py      (under a minute)
"""

import numpy as np

from proxytrain import SelfTrainConfig, fist_run, gist_search, rist_search
from proxytrain.data import make_toy_grid_segmentation
from proxytrain.selftrain import SelfTrainer

cfg = SelfTrainConfig(stages=5, k_iters=100)
data = make_toy_grid_segmentation(cfg.grid, cfg.n_images, cfg.labeled_fraction, seed=0,
                                  n_dev=cfg.n_dev, n_test=cfg.n_test, noise=cfg.noise,
                                  threshold=cfg.threshold)
trainer = SelfTrainer(cfg, data)
learner0 = trainer.initial(np.random.default_rng([0, 0]))
print("stage 0 (human labels only): dev %.3f  test %.3f" % trainer.evaluate(learner0))

results = {
    "fist a=0.75": fist_run(trainer, learner0, cfg.stages, 0.75),
    "gist beam=2": gist_search(trainer, learner0, cfg.stages, beam=2),
    "rist 5 trials": rist_search(trainer, learner0, cfg.stages, n_trials=5),
}
for name, res in results.items():
    print(f"{name:>14}: best path {res.best_path}  dev {res.best_dev:.3f}  test {res.best_test:.3f}")
print("\nfist dev score per stage:", np.round(results["fist a=0.75"].per_stage_dev_scores(), 3))
