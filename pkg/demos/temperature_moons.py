"""Low temperature helps a small classifier fit two moons faster.

Same data, same init and step budget; only the softmax scale changes.

Run: python demos/temperature_moons.py
"""

import numpy as np

from proxytrain.moons import temperature_study

acc = temperature_study(betas=(1.0, 3.0, 9.0), seeds=range(5))
for beta, scores in acc.items():
    print(f"beta={beta:4.1f}  train accuracy {np.mean(scores):.3f} +- {np.std(scores):.3f}")
