"""Check every differentiable component against central finite differences.

Run: python demos/gradient_checks.py
"""

import numpy as np

from proxytrain import Tensor, finite_diff_check, gradients
from proxytrain import gradcheck as gc

# A hand-rolled example first: d/dw sum(w**3) = 3 w**2.
w = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
g = gradients((w * w * w).sum(), {"w": w})["w"]
print("analytic:", g, "expected:", 3 * w.data ** 2)
print("fd error:", finite_diff_check(lambda: (w * w * w).sum(), {"w": w}))

# Then the full registry, a few random instances each.
results = gc.run_gradcheck(instances=3, seed=0)
for r in results:
    print(r.line())
print("all passed" if all(r.passed for r in results) else "some components FAILED")
