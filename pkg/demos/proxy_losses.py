"""Compare ProxyNCA, ProxyNCA++ and NormSoftMax on one small batch.

Shows that the ++ loss is a log-softmax over scaled proxy distances, that
NormSoftMax at 2*beta gives the same number, and how the inverse
temperature sharpens the proxy assignment.

Run: python demos/proxy_losses.py
"""

import numpy as np

from proxytrain import Tensor, normsoftmax_loss, proxynca_loss, proxynca_pp_loss
from proxytrain.losses import proxy_assignment_distribution

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((6, 4)))
proxies = Tensor(rng.standard_normal((3, 4)))
labels = np.array([0, 0, 1, 1, 2, 2])

for beta in (1.0, 3.0, 9.0):
    pp = proxynca_pp_loss(x, labels, proxies, beta).item()
    nsm = normsoftmax_loss(x, labels, proxies, 2 * beta).item()
    print(f"beta={beta:4.1f}  proxynca={proxynca_loss(x, labels, proxies, beta).item():8.4f}"
          f"  proxynca++={pp:8.4f}  normsoftmax(2beta)={nsm:8.4f}")

# lower temperature: the same argmax, more mass on it
for beta in (1.0, 9.0):
    p = proxy_assignment_distribution(x, proxies, beta).data[0]
    print(f"beta={beta:4.1f}  assignment of first sample: {np.round(p, 3)}")

# rescaling the proxies changes nothing: they are normalised first
scaled = Tensor(proxies.data * 50)
print("scale invariant:", np.isclose(proxynca_pp_loss(x, labels, scaled).item(),
                                     proxynca_pp_loss(x, labels, proxies).item()))
