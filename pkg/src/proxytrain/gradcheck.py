"""Finite-difference gate over every loss and layer."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import losses, semi
from .autodiff import Tensor, finite_diff_check

TOLERANCE = 1e-5


def _p(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _projected(fn, out_shape, rng):
    """Reduce a non-scalar output to a scalar with a fixed random projection."""
    w = rng.standard_normal(out_shape)
    return lambda: (fn() * w).sum()


# Each builder takes an rng and returns (loss_fn, params) for one small instance.


def _nca(rng):
    x, same, diff = _p(rng, 3), _p(rng, 2, 3), _p(rng, 3, 3)
    return lambda: losses.nca_loss(x, same, diff), dict(x=x, same=same, diff=diff)


def _proxy_builder(loss, beta):
    def build(rng):
        x, p = _p(rng, 4, 3), _p(rng, 5, 3)
        y = rng.integers(0, 5, 4)
        return lambda: loss(x, y, p, beta), dict(x=x, proxies=p)
    return build


def _self_perturbation(rng):
    z, zs = _p(rng, 2, 4), _p(rng, 2, 4)
    return lambda: semi.self_perturbation_loss(z, zs), dict(z=z, z_star=zs)


def _contrastive(same):
    def build(rng):
        a, b = _p(rng, 4, scale=0.3), _p(rng, 4, scale=0.3)
        return lambda: semi.contrastive_loss(a, b, same, margin=1.0), dict(z_i=a, z_j=b)
    return build


def _masked_ce(rng):
    o = _p(rng, 2, 3, 3)
    y = rng.integers(0, 3, (2, 3))
    y[0, 0] = semi.IGNORE
    return lambda: semi.masked_cross_entropy(o, y), dict(o=o)


def _consistency(rng):
    fs, ft = _p(rng, 2, 3, 4), _p(rng, 2, 3, 4)
    seed = int(rng.integers(1 << 30))
    # a fresh generator per call keeps the dropout masks identical across evaluations
    return (lambda: semi.consistency_feature_loss(fs, ft, 0.3, np.random.default_rng(seed)),
            dict(f_student=fs, f_teacher=ft))


def _linear(rng):
    x, W, b = _p(rng, 3, 4), _p(rng, 4, 2), _p(rng, 2)
    return _projected(lambda: L.linear(x, W, b), (3, 2), rng), dict(x=x, W=W, b=b)


def _layer(fn, shape):
    def build(rng):
        x = _p(rng, *shape)
        out = fn(x)
        return _projected(lambda: fn(x), out.shape, rng), dict(x=x)
    return build


def _dropout(rng):
    x = _p(rng, 3, 4)
    seed = int(rng.integers(1 << 30))
    fn = lambda: L.dropout(x, 0.4, np.random.default_rng(seed))  # noqa: E731
    return _projected(fn, (3, 4), rng), dict(x=x)


COMPONENTS = {
    "loss/nca": _nca,
    "loss/proxynca": _proxy_builder(losses.proxynca_loss, 1.0),
    "loss/proxynca_pp": _proxy_builder(losses.proxynca_pp_loss, 9.0),
    "loss/normsoftmax": _proxy_builder(losses.normsoftmax_loss, 2.0),
    "loss/self_perturbation": _self_perturbation,
    "loss/contrastive_same": _contrastive(True),
    "loss/contrastive_diff": _contrastive(False),
    "loss/masked_cross_entropy": _masked_ce,
    "loss/consistency": _consistency,
    "layer/linear": _linear,
    "layer/relu": _layer(L.relu, (3, 4)),
    "layer/layer_norm": _layer(L.layer_norm, (3, 5)),
    "layer/l2_normalize": _layer(L.l2_normalize, (3, 4)),
    "layer/kmax_k1": _layer(lambda g: L.global_k_max_pool(g, 1), (2, 5, 3)),
    "layer/kmax_k3": _layer(lambda g: L.global_k_max_pool(g, 3), (2, 5, 3)),
    "layer/kmax_mean": _layer(lambda g: L.global_k_max_pool(g, 5), (2, 5, 3)),
    "layer/dropout": _dropout,
}


@dataclass
class CheckResult:
    name: str
    max_error: float
    instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28} max_err={self.max_error:.3e} n={self.instances}"


def run_gradcheck(components: dict | None = None, instances: int = 20, seed: int = 0,
                  eps: float = 1e-6) -> list[CheckResult]:
    """Worst finite-difference error per component over random instances."""
    components = COMPONENTS if components is None else components
    results = []
    for i, (name, build) in enumerate(components.items()):
        start = time.perf_counter()
        rng = np.random.default_rng([seed, i])
        worst = 0.0
        for _ in range(instances):
            loss_fn, params = build(rng)
            worst = max(worst, finite_diff_check(loss_fn, params, eps))
        results.append(CheckResult(name, worst, instances, time.perf_counter() - start))
    return results
