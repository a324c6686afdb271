"""Named random streams derived from a single seed."""

import numpy as np

STREAMS = ("data", "init", "dropout", "sampler", "search", "eval")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS.index(name)])


def streams(seed: int) -> dict[str, np.random.Generator]:
    """One independent generator per component, so perturbing one leaves the others intact."""
    return {name: stream(seed, name) for name in STREAMS}
