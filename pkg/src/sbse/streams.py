"""Seeded, counter-based random streams.

Every stochastic routine takes an explicit ``np.random.Generator``. Streams
are Philox generators keyed by ``(seed, stream)`` so that independent
workers can be handed disjoint streams and still reproduce bit-for-bit.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def standard_normal_like(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Gaussian noise shaped like ``x``.

    Complex inputs get circularly-symmetric noise: real and imaginary parts
    are independent with variance 1/2 each, so ``E|z|^2 = 1``.
    """
    x = np.asarray(x)
    if np.iscomplexobj(x):
        z = rng.standard_normal((2,) + x.shape)
        return (z[0] + 1j * z[1]) * np.sqrt(0.5)
    return rng.standard_normal(x.shape)
