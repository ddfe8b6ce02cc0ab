"""Thresholded rank of magnitude spectrograms.

Rank is counted from singular values: a magnitude grid's rank is the
number of singular values strictly above an absolute threshold ``eta``.
With ``eta = 0`` the usual floating-point tolerance
``max(shape) * eps * s_max`` is applied instead, so exact rank deficiency
is still detected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sbse.dsp import StftConfig, stft


@dataclass(frozen=True)
class RankConfig:
    eta: float = 0.5
    n_fft: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")


def thresholded_rank(grid, eta: float = 0.5) -> int:
    m = np.asarray(grid, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("need a non-empty 2-D grid")
    if np.any(m < 0):
        raise ValueError("magnitude grid has negative entries")
    s = np.linalg.svd(m, compute_uv=False)
    floor = max(m.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    return int(np.count_nonzero(s > max(eta, floor)))


def normalize_energy(samples) -> np.ndarray:
    """Scale to unit mean power (RMS 1)."""
    x = np.asarray(samples, dtype=np.float64)
    power = float(np.mean(x * x)) if x.size else 0.0
    if power == 0.0:
        raise ValueError("cannot normalize a silent signal")
    return x / np.sqrt(power)


def rank_of_wave(samples, config: RankConfig = RankConfig()) -> int:
    x = normalize_energy(samples)
    mag = np.abs(stft(x, StftConfig(config.n_fft, config.hop)))
    return thresholded_rank(mag, config.eta)


@dataclass
class RankReport:
    method_ranks: list
    reference_ranks: list
    differences: list = field(init=False)
    mean: float = field(init=False)
    median: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        d = np.asarray(self.method_ranks, dtype=np.int64) - np.asarray(self.reference_ranks, dtype=np.int64)
        self.differences = d.tolist()
        self.mean = float(np.mean(d)) if d.size else 0.0
        self.median = float(np.median(d)) if d.size else 0.0
        self.variance = float(np.var(d)) if d.size else 0.0

    def summary(self) -> dict:
        return {"n": len(self.differences), "mean": self.mean, "median": self.median, "variance": self.variance}


def rank_diff_stats(method_waves, reference_waves, config: RankConfig = RankConfig()) -> RankReport:
    """Per-pair ``rank(method) - rank(reference)`` with corpus statistics."""
    if len(method_waves) != len(reference_waves):
        raise ValueError(f"corpus size mismatch: {len(method_waves)} vs {len(reference_waves)}")
    return RankReport(
        method_ranks=[rank_of_wave(w, config) for w in method_waves],
        reference_ranks=[rank_of_wave(w, config) for w in reference_waves],
    )


def subadditivity_audit(n_trials: int = 1000, shape=(8, 8), eta: float = 0.5, seed: int = 0) -> dict:
    """Count violations of ``rank(A + B) <= rank(A) + rank(B)`` on random nonnegative pairs.

    Pairs are built as sums of a few nonnegative outer products so the
    ranks are small and the inequality is not vacuous.
    """
    from sbse.streams import make_rng

    rng = make_rng(seed)
    violations = 0
    for _ in range(n_trials):
        ra, rb = rng.integers(1, 4, size=2)
        a = rng.uniform(0, 1, (shape[0], ra)) @ rng.uniform(0, 1, (ra, shape[1]))
        b = rng.uniform(0, 1, (shape[0], rb)) @ rng.uniform(0, 1, (rb, shape[1]))
        if thresholded_rank(a + b, eta) > thresholded_rank(a, eta) + thresholded_rank(b, eta):
            violations += 1
    return {"trials": n_trials, "eta": eta, "violations": violations}
