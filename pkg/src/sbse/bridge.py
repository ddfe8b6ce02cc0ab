"""Schrödinger bridge between paired data.

The bridge between a clean state ``x0`` and a corrupted state ``x1`` has
Gaussian boundary potentials and a Gaussian marginal at every time, so both
training-time perturbation and inference-time sampling reduce to closed-form
coefficient arithmetic on top of :mod:`sbse.schedules`.

A denoiser is any callable ``(x_t, x_1, t) -> x0_hat`` with output shaped
like ``x_t``. States may be real or complex arrays of any shape; a leading
axis is simply treated as a batch of independent trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from sbse.schedules import ScheduleParams, evaluate
from sbse.streams import make_rng, standard_normal_like

Denoiser = Callable[[np.ndarray, np.ndarray, float], np.ndarray]

FAMILIES = ("sb_sde", "sb_ode")


class NonFiniteStateError(ArithmeticError):
    """A sampler produced NaN or inf."""


class Gaussian(NamedTuple):
    mean: np.ndarray
    variance: float


@dataclass(frozen=True)
class MarginalParams:
    mean_weight_x0: float
    mean_weight_x1: float
    variance: float

    @property
    def std(self):
        return np.sqrt(self.variance)

    def mean(self, x0, x1):
        return self.mean_weight_x0 * np.asarray(x0) + self.mean_weight_x1 * np.asarray(x1)


@dataclass(frozen=True)
class SamplerConfig:
    schedule: ScheduleParams = field(default_factory=lambda: ScheduleParams.default("gmax"))
    n_steps: int = 4
    t_min: float = 1e-4
    seed: int = 0
    family: str = "sb_sde"

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown sampler family {self.family!r}; expected one of {FAMILIES}")

    def time_grid(self) -> np.ndarray:
        """``t_n = t_min + n (1 - t_min) / N`` for ``n = 0..N``; ``t_N`` is exactly 1."""
        n = np.arange(self.n_steps + 1)
        grid = self.t_min + n * (1.0 - self.t_min) / self.n_steps
        grid[-1] = 1.0
        return grid


def boundary_potentials(schedule: ScheduleParams, t: float, x0, x1) -> tuple[Gaussian, Gaussian]:
    """Forward and backward potentials ``(psi_hat_t, psi_t)`` as (mean, per-dim variance)."""
    v = evaluate(schedule, t)
    psi_hat = Gaussian(v.alpha * np.asarray(x0), v.alpha**2 * v.sigma2)
    psi = Gaussian(v.alpha_bar * np.asarray(x1), v.alpha**2 * v.sigma_bar2)
    return psi_hat, psi


def marginal(schedule: ScheduleParams, t) -> MarginalParams:
    """Coefficients of the bridge marginal ``N(w0 x0 + w1 x1, var I)``.

    Vectorizes over an array of times.
    """
    v = evaluate(schedule, t)
    s1 = v.sigma1_2
    return MarginalParams(
        mean_weight_x0=v.alpha * v.sigma_bar2 / s1,
        mean_weight_x1=v.alpha_bar * v.sigma2 / s1,
        variance=v.alpha**2 * v.sigma_bar2 * v.sigma2 / s1,
    )


def perturb(schedule: ScheduleParams, t: float, x0, x1, rng: np.random.Generator | None) -> np.ndarray:
    """Draw ``x_t`` from the bridge marginal. ``rng=None`` returns the mean.

    ``t`` may be an array broadcastable against the states.
    """
    x0 = np.asarray(x0)
    x1 = np.asarray(x1)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs x1 {x1.shape}")
    m = marginal(schedule, t)
    out = m.mean(x0, x1)
    if rng is not None and np.any(np.asarray(m.variance) > 0):
        out = out + m.std * standard_normal_like(out, rng)
    return out


def _call_denoiser(denoiser: Denoiser, x_t, x1, t) -> np.ndarray:
    x0_hat = np.asarray(denoiser(x_t, x1, t))
    if x0_hat.shape != x_t.shape:
        raise ValueError(f"denoiser returned shape {x0_hat.shape}, expected {x_t.shape}")
    return x0_hat


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError(f"non-finite sampler state at t={t:.6g}")


def sample_sde(
    config: SamplerConfig,
    denoiser: Denoiser,
    x1,
    rng: np.random.Generator | None = None,
    *,
    noise: bool = True,
) -> np.ndarray:
    """Reverse-SDE bridge sampler.

    Each step from ``t`` down to ``s`` moves to the bridge posterior given
    the current state and the denoiser's estimate of ``x0``:

        x_s = (a_s/a_t)(s2_s/s2_t) x_t + a_s (1 - s2_s/s2_t) x0_hat
              + a_s sqrt(s2_s (1 - s2_s/s2_t)) eps

    The noise term is dropped on the final step. ``noise=False`` drops it on
    every step, which yields the mean trajectory.
    """
    if rng is None:
        rng = make_rng(config.seed)
    x1 = np.asarray(x1)
    x = x1.copy()
    grid = config.time_grid()
    sched = evaluate(config.schedule, grid)
    for n in range(config.n_steps, 0, -1):
        t, s = grid[n], grid[n - 1]
        a_t, a_s = sched.alpha[n], sched.alpha[n - 1]
        ratio = sched.sigma2[n - 1] / sched.sigma2[n]
        x0_hat = _call_denoiser(denoiser, x, x1, float(t))
        x_next = (a_s / a_t) * ratio * x + a_s * (1.0 - ratio) * x0_hat
        if noise and n != 1:
            scale = a_s * np.sqrt(sched.sigma2[n - 1] * (1.0 - ratio))
            x_next = x_next + scale * standard_normal_like(x_next, rng)
        _check_finite(x_next, s)
        x = x_next
    return x


def sample_ode(config: SamplerConfig, denoiser: Denoiser, x1) -> np.ndarray:
    """Deterministic re-anchoring sampler.

    At each step the standardized residual of ``x_t`` around the marginal
    mean implied by ``x0_hat`` is carried over to the next time, so that
    ``x_s = mu_s(x0_hat, x1) + std_s z``. At ``t = 1`` the marginal is a
    point mass and ``z = 0``.
    """
    x1 = np.asarray(x1)
    x = x1.copy()
    grid = config.time_grid()
    margs = [marginal(config.schedule, float(t)) for t in grid]
    for n in range(config.n_steps, 0, -1):
        t = float(grid[n])
        m_t, m_s = margs[n], margs[n - 1]
        x0_hat = _call_denoiser(denoiser, x, x1, t)
        if m_t.variance > 0:
            z = (x - m_t.mean(x0_hat, x1)) / m_t.std
        else:
            z = np.zeros_like(x)
        x_next = m_s.mean(x0_hat, x1) + m_s.std * z
        _check_finite(x_next, grid[n - 1])
        x = x_next
    return x


def sample(config: SamplerConfig, denoiser: Denoiser, x1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Dispatch on ``config.family``."""
    if config.family == "sb_ode":
        return sample_ode(config, denoiser, x1)
    return sample_sde(config, denoiser, x1, rng)
