"""Reference samplers: OUVE score diffusion, rectified and OT flow matching.

The OUVE forward SDE (mean-reverting towards the observation ``y``) is

    dx = gamma (y - x) dt + g(t) dw,
    g(t) = sigma_min (sigma_max/sigma_min)^t sqrt(2 log(sigma_max/sigma_min)),

whose perturbation kernel is Gaussian with mean
``e^{-gamma t} x0 + (1 - e^{-gamma t}) y``. Flow-matching paths use the
linear interpolant ``x_t = (1 - t) x0 + t x1`` with ``dx/dt = v(t, x)``;
sampling integrates from ``t = 1`` back to ``t = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from sbse.bridge import NonFiniteStateError
from sbse.streams import standard_normal_like

ScoreFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
VelocityFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OuveParams:
    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    n_corrector: int = 1
    corrector_snr: float = 0.5
    t_eps: float = 0.03

    def __post_init__(self):
        if not self.sigma_max > self.sigma_min > 0:
            raise ValueError("need sigma_max > sigma_min > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.n_corrector < 0 or self.corrector_snr <= 0:
            raise ValueError("n_corrector must be >= 0 and corrector_snr > 0")
        if not 0 < self.t_eps < 1:
            raise ValueError("t_eps must lie in (0, 1)")

    @property
    def _log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def mean_weight(self, t: float) -> float:
        """Weight ``e^{-gamma t}`` on ``x0``; ``y`` gets the complement."""
        return math.exp(-self.gamma * t)

    def mean(self, x0, y, t: float):
        w = self.mean_weight(t)
        return w * np.asarray(x0) + (1.0 - w) * np.asarray(y)

    def variance(self, t: float) -> float:
        lr = self._log_ratio
        return (
            self.sigma_min**2
            * ((self.sigma_max / self.sigma_min) ** (2 * t) - math.exp(-2 * self.gamma * t))
            * lr
            / (self.gamma + lr)
        )

    def diffusion(self, t: float) -> float:
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t * math.sqrt(2 * self._log_ratio)


def sgm_score_target(x_t, x0, y, t: float, ouve: OuveParams) -> np.ndarray:
    """Score of the perturbation kernel, ``-(x_t - mean_t) / var_t``."""
    var = ouve.variance(t)
    if not var > 0:
        raise ValueError(f"perturbation variance vanishes at t={t}")
    return -(np.asarray(x_t) - ouve.mean(x0, y, t)) / var


def sgm_sample(
    ouve: OuveParams,
    score_fn: ScoreFn,
    y,
    n_steps: int,
    rng: np.random.Generator,
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """Predictor-corrector sampling of the OUVE reverse SDE.

    Starts from ``y + sqrt(var_1) z`` unless ``x_init`` is given, then runs
    ``n_steps`` Euler-Maruyama steps from ``t = 1`` to ``t_eps``. Each
    predictor step is preceded by ``n_corrector`` Langevin steps with size
    ``2 (snr |z| / |score|)^2``. The noiseless mean of the last predictor
    step is returned.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    y = np.asarray(y)
    if x_init is None:
        x = y + math.sqrt(ouve.variance(1.0)) * standard_normal_like(y, rng)
    else:
        x = np.array(x_init, dtype=np.result_type(x_init, y))
    ts = np.linspace(1.0, ouve.t_eps, n_steps + 1)
    x_mean = x
    for i in range(n_steps):
        t = float(ts[i])
        dt = float(ts[i] - ts[i + 1])
        for _ in range(ouve.n_corrector):
            s = np.asarray(score_fn(x, y, t))
            z = standard_normal_like(x, rng)
            s_norm = np.linalg.norm(s)
            if s_norm == 0:
                continue
            eps = 2.0 * (ouve.corrector_snr * np.linalg.norm(z) / s_norm) ** 2
            x = x + eps * s + np.sqrt(2.0 * eps) * z
        g = ouve.diffusion(t)
        s = np.asarray(score_fn(x, y, t))
        drift = ouve.gamma * (y - x) - g * g * s
        x_mean = x - drift * dt
        x = x_mean + g * math.sqrt(dt) * standard_normal_like(x, rng)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_mean))):
            raise NonFiniteStateError(f"non-finite SGM state at t={t:.6g}")
    return x_mean


def rfm_velocity_target(x_t, x0, t) -> np.ndarray:
    """Rectified-flow regression target ``(x_t - x0) / t``; ``t`` may be per-sample."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError(f"velocity target needs t > 0, got {t}")
    return (np.asarray(x_t) - np.asarray(x0)) / t


def linear_interpolant(x0, x1, t: float) -> np.ndarray:
    return (1.0 - t) * np.asarray(x0) + t * np.asarray(x1)


def flow_euler_sample(velocity_fn: VelocityFn, x1, n_steps: int) -> np.ndarray:
    """Uniform Euler integration of ``dx/dt = v(t, x)`` from ``t = 1`` to ``t = 0``."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.array(x1)
    dt = 1.0 / n_steps
    for i in range(n_steps, 0, -1):
        t = i * dt
        x = x - dt * np.asarray(velocity_fn(t, x))
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(f"non-finite flow state at t={t - dt:.6g}")
    return x


def _pair_costs(x0_batch, x1_batch) -> np.ndarray:
    a = np.asarray(x0_batch).reshape(len(x0_batch), -1)
    b = np.asarray(x1_batch).reshape(len(x1_batch), -1)
    return (np.abs(a[:, None, :] - b[None, :, :]) ** 2).sum(-1)


def ot_pair_minibatch(x0_batch, x1_batch) -> np.ndarray:
    """Squared-Euclidean optimal assignment; ``x0[i]`` pairs with ``x1[perm[i]]``."""
    if len(x0_batch) != len(x1_batch):
        raise ValueError(f"batch size mismatch: {len(x0_batch)} vs {len(x1_batch)}")
    cost = _pair_costs(x0_batch, x1_batch)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


def pairing_cost(x0_batch, x1_batch, perm) -> float:
    cost = _pair_costs(x0_batch, x1_batch)
    return float(cost[np.arange(len(perm)), perm].sum())


def otfm_targets(x0_batch, x1_batch, t):
    """OT-paired interpolants and their velocity targets for a minibatch.

    Returns ``(x_t, v_target, perm)``. ``t`` may be a scalar or per-sample.
    """
    x0 = np.asarray(x0_batch)
    perm = ot_pair_minibatch(x0, x1_batch)
    x1 = np.asarray(x1_batch)[perm]
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.ndim == 1:
        t_arr = t_arr.reshape((-1,) + (1,) * (x0.ndim - 1))
    x_t = (1.0 - t_arr) * x0 + t_arr * x1
    return x_t, x1 - x0, perm
