"""Closed-form noise schedules for the bridge reference SDE.

Three schedules are supported: ``gmax`` and ``ve`` are drift-free, while
``scaled_vp`` has a linear contracting drift. Every coefficient the samplers
need is evaluated here:

    alpha_t     = exp(int_0^t f)
    alpha_bar_t = exp(-int_t^1 f)
    sigma2_t    = int_0^t g^2 / alpha^2
    sigma_bar2  = int_t^1 g^2 / alpha^2 = sigma2_1 - sigma2_t

All functions accept a float or an ndarray of times in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate

ArrayLike = Union[float, np.ndarray]

KINDS = ("gmax", "scaled_vp", "ve")

_DEFAULTS = {
    "gmax": {"beta0": 0.01, "beta1": 20.0},
    "scaled_vp": {"beta0": 0.01, "beta1": 20.0, "c": 0.30},
    "ve": {"c": 0.40, "k": 2.6},
}


@dataclass(frozen=True)
class ScheduleParams:
    """Schedule kind plus the parameters that kind uses.

    Unused parameters are ignored, so ``ScheduleParams("ve")`` carries the
    default betas without complaint.
    """

    kind: str = "gmax"
    beta0: float = 0.01
    beta1: float = 20.0
    c: float = 0.40
    k: float = 2.6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("gmax", "scaled_vp"):
            if not (self.beta1 > self.beta0 > 0):
                raise ValueError(f"need beta1 > beta0 > 0, got beta0={self.beta0}, beta1={self.beta1}")
        if self.kind in ("scaled_vp", "ve") and not self.c > 0:
            raise ValueError(f"need c > 0, got {self.c}")
        if self.kind == "ve" and not self.k > 1:
            raise ValueError(f"need k > 1, got {self.k}")

    @classmethod
    def default(cls, kind: str, **overrides) -> "ScheduleParams":
        """Published defaults for ``kind``, with optional overrides."""
        if kind not in KINDS:
            raise ValueError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
        params = dict(_DEFAULTS[kind])
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=kind, **params)


@dataclass(frozen=True)
class ScheduleValues:
    f: ArrayLike
    g2: ArrayLike
    alpha: ArrayLike
    alpha_bar: ArrayLike
    sigma2: ArrayLike
    sigma_bar2: ArrayLike
    sigma1_2: float


def _check_t(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"time must lie in [0, 1], got {t!r}")
    return arr


def _beta(p: ScheduleParams, t):
    return p.beta0 + t * (p.beta1 - p.beta0)


def _beta_integral(p: ScheduleParams, t):
    return p.beta0 * t + 0.5 * (p.beta1 - p.beta0) * t * t


def drift(p: ScheduleParams, t):
    if p.kind == "scaled_vp":
        return -0.5 * _beta(p, t)
    return np.zeros_like(t)


def diffusion2(p: ScheduleParams, t):
    if p.kind == "gmax":
        return _beta(p, t)
    if p.kind == "scaled_vp":
        return p.c * _beta(p, t)
    return p.c * p.k ** (2.0 * t)


def log_alpha(p: ScheduleParams, t):
    if p.kind == "scaled_vp":
        return -0.5 * _beta_integral(p, t)
    return np.zeros_like(t)


def sigma2(p: ScheduleParams, t):
    if p.kind == "gmax":
        return 0.5 * t * t * (p.beta1 - p.beta0) + p.beta0 * t
    if p.kind == "scaled_vp":
        return p.c * np.expm1(_beta_integral(p, t))
    return p.c * np.expm1(2.0 * t * math.log(p.k)) / (2.0 * math.log(p.k))


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def evaluate(params: ScheduleParams, t: ArrayLike) -> ScheduleValues:
    """All schedule coefficients at time(s) ``t``."""
    t = _check_t(t)
    s1 = float(sigma2(params, np.float64(1.0)))
    s2 = sigma2(params, t)
    la = log_alpha(params, t)
    la1 = float(log_alpha(params, np.float64(1.0)))
    return ScheduleValues(
        f=_scalar(drift(params, t)),
        g2=_scalar(diffusion2(params, t)),
        alpha=_scalar(np.exp(la)),
        # exp(-int_t^1 f) = alpha_t / alpha_1
        alpha_bar=_scalar(np.exp(la - la1)),
        sigma2=_scalar(s2),
        sigma_bar2=_scalar(s1 - s2),
        sigma1_2=s1,
    )


def verify_quadrature(params: ScheduleParams, t: float, n_points: int = 1024) -> tuple[float, float]:
    """Residuals of the closed forms against composite-Simpson quadrature.

    Returns ``(|quad sigma2_t - sigma2_t|, |exp(quad int f) - alpha_t|)``.
    """
    if n_points < 16:
        raise ValueError(f"n_points must be >= 16, got {n_points}")
    t = float(_check_t(t))
    vals = evaluate(params, t)
    if t == 0.0:
        return float(abs(vals.sigma2)), float(abs(1.0 - vals.alpha))
    # Simpson needs an even number of intervals.
    n_int = n_points + (n_points % 2)
    tau = np.linspace(0.0, t, n_int + 1)
    f = drift(params, tau)
    int_f = np.concatenate([[0.0], integrate.cumulative_simpson(f, x=tau)])
    integrand = diffusion2(params, tau) * np.exp(-2.0 * int_f)
    quad_sigma2 = integrate.simpson(integrand, x=tau)
    quad_alpha = math.exp(integrate.simpson(f, x=tau))
    return float(abs(quad_sigma2 - vals.sigma2)), float(abs(quad_alpha - vals.alpha))


def table(params: ScheduleParams, n: int) -> np.ndarray:
    """Rows of (t, f, g2, alpha, alpha_bar, sigma2, sigma_bar2) on an even grid."""
    if n < 2:
        raise ValueError(f"need at least 2 grid points, got {n}")
    t = np.linspace(0.0, 1.0, n)
    v = evaluate(params, t)
    return np.column_stack([t, v.f, v.g2, v.alpha, v.alpha_bar, v.sigma2, v.sigma_bar2])
