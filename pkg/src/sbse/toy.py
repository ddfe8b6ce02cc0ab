"""Linear-Gaussian toy world.

Clean states ``x0 ~ N(mu0, s0^2)`` are corrupted element-wise as
``x1 = a x0 + b + n`` with ``n ~ N(0, sn^2)``, a scalar analogue of the
far-field mixing model where the gain plays the role of the per-bin mapping
and ``n`` aggregates reverberation and noise. Everything downstream is
jointly Gaussian, so the posterior-mean denoiser, the exact score of the
OUVE baseline and the marginal flow fields are all available in closed
form. Those oracles stand in for trained networks when checking samplers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from sbse import bridge
from sbse.baselines import OuveParams, flow_euler_sample, sgm_sample
from sbse.bridge import SamplerConfig, marginal
from sbse.schedules import ScheduleParams
from sbse.streams import make_rng


@dataclass(frozen=True)
class ToyModel:
    mu0: float = 0.0
    s0: float = 1.0
    a: float = 0.8
    b: float = 0.2
    sn: float = 0.5

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")
        if self.sn < 0:
            raise ValueError("sn must be non-negative")

    @property
    def x1_mean(self) -> float:
        return self.a * self.mu0 + self.b

    @property
    def x1_var(self) -> float:
        return self.a**2 * self.s0**2 + self.sn**2

    @property
    def posterior_var(self) -> float:
        """``Var(x0 | x1)``, identical for every observation."""
        return self.s0**2 * self.sn**2 / self.x1_var

    def posterior_mean(self, x1):
        gain = self.a * self.s0**2 / self.x1_var
        return self.mu0 + gain * (np.asarray(x1) - self.x1_mean)

    def sample_pairs(self, shape, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        x0 = self.mu0 + self.s0 * rng.standard_normal(shape)
        x1 = self.a * x0 + self.b + self.sn * rng.standard_normal(shape)
        return x0, x1


def exact_denoiser(toy: ToyModel, schedule: ScheduleParams, x_t, x_1, t: float) -> np.ndarray:
    """``E[x0 | x_t, x_1]`` under the toy prior and the bridge marginal.

    Given ``x_1``, ``x0 ~ N(m, P)`` and ``x_t | x0 ~ N(w0 x0 + w1 x_1, v)``,
    so conditioning the pair ``(x0, x_t)`` gives
    ``m + w0 P / (w0^2 P + v) (x_t - w0 m - w1 x_1)``.
    """
    x_t = np.asarray(x_t)
    mp = marginal(schedule, t)
    m = toy.posterior_mean(x_1)
    p = toy.posterior_var
    w0, w1 = mp.mean_weight_x0, mp.mean_weight_x1
    denom = np.asarray(w0 * w0 * p + mp.variance, dtype=np.float64)
    # denom == 0 means x_t carries nothing beyond x_1 (t = 1) or x0 is pinned (P = 0).
    gain = np.divide(w0 * p, denom, out=np.zeros_like(denom), where=denom > 0)
    return m + gain * (x_t - w0 * m - w1 * np.asarray(x_1))


def posterior_given_state_var(toy: ToyModel, schedule: ScheduleParams, t: float) -> float:
    """``Var(x0 | x_t, x_1)``; the Bayes risk of the exact denoiser at ``t``."""
    mp = marginal(schedule, t)
    p = toy.posterior_var
    denom = np.asarray(mp.mean_weight_x0**2 * p + mp.variance, dtype=np.float64)
    # denom == 0: at t = 1 nothing beyond x_1 is known (risk P); with P = 0 it is 0 anyway.
    out = np.divide(p * mp.variance, denom, out=np.full_like(denom, p), where=denom > 0)
    return float(out) if out.ndim == 0 else out


@dataclass
class ExactDenoiser:
    toy: ToyModel
    schedule: ScheduleParams

    def __call__(self, x_t, x_1, t):
        return exact_denoiser(self.toy, self.schedule, x_t, x_1, t)


@dataclass
class PosteriorSampleDenoiser:
    """Returns a draw from ``p(x0 | x_t, x_1)`` instead of its mean.

    With this stochastic oracle the bridge SDE update is an exact
    transition of the reverse chain, for any step count.
    """

    toy: ToyModel
    schedule: ScheduleParams
    rng: np.random.Generator

    def __call__(self, x_t, x_1, t):
        mean = exact_denoiser(self.toy, self.schedule, x_t, x_1, t)
        var = posterior_given_state_var(self.toy, self.schedule, t)
        return mean + np.sqrt(var) * self.rng.standard_normal(np.shape(mean))


def exact_ouve_score(toy: ToyModel, ouve: OuveParams) -> Callable:
    """Exact score of ``p_t(x | y)`` for the OUVE forward process on the toy."""

    def score(x, y, t):
        w = ouve.mean_weight(t)
        m = toy.posterior_mean(y)
        mean = w * m + (1.0 - w) * np.asarray(y)
        var = w * w * toy.posterior_var + ouve.variance(t)
        return -(np.asarray(x) - mean) / var

    return score


def paired_flow_field(toy: ToyModel) -> Callable:
    """Marginal velocity ``E[x1 - x0 | x_t = x]`` for the paired coupling."""
    s02, sn2 = toy.s0**2, toy.sn**2
    d_mean = (toy.a - 1.0) * toy.mu0 + toy.b

    def v(t, x):
        c0 = 1.0 - t + t * toy.a
        mean_t = c0 * toy.mu0 + t * toy.b
        var_t = c0 * c0 * s02 + t * t * sn2
        cov = (toy.a - 1.0) * c0 * s02 + t * sn2
        return d_mean + cov / var_t * (np.asarray(x) - mean_t)

    return v


def ot_flow_field(toy: ToyModel) -> Callable:
    """Velocity of the monotone (Wasserstein-2 optimal) map between the marginals."""
    mu0, mu1 = toy.mu0, toy.x1_mean
    ratio = np.sqrt(toy.x1_var) / toy.s0

    def v(t, x):
        mu_t = (1.0 - t) * mu0 + t * mu1
        return (mu1 - mu0) + (ratio - 1.0) * (np.asarray(x) - mu_t) / ((1.0 - t) + t * ratio)

    return v


# -- linear trainer -------------------------------------------------------


@dataclass
class LinearDenoiser:
    """Piecewise-in-time affine map on the concatenated ``(x_t, x_1)``.

    ``weights[k]`` is ``(d, 2d)`` and ``bias[k]`` is ``(d,)`` for bucket ``k``;
    buckets split ``[t_min, 1]`` uniformly.
    """

    weights: np.ndarray
    bias: np.ndarray
    t_min: float = 1e-4

    @classmethod
    def zeros(cls, dim: int = 1, n_buckets: int = 8, t_min: float = 1e-4) -> "LinearDenoiser":
        return cls(np.zeros((n_buckets, dim, 2 * dim)), np.zeros((n_buckets, dim)), t_min)

    @property
    def n_buckets(self) -> int:
        return self.weights.shape[0]

    def bucket(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        k = np.floor((t - self.t_min) / (1.0 - self.t_min) * self.n_buckets).astype(np.int64)
        return np.clip(k, 0, self.n_buckets - 1)

    def predict(self, x_t, x_1, t) -> np.ndarray:
        """Batched prediction: ``x_t``, ``x_1`` are ``(B, d)``, ``t`` is ``(B,)``."""
        u = np.concatenate([x_t, x_1], axis=-1)
        k = self.bucket(t)
        return np.einsum("bij,bj->bi", self.weights[k], u) + self.bias[k]

    def __call__(self, x_t, x_1, t):
        x_t = np.asarray(x_t)
        shape = x_t.shape
        xt2 = x_t.reshape(-1, self.weights.shape[1])
        x12 = np.asarray(x_1).reshape(xt2.shape)
        return self.predict(xt2, x12, np.full(len(xt2), t)).reshape(shape)

    def copy(self) -> "LinearDenoiser":
        return replace(self, weights=self.weights.copy(), bias=self.bias.copy())


def mse_and_grad(den: LinearDenoiser, x_t, x_1, t, x0):
    """Batch ``L_mse`` and its exact gradient w.r.t. ``(weights, bias)``."""
    u = np.concatenate([x_t, x_1], axis=-1)
    k = den.bucket(t)
    resid = den.predict(x_t, x_1, t) - x0
    n = resid.size
    loss = float(np.mean(resid**2))
    gw = np.zeros_like(den.weights)
    gb = np.zeros_like(den.bias)
    np.add.at(gw, k, 2.0 / n * resid[:, :, None] * u[:, None, :])
    np.add.at(gb, k, 2.0 / n * resid)
    return loss, gw, gb


@dataclass
class StepRecord:
    loss: float
    t: np.ndarray
    monitor: dict = field(default_factory=dict)


def training_step(
    schedule: ScheduleParams,
    den: LinearDenoiser,
    x0,
    x1,
    rng: np.random.Generator,
    lr: float,
    monitor: Callable[[np.ndarray, np.ndarray], dict] | None = None,
) -> tuple[LinearDenoiser, StepRecord]:
    """One bridge-loss gradient step on a batch of ``(x0, x1)`` pairs.

    Draws ``t ~ U(t_min, 1)`` per pair, perturbs through the bridge marginal,
    predicts ``x0`` and descends the exact ``L_mse`` gradient. ``monitor``
    receives ``(x0_hat, x0)`` and its results are recorded, not optimized.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if len(x0) == 0:
        raise ValueError("empty batch")
    t = rng.uniform(den.t_min, 1.0, size=len(x0))
    mp = marginal(schedule, t)
    w0, w1 = mp.mean_weight_x0[:, None], mp.mean_weight_x1[:, None]
    x_t = w0 * x0 + w1 * x1 + mp.std[:, None] * rng.standard_normal(x0.shape)
    loss, gw, gb = mse_and_grad(den, x_t, x1, t, x0)
    record = StepRecord(loss=loss, t=t)
    if monitor is not None:
        record.monitor = monitor(den.predict(x_t, x1, t), x0)
    new = den.copy()
    if lr > 0:
        new.weights -= lr * gw
        new.bias -= lr * gb
    return new, record


def bayes_floor(toy: ToyModel, schedule: ScheduleParams, t_min: float = 1e-4, n_grid: int = 4001) -> float:
    """``E_t Var(x0 | x_t, x_1)`` for ``t ~ U(t_min, 1)``: the best achievable ``L_mse``."""
    from scipy import integrate

    ts = np.linspace(t_min, 1.0, n_grid)
    vals = posterior_given_state_var(toy, schedule, ts)
    return float(integrate.simpson(vals, x=ts) / (1.0 - t_min))


def evaluate_mse(den: Callable, toy: ToyModel, schedule: ScheduleParams, n: int, rng, t_min: float = 1e-4) -> float:
    """Monte Carlo ``L_mse`` of any denoiser on fresh toy pairs and times."""
    x0, x1 = toy.sample_pairs(n, rng)
    t = rng.uniform(t_min, 1.0, size=n)
    mp = marginal(schedule, t)
    x_t = mp.mean(x0, x1) + mp.std * rng.standard_normal(n)
    if isinstance(den, LinearDenoiser):
        pred = den.predict(x_t[:, None], x1[:, None], t)[:, 0]
    else:
        pred = np.asarray(den(x_t, x1, t))
    return float(np.mean((pred - x0) ** 2))


def train(
    toy: ToyModel,
    schedule: ScheduleParams,
    n_steps: int = 2000,
    batch_size: int = 256,
    lr: float = 0.1,
    seed: int = 0,
    n_buckets: int = 8,
    t_min: float = 1e-4,
) -> tuple[LinearDenoiser, list[float]]:
    rng = make_rng(seed)
    den = LinearDenoiser.zeros(1, n_buckets, t_min)
    losses = []
    for _ in range(n_steps):
        x0, x1 = toy.sample_pairs((batch_size, 1), rng)
        den, rec = training_step(schedule, den, x0, x1, rng, lr)
        losses.append(rec.loss)
    return den, losses


# -- convergence experiment ----------------------------------------------

CONVERGENCE_FAMILIES = ("sb_sde", "sb_ode", "sgm", "rfm", "otfm")
CONDITIONAL_FAMILIES = ("sb_sde", "sb_ode", "sgm")


def _run_family(family, n, toy, schedule, ouve, x1_value, n_traj, rng, t_min):
    if family in CONDITIONAL_FAMILIES:
        y = np.full(n_traj, x1_value)
        if family == "sgm":
            out = sgm_sample(ouve, exact_ouve_score(toy, ouve), y, n, rng)
        else:
            cfg = SamplerConfig(schedule=schedule, n_steps=n, t_min=t_min, family=family)
            out = bridge.sample(cfg, ExactDenoiser(toy, schedule), y, rng)
        return out, float(toy.posterior_mean(x1_value)), toy.posterior_var
    field_fn = paired_flow_field(toy) if family == "rfm" else ot_flow_field(toy)
    start = toy.x1_mean + np.sqrt(toy.x1_var) * rng.standard_normal(n_traj)
    return flow_euler_sample(field_fn, start, n), toy.mu0, toy.s0**2


def convergence_experiment(
    steps_list=(1, 2, 4, 8, 16, 32),
    families=("sb_sde", "sb_ode", "sgm"),
    n_traj: int = 10_000,
    seed: int = 0,
    toy: ToyModel | None = None,
    schedule: ScheduleParams | None = None,
    ouve: OuveParams | None = None,
    x1_value: float = 1.3,
    t_min: float = 1e-4,
) -> list[dict]:
    """Terminal moment errors per (family, step count).

    Bridge and SGM families sample ``x0 | x1 = x1_value`` and are scored
    against the analytic posterior. Flow families transport the ``x1``
    marginal to the ``x0`` marginal and are scored against the latter.
    Each (family, N) cell uses its own random stream.
    """
    toy = toy or ToyModel()
    schedule = schedule or ScheduleParams.default("gmax")
    ouve = ouve or OuveParams()
    rows = []
    for fi, family in enumerate(families):
        if family not in CONVERGENCE_FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        for n in steps_list:
            rng = make_rng(seed, stream=fi * 1000 + int(n))
            start = time.perf_counter()
            out, t_mean, t_var = _run_family(family, int(n), toy, schedule, ouve, x1_value, n_traj, rng, t_min)
            wall = time.perf_counter() - start
            rows.append(
                {
                    "family": family,
                    "N": int(n),
                    "mean_err": float(abs(out.mean() - t_mean)),
                    "var_err": float(abs(out.var() - t_var)),
                    "target_var": float(t_var),
                    "wall_time": wall,
                }
            )
    return rows


def standardized_error(row: dict) -> float:
    """Scale-free scalar summary: mean error in posterior stds plus relative variance error."""
    return row["mean_err"] / np.sqrt(row["target_var"]) + row["var_err"] / row["target_var"]


def oracle_check(n_cases: int = 50, seed: int = 0) -> float:
    """Max gap between :func:`exact_denoiser` and dense joint-Gaussian conditioning."""
    from sbse.schedules import KINDS

    rng = make_rng(seed)
    worst = 0.0
    for i in range(n_cases):
        toy = ToyModel(
            mu0=rng.normal(),
            s0=rng.uniform(0.2, 2.0),
            a=rng.uniform(-1.5, 1.5),
            b=rng.normal(),
            sn=rng.uniform(0.05, 1.5),
        )
        sched = ScheduleParams.default(KINDS[i % len(KINDS)])
        t = float(rng.uniform(0.0, 1.0))
        x1 = float(rng.normal(toy.x1_mean, np.sqrt(toy.x1_var)))
        x_t = float(rng.normal())
        got = float(exact_denoiser(toy, sched, x_t, x1, t))
        want = dense_conditional_mean(toy, sched, x_t, x1, t)
        worst = max(worst, abs(got - want))
    return worst


def dense_conditional_mean(toy: ToyModel, schedule: ScheduleParams, x_t: float, x1: float, t: float) -> float:
    """``E[x0 | x_t, x1]`` from the full 3x3 joint covariance of ``(x0, x1, x_t)``."""
    mp = marginal(schedule, t)
    w0, w1, v = mp.mean_weight_x0, mp.mean_weight_x1, mp.variance
    # (x0, n, e) independent; x1 = a x0 + b + n; x_t = w0 x0 + w1 x1 + sqrt(v) e
    lin = np.array(
        [
            [1.0, 0.0, 0.0],
            [toy.a, 1.0, 0.0],
            [w0 + w1 * toy.a, w1, np.sqrt(v)],
        ]
    )
    base_cov = np.diag([toy.s0**2, toy.sn**2, 1.0])
    cov = lin @ base_cov @ lin.T
    mean = lin @ np.array([toy.mu0, 0.0, 0.0]) + np.array([0.0, toy.b, w1 * toy.b])
    obs = np.array([x1, x_t])
    c_xo = cov[0, 1:]
    c_oo = cov[1:, 1:]
    return float(mean[0] + c_xo @ np.linalg.solve(c_oo, obs - mean[1:]))
