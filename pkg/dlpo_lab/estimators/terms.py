"""Differentiable building blocks shared by the fine-tuning estimators.

Every term returns ``(value, gradient)`` for descent. Trajectory states are held
fixed; only the network parameters are differentiated.
"""

from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from dlpo_lab.diffusion.denoiser import DenoiserParams, build_eps, mean_coefficients, predict_eps
from dlpo_lab.diffusion.loss import LossNorm, noise_residual, residual_norm
from dlpo_lab.diffusion.policy import LOG_2PI, StepBatch, Trajectory, step_means
from dlpo_lab.diffusion.schedule import ScheduleParams, implied_noise, q_sample
from dlpo_lab.engine.autograd import Tape, Var
from dlpo_lab.errors import ArgumentError

TSampling = Literal["single_uniform", "all_steps"]


class ResidualRows(BaseModel):
    """Noisy inputs, targets and per-row weights for a noise-prediction residual."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_t: np.ndarray
    c: np.ndarray
    t: np.ndarray
    eps_true: np.ndarray
    owner: np.ndarray
    """Trajectory (or dataset draw) each row belongs to."""
    share: np.ndarray
    """Row weight within its owner; each owner's shares sum to 1."""

    def per_owner(self, row_values: np.ndarray, owners: int) -> np.ndarray:
        out = np.zeros(owners)
        np.add.at(out, self.owner, self.share * row_values)
        return out


def _tape_means(tape: Tape, params: DenoiserParams, steps: StepBatch, sched: ScheduleParams) -> Var:
    eps = build_eps(tape, params.layout, steps.x_t, steps.c, steps.t)
    inv_sqrt_alpha, noise_coef = mean_coefficients(steps.t, sched, steps.x_t)
    return tape.mul(tape.sub(steps.x_t, tape.mul(eps, noise_coef)), inv_sqrt_alpha)


def reinforce_term(
    params: DenoiserParams,
    steps: StepBatch,
    sched: ScheduleParams,
    weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """``−(1/B)·Σ_b w_b·Σ_t log p_θ(x_{t−1}|x_t, c)`` on the stored states."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (steps.size,):
        raise ArgumentError(f"need one weight per trajectory, got shape {weights.shape}")
    tape = Tape(params.layout.size)
    mu = _tape_means(tape, params, steps, sched)
    n = steps.x_t.shape[-1]
    quad = tape.sum(tape.square(tape.sub(steps.x_prev, mu)), axis=-1)
    logp = tape.sub(-0.5 * n * (LOG_2PI + np.log(steps.sigma2)), tape.mul(quad, 0.5 / steps.sigma2))
    tape.sum(tape.mul(logp, -weights[steps.owner] / steps.size))
    value = tape.forward(params.theta)
    return value, tape.backward()


def kl_term(
    params: DenoiserParams,
    pretrained: DenoiserParams,
    steps: StepBatch,
    sched: ScheduleParams,
) -> tuple[float, np.ndarray]:
    """``(1/B)·Σ_b Σ_t KL(p_θ ‖ p_pre)``, differentiated through μ_θ only."""
    mu_pre = step_means(pretrained, steps, sched)
    tape = Tape(params.layout.size)
    mu = _tape_means(tape, params, steps, sched)
    rows = tape.sum(tape.square(tape.sub(mu, mu_pre)), axis=-1)
    tape.sum(tape.mul(rows, 0.5 / (steps.sigma2 * steps.size)))
    value = tape.forward(params.theta)
    return value, tape.backward()


def trajectory_rows(
    batch: Sequence[Trajectory],
    sched: ScheduleParams,
    rng: Optional[np.random.Generator] = None,
    t_sampling: TSampling = "single_uniform",
) -> ResidualRows:
    """Residual rows on the trajectories' own states with ε̃ = implied_noise(x_t, x_0, t).

    ``single_uniform`` draws one ``t ~ U{1..T}`` per trajectory from ``rng``;
    ``all_steps`` uses every ``t`` and weights each by ``1/T``.
    """
    T = sched.T
    B = len(batch)
    if t_sampling == "single_uniform":
        if rng is None:
            raise ArgumentError("single_uniform step sampling needs a generator")
        t = rng.integers(1, T + 1, size=B)
        owner = np.arange(B)
        share = np.ones(B)
    elif t_sampling == "all_steps":
        t = np.tile(np.arange(1, T + 1), B)
        owner = np.repeat(np.arange(B), T)
        share = np.full(B * T, 1.0 / T)
    else:
        raise ArgumentError(f"unknown step sampling {t_sampling!r}")
    x_t = np.stack([batch[b].state_at(int(s)) for b, s in zip(owner, t)])
    x0 = np.stack([batch[b].x0 for b in owner])
    return ResidualRows(
        x_t=x_t,
        c=np.array([batch[b].c for b in owner], dtype=np.int64),
        t=t,
        eps_true=implied_noise(x_t, x0, t, sched),
        owner=owner,
        share=share,
    )


def dataset_rows(
    dataset: Sequence[tuple[np.ndarray, int]],
    count: int,
    sched: ScheduleParams,
    rng: np.random.Generator,
) -> ResidualRows:
    """Residual rows on fresh forward-diffused dataset items.

    Draws, in order, the item indices, the steps and the noise from ``rng``.
    """
    if not dataset:
        raise ArgumentError("dataset penalty needs a non-empty dataset")
    picks = rng.integers(len(dataset), size=count)
    x0 = np.stack([np.asarray(dataset[i][0], dtype=np.float64) for i in picks])
    t = rng.integers(1, sched.T + 1, size=count)
    eps = rng.standard_normal(x0.shape)
    return ResidualRows(
        x_t=q_sample(x0, t, eps, sched),
        c=np.array([dataset[i][1] for i in picks], dtype=np.int64),
        t=t,
        eps_true=eps,
        owner=np.arange(count),
        share=np.ones(count),
    )


def residual_term(
    params: DenoiserParams,
    rows: ResidualRows,
    owner_weights: np.ndarray,
    loss_norm: LossNorm = "l2",
) -> tuple[float, np.ndarray]:
    """``Σ_b w_b·Σ_{rows of b} share·‖ε̃ − ε_θ‖`` and its gradient."""
    weights = np.asarray(owner_weights, dtype=np.float64)[rows.owner] * rows.share
    return noise_residual(params, rows.x_t, rows.c, rows.t, rows.eps_true, weights, loss_norm)


def residual_values(params: DenoiserParams, rows: ResidualRows, owners: int, loss_norm: LossNorm = "l2") -> np.ndarray:
    """Detached per-owner residual norm."""
    norms = residual_norm(rows.eps_true, predict_eps(params, rows.x_t, rows.c, rows.t), loss_norm)
    return rows.per_owner(norms, owners)
