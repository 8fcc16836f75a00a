from typing import Literal, Sequence

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserParams, build_eps
from dlpo_lab.diffusion.schedule import ScheduleParams, q_sample
from dlpo_lab.engine.autograd import Tape, Var
from dlpo_lab.errors import ArgumentError

LossNorm = Literal["l2", "l2sq"]


def residual_rows(tape: Tape, residual: Var, loss_norm: LossNorm = "l2") -> Var:
    """Per-row ‖residual‖₂ (or its square) as a tape node of shape ``(rows,)``."""
    squared = tape.sum(tape.square(residual), axis=-1)
    return tape.sqrt(squared) if loss_norm == "l2" else squared


def residual_norm(eps_true: np.ndarray, eps_pred: np.ndarray, loss_norm: LossNorm = "l2") -> np.ndarray:
    squared = np.sum((eps_true - eps_pred) ** 2, axis=-1)
    return np.sqrt(squared) if loss_norm == "l2" else squared


def noise_residual(
    params: DenoiserParams,
    x_t: np.ndarray,
    c: np.ndarray,
    t: np.ndarray,
    eps_true: np.ndarray,
    weights: np.ndarray,
    loss_norm: LossNorm = "l2",
) -> tuple[float, np.ndarray]:
    """Value and gradient of ``Σ_rows weights·‖eps_true − ε_θ(x_t, c, t)‖``."""
    tape = Tape(params.layout.size)
    eps_pred = build_eps(tape, params.layout, x_t, c, t)
    rows = residual_rows(tape, tape.const(eps_true) - eps_pred, loss_norm)
    tape.sum(rows * np.asarray(weights, dtype=np.float64))
    value = tape.forward(params.theta)
    return value, tape.backward()


def ddpm_loss(
    params: DenoiserParams,
    batch: Sequence[tuple[np.ndarray, int]],
    rng: np.random.Generator,
    sched: ScheduleParams,
    loss_norm: LossNorm = "l2",
) -> tuple[float, np.ndarray]:
    """Mean noise-prediction residual over ``batch`` and its gradient.

    Draws, in order, one step per element ``t ~ U{1..T}`` and then the noise
    matrix ``ε ~ N(0, I)`` of shape ``(len(batch), N)`` from ``rng``.
    """
    if not batch:
        raise ArgumentError("ddpm_loss needs a non-empty batch")
    x0 = np.stack([np.asarray(item[0], dtype=np.float64) for item in batch])
    c = np.array([item[1] for item in batch], dtype=np.int64)
    t = rng.integers(1, sched.T + 1, size=len(batch))
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, eps, sched)
    weights = np.full(len(batch), 1.0 / len(batch))
    return noise_residual(params, x_t, c, t, eps, weights, loss_norm)
