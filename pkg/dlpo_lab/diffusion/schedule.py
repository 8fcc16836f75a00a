"""Linear variance schedule and the closed-form forward (corruption) process.

Steps are 1-based: ``t = 1`` is the least noisy step and ``t = T`` the most noisy one.
Every function accepts either one integer step or an integer array with one step per
row of a batched ``x``.
"""

from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from dlpo_lab.errors import ArgumentError, ConfigError

Steps = Union[int, np.ndarray]


class ScheduleParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray
    """Reverse-step variances: posterior variances floored at ``sigma2_min``."""
    sigma2_min: float

    def alpha_bar_prev(self) -> np.ndarray:
        """``ᾱ_{t-1}`` for t = 1..T, with ``ᾱ_0 = 1``."""
        return np.concatenate(([1.0], self.alpha_bar[:-1]))


def make_schedule(
    T: int,
    beta_start: float,
    beta_end: float,
    sigma2_min: float = 1e-6,
) -> ScheduleParams:
    if T < 1:
        raise ConfigError(f"step count T must be at least 1, got {T}", key="T")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}",
            key="beta_start",
        )
    if not sigma2_min > 0:
        raise ConfigError(f"sigma2_min must be positive, got {sigma2_min}", key="sigma2_min")

    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))

    posterior = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    posterior[0] = beta[0]
    sigma2 = np.maximum(posterior, sigma2_min)

    return ScheduleParams(
        T=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        sigma2=sigma2,
        sigma2_min=sigma2_min,
    )


def check_steps(t: Steps, sched: ScheduleParams, low: int = 1) -> np.ndarray:
    steps = np.asarray(t)
    if not np.issubdtype(steps.dtype, np.integer):
        raise ArgumentError(f"diffusion steps must be integers, got {steps.dtype}")
    if np.any(steps < low) or np.any(steps > sched.T):
        raise ArgumentError(f"diffusion step out of range [{low}, {sched.T}]: {t}")
    return steps


def at_step(values: np.ndarray, t: Steps, x: np.ndarray) -> np.ndarray:
    """Per-step coefficient shaped to broadcast against ``x``."""
    steps = np.asarray(t)
    coef = values[steps - 1]
    if steps.ndim == 0:
        return coef
    return coef.reshape(coef.shape + (1,) * (np.ndim(x) - coef.ndim))


def q_sample(x0: np.ndarray, t: Steps, eps: np.ndarray, sched: ScheduleParams) -> np.ndarray:
    check_steps(t, sched)
    alpha_bar = at_step(sched.alpha_bar, t, x0)
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def implied_noise(x_t: np.ndarray, x0: np.ndarray, t: Steps, sched: ScheduleParams) -> np.ndarray:
    check_steps(t, sched)
    alpha_bar = at_step(sched.alpha_bar, t, x0)
    return (x_t - np.sqrt(alpha_bar) * x0) / np.sqrt(1.0 - alpha_bar)


def posterior_coefficients(t: Steps, sched: ScheduleParams) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of ``x0`` and ``x_t`` in the forward-process posterior mean."""
    steps = check_steps(t, sched)
    alpha_bar = sched.alpha_bar[steps - 1]
    alpha_bar_prev = sched.alpha_bar_prev()[steps - 1]
    beta = sched.beta[steps - 1]
    alpha = sched.alpha[steps - 1]
    coef_x0 = np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)
    coef_xt = np.sqrt(alpha) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    return coef_x0, coef_xt


def posterior_mean(x_t: np.ndarray, x0: np.ndarray, t: Steps, sched: ScheduleParams) -> np.ndarray:
    steps = check_steps(t, sched)
    coef_x0, coef_xt = posterior_coefficients(steps, sched)
    if steps.ndim:
        shape = coef_x0.shape + (1,) * (np.ndim(x0) - coef_x0.ndim)
        coef_x0, coef_xt = coef_x0.reshape(shape), coef_xt.reshape(shape)
    mean = coef_x0 * x0 + coef_xt * x_t
    # the last reverse step lands on x0 exactly
    terminal = (steps == 1).reshape(np.shape(coef_x0))
    return np.where(terminal, x0, mean)
