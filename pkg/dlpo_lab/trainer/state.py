from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.errors import ArgumentError


class TrainState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: DenoiserParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0
    reward_baseline: Optional[float] = None
    """Moving average of batch rewards; unset until the first fine-tuning round."""
    rng_seed: int = 0
    topk: list[tuple[float, str]] = Field(default_factory=list)
    """``(validation score, checkpoint path)``, best first."""

    @model_validator(mode="after")
    def _check_state(self):
        size = self.params.layout.size
        if self.adam_m.shape != (size,) or self.adam_v.shape != (size,):
            raise ArgumentError("Adam moments must match the parameter count")
        scores = [score for score, _ in self.topk]
        if scores != sorted(scores, reverse=True):
            raise ArgumentError("top-k checkpoints must be sorted best first")
        return self

    @classmethod
    def fresh(cls, params: DenoiserParams, seed: int = 0) -> "TrainState":
        size = params.layout.size
        return cls(params=params, adam_m=np.zeros(size), adam_v=np.zeros(size), rng_seed=seed)


def adam_update(
    state: TrainState,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """One bias-corrected Adam step; returns a new state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.adam_m.shape:
        raise ArgumentError(f"gradient has shape {grad.shape}, params need {state.adam_m.shape}")
    if not lr > 0:
        raise ArgumentError(f"learning rate must be positive, got {lr}")

    step = state.step + 1
    m = beta1 * state.adam_m + (1.0 - beta1) * grad
    v = beta2 * state.adam_v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    theta = state.params.theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state.model_copy(
        update={"params": state.params.with_theta(theta), "adam_m": m, "adam_v": v, "step": step}
    )
