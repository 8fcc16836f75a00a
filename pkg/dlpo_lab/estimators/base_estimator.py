import logging
from abc import ABC, abstractmethod
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.loss import LossNorm
from dlpo_lab.diffusion.policy import StepBatch, Trajectory, batch_kl
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.errors import ArgumentError, NumericError, StateError
from dlpo_lab.estimators.terms import residual_values, trajectory_rows

logger = logging.getLogger(__name__)

Algo = Literal["rwr", "ddpo", "dpok", "klinr", "dlpo", "onlydl"]
ALGOS: tuple[str, ...] = ("rwr", "ddpo", "dpok", "klinr", "dlpo", "onlydl")

Dataset = Sequence[tuple[np.ndarray, int]]


class RLConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    algo: Algo = "dlpo"
    alpha: float = Field(1.0, ge=0, allow_inf_nan=False, description="Reward weight")
    beta: float = Field(0.1, ge=0, allow_inf_nan=False, description="Regularizer weight")
    baseline: Literal["none", "moving_average"] = "moving_average"
    baseline_decay: float = Field(0.9, ge=0, lt=1)
    dlpo_mode: Literal["direct_grad", "shaped_reward"] = "direct_grad"
    dlpo_t_sampling: Literal["single_uniform", "all_steps"] = "single_uniform"
    dl_source: Literal["trajectory", "dataset"] = "trajectory"
    batch_size: int = Field(16, ge=1)
    loss_norm: LossNorm = "l2"


class GradEstimate(BaseModel):
    """A descent direction for one fine-tuning round."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grad: np.ndarray
    parts: dict[str, np.ndarray] = {}
    """Unweighted component gradients: reinforce, kl, diffusion, rwr."""
    aux: dict[str, float] = {}
    """Per-round scalars: mean_reward, mean_kl, mean_residual."""

    @model_validator(mode="after")
    def _check_finite(self):
        if not np.all(np.isfinite(self.grad)):
            raise NumericError("gradient estimate is not finite")
        return self


class GradientEstimator(BaseModel, ABC):
    """One fine-tuning objective, mapping scored trajectories to a gradient.

    Subclasses implement :meth:`_estimate`. :meth:`estimate` checks that every
    trajectory carries a reward before delegating.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    """Algorithm key, as used in configs and reports."""
    description: str
    """The objective this estimator differentiates."""
    config: RLConfig = Field(default_factory=RLConfig)
    on_policy: bool = True
    """False when trajectories come from the frozen pretrained model."""

    def estimate(
        self,
        batch: Sequence[Trajectory],
        params: DenoiserParams,
        pretrained: DenoiserParams,
        sched: ScheduleParams,
        rng: np.random.Generator,
        baseline: Optional[float] = None,
        dataset: Optional[Dataset] = None,
    ) -> GradEstimate:
        if not batch:
            raise ArgumentError("empty trajectory batch")
        if any(traj.reward is None for traj in batch):
            raise StateError("every trajectory needs a reward before estimating a gradient")
        if params.layout != pretrained.layout:
            raise ArgumentError("current and pretrained params use different layouts")
        logger.debug("Estimating %s gradient on %d trajectories", self.name, len(batch))
        return self._estimate(batch, params, pretrained, sched, rng, baseline, dataset)

    def center(self, values: np.ndarray, baseline: Optional[float]) -> np.ndarray:
        """Subtract the moving-average baseline when one is configured and known."""
        if baseline is None or self.config.baseline == "none":
            return values
        return values - baseline

    def summarize(
        self,
        batch: Sequence[Trajectory],
        params: DenoiserParams,
        pretrained: DenoiserParams,
        sched: ScheduleParams,
        steps: Optional[StepBatch] = None,
    ) -> dict[str, float]:
        steps = steps if steps is not None else StepBatch.from_trajectories(batch, sched)
        rows = trajectory_rows(batch, sched, t_sampling="all_steps")
        residual = residual_values(params, rows, len(batch), self.config.loss_norm)
        return {
            "mean_reward": float(np.mean(rewards_of(batch))),
            "mean_kl": float(np.mean(batch_kl(params, pretrained, steps, sched))),
            "mean_residual": float(np.mean(residual)),
        }

    @abstractmethod
    def _estimate(
        self,
        batch: Sequence[Trajectory],
        params: DenoiserParams,
        pretrained: DenoiserParams,
        sched: ScheduleParams,
        rng: np.random.Generator,
        baseline: Optional[float],
        dataset: Optional[Dataset],
    ) -> GradEstimate:
        """Here goes the objective-specific estimate."""


def rewards_of(batch: Sequence[Trajectory]) -> np.ndarray:
    return np.array([traj.reward for traj in batch], dtype=np.float64)


def combine(terms: Sequence[tuple[float, np.ndarray]], size: int) -> np.ndarray:
    """``Σ weight·grad`` over the terms whose weight is non-zero."""
    total: Optional[np.ndarray] = None
    for weight, grad in terms:
        if weight == 0:
            continue
        scaled = weight * grad
        total = scaled if total is None else total + scaled
    return np.zeros(size) if total is None else total
