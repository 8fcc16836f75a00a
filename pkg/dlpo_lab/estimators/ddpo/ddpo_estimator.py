from typing import Optional, Sequence

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.policy import StepBatch, Trajectory
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.estimators.base_estimator import (
    Dataset,
    GradEstimate,
    GradientEstimator,
    RLConfig,
    rewards_of,
)
from dlpo_lab.estimators.terms import reinforce_term


class DDPOEstimator(GradientEstimator):
    name: str = "ddpo"
    description: str = (
        "Score-function policy gradient: terminal reward times Σ_t ∇ log p_θ(x_{t−1}|x_t, c)."
    )

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
        steps = StepBatch.from_trajectories(batch, sched)
        _, grad = reinforce_term(params, steps, sched, self.center(rewards_of(batch), baseline))
        return GradEstimate(
            grad=grad,
            parts={"reinforce": grad},
            aux=self.summarize(batch, params, pretrained, sched, steps),
        )


def grad_ddpo(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
    config: RLConfig,
    rng: np.random.Generator,
    baseline: Optional[float] = None,
    dataset: Optional[Dataset] = None,
) -> GradEstimate:
    return DDPOEstimator(config=config).estimate(batch, params, pretrained, sched, rng, baseline, dataset)
