from typing import Optional, Sequence

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.policy import StepBatch, Trajectory, batch_logp_diff
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.estimators.base_estimator import (
    Dataset,
    GradEstimate,
    GradientEstimator,
    RLConfig,
    rewards_of,
)
from dlpo_lab.estimators.terms import reinforce_term


def shaped_rewards(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
) -> np.ndarray:
    """``r − Σ_t [log p_θ − log p_pre]`` per trajectory, detached from θ."""
    return rewards_of(batch) - batch_logp_diff(batch, params, pretrained, sched)


class KLinREstimator(GradientEstimator):
    name: str = "klinr"
    description: str = (
        "REINFORCE on the reward minus the trajectory log-density ratio to the pretrained model."
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
        shaped = shaped_rewards(batch, params, pretrained, sched)
        _, grad = reinforce_term(params, steps, sched, self.center(shaped, baseline))
        aux = self.summarize(batch, params, pretrained, sched, steps)
        aux["mean_shaped_reward"] = float(np.mean(shaped))
        return GradEstimate(grad=grad, parts={"reinforce": grad}, aux=aux)


def grad_klinr(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
    config: RLConfig,
    rng: np.random.Generator,
    baseline: Optional[float] = None,
    dataset: Optional[Dataset] = None,
) -> GradEstimate:
    return KLinREstimator(config=config).estimate(batch, params, pretrained, sched, rng, baseline, dataset)
