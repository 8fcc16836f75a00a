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
    combine,
    rewards_of,
)
from dlpo_lab.estimators.terms import kl_term, reinforce_term


class DPOKEstimator(GradientEstimator):
    name: str = "dpok"
    description: str = (
        "α·REINFORCE plus β·Σ_t KL(p_θ ‖ p_pre) per step, the KL differentiated through the current means."
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
        _, reinforce = reinforce_term(params, steps, sched, self.center(rewards_of(batch), baseline))
        _, kl = kl_term(params, pretrained, steps, sched)
        grad = combine([(self.config.alpha, reinforce), (self.config.beta, kl)], params.layout.size)
        return GradEstimate(
            grad=grad,
            parts={"reinforce": reinforce, "kl": kl},
            aux=self.summarize(batch, params, pretrained, sched, steps),
        )


def grad_dpok(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
    config: RLConfig,
    rng: np.random.Generator,
    baseline: Optional[float] = None,
    dataset: Optional[Dataset] = None,
) -> GradEstimate:
    return DPOKEstimator(config=config).estimate(batch, params, pretrained, sched, rng, baseline, dataset)
