from typing import Optional, Sequence

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.policy import Trajectory
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.estimators.base_estimator import (
    Dataset,
    GradEstimate,
    GradientEstimator,
    RLConfig,
    rewards_of,
)
from dlpo_lab.estimators.terms import residual_term, trajectory_rows


class RWREstimator(GradientEstimator):
    """Reward-weighted regression on samples from the frozen pretrained model.

    ``log p_θ(x_0|c)`` is replaced by its variational surrogate, the negative
    noise-prediction residual at one uniformly drawn step, so the descent
    objective is ``(1/B)·Σ r·‖ε̃ − ε_θ(x_t, c, t)‖``.
    """

    name: str = "rwr"
    description: str = "Reward-weighted diffusion loss on a static pool of pretrained samples."
    on_policy: bool = False

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
        rows = trajectory_rows(batch, sched, rng, "single_uniform")
        weights = self.center(rewards_of(batch), baseline) / len(batch)
        _, grad = residual_term(params, rows, weights, self.config.loss_norm)
        return GradEstimate(
            grad=grad,
            parts={"rwr": grad},
            aux=self.summarize(batch, params, pretrained, sched),
        )


def grad_rwr(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
    config: RLConfig,
    rng: np.random.Generator,
    baseline: Optional[float] = None,
    dataset: Optional[Dataset] = None,
) -> GradEstimate:
    return RWREstimator(config=config).estimate(batch, params, pretrained, sched, rng, baseline, dataset)
