from typing import Optional, Sequence

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.policy import Trajectory
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.estimators.base_estimator import Dataset, GradEstimate, RLConfig
from dlpo_lab.estimators.dlpo.dlpo_estimator import DLPOEstimator


class OnlyDLEstimator(DLPOEstimator):
    """The DLPO objective with the reward term switched off (α = 0)."""

    name: str = "onlydl"
    description: str = "Diffusion-loss penalty alone, used as the only fine-tuning signal."

    @property
    def reward_weight(self) -> float:
        return 0.0


def grad_onlydl(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
    config: RLConfig,
    rng: np.random.Generator,
    baseline: Optional[float] = None,
    dataset: Optional[Dataset] = None,
) -> GradEstimate:
    return OnlyDLEstimator(config=config).estimate(batch, params, pretrained, sched, rng, baseline, dataset)
