"""Reward plus diffusion-loss penalty.

Two readings of the descent objective ``−α·r + β·‖ε̃(x_t, t) − ε_θ(x_t, c, t)‖``:

* ``direct_grad`` mixes the REINFORCE gradient of the reward with the pathwise
  gradient of the penalty, the way pretraining gradients are mixed into RL updates.
* ``shaped_reward`` folds the detached penalty into a per-trajectory weight
  ``α·(r − b) − β·d`` and applies it to ``Σ_t log p_θ``.

ε̃ is reconstructed from each trajectory's own states; ``dl_source = dataset``
evaluates the penalty on fresh forward-diffused dataset items instead.
"""

from typing import Optional, Sequence

import numpy as np

from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.policy import StepBatch, Trajectory
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.errors import ArgumentError, ConfigError
from dlpo_lab.estimators.base_estimator import (
    Dataset,
    GradEstimate,
    GradientEstimator,
    RLConfig,
    combine,
    rewards_of,
)
from dlpo_lab.estimators.terms import (
    ResidualRows,
    dataset_rows,
    reinforce_term,
    residual_term,
    residual_values,
    trajectory_rows,
)


class DLPOEstimator(GradientEstimator):
    name: str = "dlpo"
    description: str = "α·REINFORCE on the reward plus β·∇‖ε̃ − ε_θ‖ on the sampled states."

    @property
    def reward_weight(self) -> float:
        return self.config.alpha

    def penalty_rows(
        self,
        batch: Sequence[Trajectory],
        sched: ScheduleParams,
        rng: np.random.Generator,
        dataset: Optional[Dataset],
    ) -> ResidualRows:
        if self.config.dl_source == "dataset":
            if self.config.dlpo_mode == "shaped_reward":
                raise ConfigError("shaped_reward needs dl_source = trajectory", key="dl_source")
            if dataset is None:
                raise ArgumentError("dl_source = dataset needs the training dataset")
            return dataset_rows(dataset, len(batch), sched, rng)
        return trajectory_rows(batch, sched, rng, self.config.dlpo_t_sampling)

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
        alpha, beta = self.reward_weight, self.config.beta
        B = len(batch)
        steps = StepBatch.from_trajectories(batch, sched)
        rows = self.penalty_rows(batch, sched, rng, dataset)
        centered = self.center(rewards_of(batch), baseline)
        aux = self.summarize(batch, params, pretrained, sched, steps)

        if self.config.dlpo_mode == "shaped_reward":
            weights = alpha * centered
            if beta != 0:
                penalty = residual_values(params, rows, B, self.config.loss_norm)
                weights = weights - beta * penalty
                aux["mean_penalty"] = float(np.mean(penalty))
            _, grad = reinforce_term(params, steps, sched, weights)
            return GradEstimate(grad=grad, parts={"reinforce": grad}, aux=aux)

        _, reinforce = reinforce_term(params, steps, sched, centered)
        penalty_value, diffusion = residual_term(
            params, rows, np.full(B, 1.0 / B), self.config.loss_norm
        )
        aux["mean_penalty"] = penalty_value
        grad = combine([(alpha, reinforce), (beta, diffusion)], params.layout.size)
        return GradEstimate(grad=grad, parts={"reinforce": reinforce, "diffusion": diffusion}, aux=aux)


def grad_dlpo(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    pretrained: DenoiserParams,
    sched: ScheduleParams,
    config: RLConfig,
    rng: np.random.Generator,
    baseline: Optional[float] = None,
    dataset: Optional[Dataset] = None,
) -> GradEstimate:
    return DLPOEstimator(config=config).estimate(batch, params, pretrained, sched, rng, baseline, dataset)
