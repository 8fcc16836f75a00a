"""Pretraining, fine-tuning and evaluation loops.

Every random draw comes from a generator derived from ``(seed, Stream, ...)``, so a
run is reproducible bit for bit from its config and seed.
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from dlpo_lab.config import Experiment
from dlpo_lab.diffusion.denoiser import DenoiserParams
from dlpo_lab.diffusion.loss import ddpm_loss
from dlpo_lab.diffusion.policy import StepBatch, Trajectory, batch_kl, sample_trajectories
from dlpo_lab.errors import ArgumentError
from dlpo_lab.estimators import get_estimator
from dlpo_lab.estimators.terms import residual_values, trajectory_rows
from dlpo_lab.rewards import clean_waveform, recovery_error
from dlpo_lab.runtime import Stream, spawn_rngs
from dlpo_lab.trainer.checkpoint import remove_checkpoint, save_checkpoint
from dlpo_lab.trainer.metrics import MetricsRow
from dlpo_lab.trainer.state import TrainState, adam_update

logger = logging.getLogger(__name__)

Dataset = Sequence[tuple[np.ndarray, int]]


def _progress(total: int, desc: str, enabled: Optional[bool]) -> tqdm:
    disable = not sys.stderr.isatty() if enabled is None else not enabled
    return tqdm(total=total, desc=desc, disable=disable, leave=False)


def rollout(
    params: DenoiserParams,
    experiment: Experiment,
    conditions: Sequence[int],
    seed: int,
    *stream: int,
) -> list[Trajectory]:
    """Sample and score one trajectory per condition with the training reward."""
    rngs = spawn_rngs(seed, len(conditions), *stream)
    batch = sample_trajectories(params, conditions, experiment.sched, rngs)
    scores = experiment.reward.score_batch([traj.x0 for traj in batch], [traj.c for traj in batch])
    return [traj.model_copy(update={"reward": float(score)}) for traj, score in zip(batch, scores)]


def batch_metrics(
    batch: Sequence[Trajectory],
    params: DenoiserParams,
    experiment: Experiment,
    step: int,
    algo: str,
    seed: int,
    reference: Optional[DenoiserParams] = None,
) -> MetricsRow:
    """Reward, held-out score, recovery error, mean residual and KL of scored trajectories."""
    waveforms = np.stack([traj.x0 for traj in batch])
    conditions = np.array([traj.c for traj in batch])
    rows = trajectory_rows(batch, experiment.sched, t_sampling="all_steps")
    residual = residual_values(params, rows, len(batch), experiment.config.loss_norm)
    kl = 0.0
    if reference is not None:
        steps = StepBatch.from_trajectories(batch, experiment.sched)
        kl = float(np.mean(batch_kl(params, reference, steps, experiment.sched)))
    return MetricsRow(
        step=step,
        reward_mos=float(np.mean([traj.reward for traj in batch])),
        heldout=float(np.mean(experiment.heldout.score_batch(list(waveforms), list(conditions)))),
        recovery_err=recovery_error(waveforms, conditions, experiment.spec),
        diff_loss=float(np.mean(residual)),
        kl=kl,
        algo=algo,
        seed=seed,
    )


def evaluate(
    params: DenoiserParams,
    experiment: Experiment,
    conditions: Optional[Sequence[int]] = None,
    n_per_condition: Optional[int] = None,
    seed: Optional[int] = None,
    algo: str = "pretrained",
    step: int = 0,
    reference: Optional[DenoiserParams] = None,
) -> MetricsRow:
    """Metrics over ``n_per_condition`` test rollouts for each condition.

    Defaults to every class, ``eval_per_condition`` rollouts and the run seed. The
    test rollouts use their own random stream, disjoint from validation.
    """
    conditions = list(range(experiment.spec.K)) if conditions is None else list(conditions)
    n = experiment.config.eval_per_condition if n_per_condition is None else n_per_condition
    seed = experiment.config.seed if seed is None else seed
    if n < 1:
        raise ArgumentError(f"need at least one rollout per condition, got {n}")
    if not conditions:
        raise ArgumentError("evaluation needs at least one condition")
    eval_set = [c for c in conditions for _ in range(n)]
    batch = rollout(params, experiment, eval_set, seed, Stream.TEST)
    return batch_metrics(batch, params, experiment, step, algo, seed, reference)


def ground_truth_metrics(experiment: Experiment, seed: Optional[int] = None) -> MetricsRow:
    """Training and held-out metrics of clean dataset waveforms, a reference ceiling."""
    seed = experiment.config.seed if seed is None else seed
    n = experiment.config.eval_per_condition
    rng = np.random.default_rng([seed, Stream.TEST, 1])
    waveforms, conditions = [], []
    for c in range(experiment.spec.K):
        for _ in range(n):
            x0 = clean_waveform(experiment.spec, c, rng.uniform(0.0, 2.0 * np.pi))
            noise = experiment.config.observation_noise
            if noise > 0:
                x0 = x0 + rng.normal(0.0, noise, size=experiment.spec.N)
            waveforms.append(x0)
            conditions.append(c)
    return MetricsRow(
        step=0,
        reward_mos=float(np.mean(experiment.reward.score_batch(waveforms, conditions))),
        heldout=float(np.mean(experiment.heldout.score_batch(waveforms, conditions))),
        recovery_err=recovery_error(np.stack(waveforms), np.array(conditions), experiment.spec),
        diff_loss=None,
        kl=None,
        algo="ground_truth",
        seed=seed,
    )


def pretrain(
    experiment: Experiment,
    dataset: Dataset,
    state: Optional[TrainState] = None,
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
    progress: Optional[bool] = None,
) -> tuple[TrainState, list[MetricsRow]]:
    """Minibatch Adam on the DDPM loss; one metrics row per epoch (mean loss)."""
    config = experiment.config
    seed = config.seed if seed is None else seed
    epochs = config.pretrain_epochs if epochs is None else epochs
    if not dataset:
        raise ArgumentError("pretraining needs a non-empty dataset")
    if state is None:
        state = TrainState.fresh(experiment.initial_params(seed), seed)
    rng = np.random.default_rng([seed, Stream.PRETRAIN])
    size = config.pretrain_batch_size

    rows: list[MetricsRow] = []
    with _progress(epochs, "pretrain", progress) as bar:
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(dataset))
            losses = []
            for start in range(0, len(order), size):
                minibatch = [dataset[i] for i in order[start : start + size]]
                loss, grad = ddpm_loss(state.params, minibatch, rng, experiment.sched, config.loss_norm)
                state = adam_update(
                    state, grad, config.pretrain_lr, config.adam_beta1, config.adam_beta2, config.adam_eps
                )
                losses.append(loss)
            mean_loss = float(np.mean(losses))
            logger.debug("epoch %d: ddpm loss %.6f", epoch, mean_loss)
            rows.append(MetricsRow(step=epoch, diff_loss=mean_loss, algo="pretrain", seed=seed))
            bar.set_postfix(loss=f"{mean_loss:.4f}")
            bar.update(1)
    return state, rows


def validation_score(params: DenoiserParams, experiment: Experiment, seed: int) -> float:
    """Mean training reward on the fixed validation set (every class × ``val_per_class``)."""
    conditions = [c for c in range(experiment.spec.K) for _ in range(experiment.config.val_per_class)]
    batch = rollout(params, experiment, conditions, seed, Stream.VALIDATION)
    return float(np.mean([traj.reward for traj in batch]))


def record_topk(
    state: TrainState,
    score: float,
    ckpt_dir: Path,
    k: int,
    meta: dict,
) -> TrainState:
    """Keep the ``k`` best validation checkpoints; a tie does not replace the worst."""
    if len(state.topk) >= k and score <= state.topk[-1][0]:
        return state
    path = save_checkpoint(
        ckpt_dir / f"step_{state.step:05d}.ckpt", state.params, {**meta, "step": state.step, "score": score}
    )
    entries = sorted([*state.topk, (score, str(path))], key=lambda entry: -entry[0])
    for _, evicted in entries[k:]:
        remove_checkpoint(evicted)
        logger.info("Evicted checkpoint %s", evicted)
    logger.info("Saved checkpoint %s (validation reward %.4f)", path, score)
    return state.model_copy(update={"topk": entries[:k]})


def rwr_pool(pretrained: DenoiserParams, experiment: Experiment, seed: int) -> list[Trajectory]:
    """Static scored samples from the pretrained model, drawn once per run."""
    size = experiment.config.rwr_pool_size
    conditions = np.random.default_rng([seed, Stream.POOL]).integers(experiment.spec.K, size=size)
    return rollout(pretrained, experiment, [int(c) for c in conditions], seed, Stream.POOL, 1)


def finetune(
    experiment: Experiment,
    state: TrainState,
    pretrained: DenoiserParams,
    ckpt_dir: Path,
    steps: Optional[int] = None,
    seed: Optional[int] = None,
    dataset: Optional[Dataset] = None,
    progress: Optional[bool] = None,
) -> tuple[TrainState, list[MetricsRow]]:
    """RL fine-tuning with the configured objective, one Adam step per sampling round.

    Each round yields one metrics row measured on the round's trajectories before
    the update (for RWR, on a separate batch from the current model). Validation
    runs before the first round and then every ``val_every`` rounds and after the
    last one, feeding the top-k checkpoint list.
    """
    config = experiment.config
    rl = experiment.rl
    seed = config.seed if seed is None else seed
    steps = config.finetune_steps if steps is None else steps
    estimator = get_estimator(rl.algo, rl)
    ckpt_dir = Path(ckpt_dir)
    meta = {"algo": rl.algo, "seed": seed, "config_sha256": config.sha256()}
    B = rl.batch_size
    K = experiment.spec.K

    if steps > 0:
        state = record_topk(state, validation_score(state.params, experiment, seed), ckpt_dir, config.topk, meta)
    pool = rwr_pool(pretrained, experiment, seed) if not estimator.on_policy else None

    rows: list[MetricsRow] = []
    with _progress(steps, f"finetune {rl.algo}", progress) as bar:
        for round_ in range(1, steps + 1):
            if pool is not None:
                picks = np.random.default_rng([seed, Stream.POOL_DRAW, round_]).choice(
                    len(pool), size=B, replace=False
                )
                batch = [pool[i] for i in picks]
                monitor_conditions = np.random.default_rng([seed, Stream.MONITOR, round_]).integers(K, size=B)
                monitor = rollout(
                    state.params, experiment, [int(c) for c in monitor_conditions], seed, Stream.MONITOR, round_
                )
            else:
                conditions = np.random.default_rng([seed, Stream.CONDITIONS, round_]).integers(K, size=B)
                batch = rollout(state.params, experiment, [int(c) for c in conditions], seed, Stream.ROLLOUT, round_)
                monitor = batch

            baseline = state.reward_baseline if rl.baseline == "moving_average" else None
            estimate = estimator.estimate(
                batch,
                state.params,
                pretrained,
                experiment.sched,
                np.random.default_rng([seed, Stream.ESTIMATOR, round_]),
                baseline,
                dataset,
            )
            row = batch_metrics(monitor, state.params, experiment, round_, rl.algo, seed, pretrained)
            rows.append(row)

            state = adam_update(
                state, estimate.grad, config.finetune_lr, config.adam_beta1, config.adam_beta2, config.adam_eps
            )
            mean_reward = estimate.aux["mean_reward"]
            if state.reward_baseline is None:
                new_baseline = mean_reward
            else:
                new_baseline = rl.baseline_decay * state.reward_baseline + (1.0 - rl.baseline_decay) * mean_reward
            state = state.model_copy(update={"reward_baseline": new_baseline})
            logger.debug(
                "round %d: reward %.4f heldout %.4f kl %.5f", round_, row.reward_mos, row.heldout, row.kl
            )

            if round_ % config.val_every == 0 or round_ == steps:
                score = validation_score(state.params, experiment, seed)
                state = record_topk(state, score, ckpt_dir, config.topk, meta)
            bar.set_postfix(reward=f"{row.reward_mos:.3f}")
            bar.update(1)

    if not state.topk:
        logger.warning("No checkpoint reached the top-%d list", config.topk)
    return state, rows
