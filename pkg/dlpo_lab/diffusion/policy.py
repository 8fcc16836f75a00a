"""The denoising MDP: rollouts, per-step Gaussian log-densities and KL terms.

A trajectory stores ``states[i] = x_{T-i}``, so ``states[0]`` is the initial
standard-normal draw and ``states[T]`` is the generated waveform ``x_0``. The
transition out of ``states[i]`` is the action at diffusion step ``t = T - i``.
The only reward is the terminal one, held in ``Trajectory.reward``.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from dlpo_lab.diffusion.denoiser import DenoiserParams, mu_from_eps, predict_eps
from dlpo_lab.diffusion.schedule import ScheduleParams
from dlpo_lab.errors import ArgumentError
from dlpo_lab.runtime import chunked_map

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    c: int
    states: np.ndarray
    logp: np.ndarray
    eps_pred: np.ndarray
    reward: Optional[float] = None

    @property
    def T(self) -> int:
        return self.logp.shape[0]

    @property
    def x0(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: int) -> np.ndarray:
        """``x_t`` for t in 0..T."""
        return self.states[self.T - t]


class StepBatch(BaseModel):
    """All transitions of a batch of trajectories, flattened row-wise.

    Row ``b*T + i`` is step ``i`` of trajectory ``b``: it moves from ``x_t`` to
    ``x_prev`` at diffusion step ``t = T - i``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_t: np.ndarray
    x_prev: np.ndarray
    c: np.ndarray
    t: np.ndarray
    sigma2: np.ndarray
    owner: np.ndarray
    size: int

    @classmethod
    def from_trajectories(cls, batch: Sequence[Trajectory], sched: ScheduleParams) -> "StepBatch":
        if not batch:
            raise ArgumentError("empty trajectory batch")
        T = sched.T
        for traj in batch:
            if traj.states.shape[0] != T + 1:
                raise ArgumentError(f"trajectory has {traj.states.shape[0]} states, schedule needs {T + 1}")
        states = np.stack([traj.states for traj in batch])
        steps = np.arange(T, 0, -1)
        return cls(
            x_t=states[:, :-1].reshape(-1, states.shape[-1]),
            x_prev=states[:, 1:].reshape(-1, states.shape[-1]),
            c=np.repeat(np.array([traj.c for traj in batch], dtype=np.int64), T),
            t=np.tile(steps, len(batch)),
            sigma2=np.tile(sched.sigma2[steps - 1], len(batch)),
            owner=np.repeat(np.arange(len(batch)), T),
            size=len(batch),
        )

    def per_trajectory(self, row_values: np.ndarray) -> np.ndarray:
        """Reshape per-row values to ``(trajectories, T)``."""
        return row_values.reshape(self.size, -1)


def logprob_step(mu: np.ndarray, sigma2, x: np.ndarray):
    """Diagonal Gaussian log-density, reduced over the last axis."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ArgumentError(f"variance must be positive, got {sigma2}")
    n = np.shape(x)[-1]
    value = -0.5 * n * np.log(2.0 * np.pi * sigma2) - np.sum((x - mu) ** 2, axis=-1) / (2.0 * sigma2)
    return float(value) if np.ndim(value) == 0 else value


def kl_step(mu_a: np.ndarray, mu_b: np.ndarray, sigma2):
    """KL between equal-variance diagonal Gaussians, reduced over the last axis."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ArgumentError(f"variance must be positive, got {sigma2}")
    value = np.sum((mu_a - mu_b) ** 2, axis=-1) / (2.0 * sigma2)
    return float(value) if np.ndim(value) == 0 else value


def _rollout(
    params: DenoiserParams,
    conditions: np.ndarray,
    noise: np.ndarray,
    sched: ScheduleParams,
) -> list[Trajectory]:
    T = sched.T
    batch = len(conditions)
    x = noise[:, 0]
    states = [x]
    logps, eps_preds = [], []
    for i in range(T):
        t = T - i
        steps = np.full(batch, t)
        eps = predict_eps(params, x, conditions, steps)
        mu = mu_from_eps(x, eps, t, sched)
        sigma2 = sched.sigma2[t - 1]
        x = mu + np.sqrt(sigma2) * noise[:, i + 1]
        logps.append(logprob_step(mu, sigma2, x))
        eps_preds.append(eps)
        states.append(x)

    states_arr = np.stack(states, axis=1)
    logp_arr = np.stack(logps, axis=1)
    eps_arr = np.stack(eps_preds, axis=1)
    return [
        Trajectory(c=int(conditions[b]), states=states_arr[b], logp=logp_arr[b], eps_pred=eps_arr[b])
        for b in range(batch)
    ]


def sample_trajectories(
    params: DenoiserParams,
    conditions: Sequence[int],
    sched: ScheduleParams,
    rngs: Sequence[np.random.Generator],
) -> list[Trajectory]:
    """Ancestral rollouts, one generator per element.

    Each element draws its ``x_T`` and all step noises from its own generator,
    so an element's trajectory does not depend on the rest of the batch.
    """
    if len(conditions) != len(rngs):
        raise ArgumentError("need one generator per condition")
    if params.layout.T != sched.T:
        raise ArgumentError(f"denoiser has {params.layout.T} steps, schedule {sched.T}")
    N = params.layout.N
    items = [
        (int(c), rng.standard_normal((sched.T + 1, N)))
        for c, rng in zip(conditions, rngs)
    ]

    def run(chunk):
        cond = np.array([c for c, _ in chunk], dtype=np.int64)
        noise = np.stack([n for _, n in chunk])
        return _rollout(params, cond, noise, sched)

    return chunked_map(run, items)


def sample_trajectory(
    params: DenoiserParams,
    c: int,
    sched: ScheduleParams,
    rng: np.random.Generator,
) -> Trajectory:
    return sample_trajectories(params, [c], sched, [rng])[0]


def step_means(params: DenoiserParams, steps: StepBatch, sched: ScheduleParams) -> np.ndarray:
    eps = predict_eps(params, steps.x_t, steps.c, steps.t)
    return mu_from_eps(steps.x_t, eps, steps.t, sched)


def batch_logp(params: DenoiserParams, batch: Sequence[Trajectory], sched: ScheduleParams) -> np.ndarray:
    """Recomputed per-step log-densities, shape ``(len(batch), T)``."""
    steps = StepBatch.from_trajectories(batch, sched)
    logp = logprob_step(step_means(params, steps, sched), steps.sigma2, steps.x_prev)
    return steps.per_trajectory(np.atleast_1d(logp))


def batch_logp_diff(
    batch: Sequence[Trajectory],
    params_a: DenoiserParams,
    params_b: DenoiserParams,
    sched: ScheduleParams,
) -> np.ndarray:
    """Σ_t [log p_a − log p_b] on the stored states, one value per trajectory."""
    diff = batch_logp(params_a, batch, sched) - batch_logp(params_b, batch, sched)
    return diff.sum(axis=1)


def traj_logp_diff(
    traj: Trajectory,
    params_a: DenoiserParams,
    params_b: DenoiserParams,
    sched: ScheduleParams,
) -> float:
    return float(batch_logp_diff([traj], params_a, params_b, sched)[0])


def batch_kl(
    params: DenoiserParams,
    pretrained: DenoiserParams,
    steps: StepBatch,
    sched: ScheduleParams,
) -> np.ndarray:
    """Σ_t KL(p_θ ‖ p_pre) on the stored states, one value per trajectory."""
    kl = kl_step(step_means(params, steps, sched), step_means(pretrained, steps, sched), steps.sigma2)
    return steps.per_trajectory(np.atleast_1d(kl)).sum(axis=1)
