from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pytest

from dlpo_lab.config import Experiment, parse_config_text
from dlpo_lab.diffusion.denoiser import DenoiserLayout, DenoiserParams
from dlpo_lab.diffusion.policy import Trajectory, sample_trajectories
from dlpo_lab.diffusion.schedule import ScheduleParams, make_schedule
from dlpo_lab.engine.autograd import Tape, Var
from dlpo_lab.runtime import spawn_rngs

TINY_CONFIG = """
T = 3
n_samples = 16
n_classes = 2
d_c = 2
d_t = 2
h1 = 8
h2 = 8
dataset_size = 32
pretrain_epochs = 1
pretrain_batch_size = 8
finetune_steps = 2
batch_size = 4
val_per_class = 2
val_every = 1
topk = 2
rwr_pool_size = 8
eval_per_condition = 2
compare_seeds = 1
"""


class AffineNoiseLayout(DenoiserLayout):
    """ε_θ(x, c, t) = θ₀ + θ₁·x: a two-parameter network with a closed-form policy."""

    N: int = 1
    K: int = 1
    T: int = 2

    @cached_property
    def blocks(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        return {"bias": (0, (1,)), "gain": (1, (1,))}

    @property
    def size(self) -> int:
        return 2

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(2)

    def predict(self, theta, x_t, c, t) -> np.ndarray:
        return theta[0] + theta[1] * np.asarray(x_t)

    def build(self, tape: Tape, x_t, c, t) -> Var:
        return tape.add(tape.param(0, (1,)), tape.mul(tape.param(1, (1,)), x_t))


class ImpliedNoiseLayout(DenoiserLayout):
    """ε_θ = (1 + θ₀)·x_t/√(1 − ᾱ_t): the exact implied noise of x₀ = 0 when θ₀ = 0."""

    scale: tuple[float, ...] = ()

    @cached_property
    def blocks(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        return {"gain": (0, (1,))}

    @property
    def size(self) -> int:
        return 1

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(1)

    def _scale(self, x_t, t) -> np.ndarray:
        s = np.asarray(self.scale)[np.asarray(t) - 1]
        return s if np.ndim(s) == 0 else s.reshape(-1, 1)

    def predict(self, theta, x_t, c, t) -> np.ndarray:
        return (1.0 + theta[0]) * np.asarray(x_t) * self._scale(x_t, t)

    def build(self, tape: Tape, x_t, c, t) -> Var:
        return tape.mul(tape.add(tape.param(0, (1,)), 1.0), x_t * self._scale(x_t, t))


class Helpers:
    AffineNoiseLayout = AffineNoiseLayout
    ImpliedNoiseLayout = ImpliedNoiseLayout

    @staticmethod
    def tiny_layout(**overrides) -> DenoiserLayout:
        dims = dict(N=8, K=2, T=3, d_c=2, d_t=2, h1=6, h2=5)
        dims.update(overrides)
        return DenoiserLayout(**dims)

    @staticmethod
    def tiny_schedule(T: int = 3) -> ScheduleParams:
        return make_schedule(T, 0.05, 0.3)

    @staticmethod
    def tiny_params(seed: int = 0, **overrides) -> DenoiserParams:
        return DenoiserParams.initialize(Helpers.tiny_layout(**overrides), seed)

    @staticmethod
    def perturbed(params: DenoiserParams, scale: float = 0.05, seed: int = 1) -> DenoiserParams:
        rng = np.random.default_rng(seed)
        return params.with_theta(params.theta + scale * rng.standard_normal(params.theta.size))

    @staticmethod
    def scored_batch(
        params: DenoiserParams,
        sched: ScheduleParams,
        size: int = 4,
        seed: int = 0,
        rewards: Optional[Sequence[float]] = None,
    ) -> list[Trajectory]:
        """Rollouts with rewards attached (default: a fixed spread of values)."""
        conditions = [b % params.layout.K for b in range(size)]
        batch = sample_trajectories(params, conditions, sched, spawn_rngs(seed, size, 99))
        if rewards is None:
            rewards = np.linspace(1.5, 4.5, size)
        return [traj.model_copy(update={"reward": float(r)}) for traj, r in zip(batch, rewards)]

    @staticmethod
    def tiny_experiment(extra: str = "", **overrides) -> Experiment:
        return Experiment.from_config(parse_config_text(TINY_CONFIG + extra, overrides))

    @staticmethod
    def write_config(directory: Path, extra: str = "") -> Path:
        path = directory / "tiny.cfg"
        path.write_text(TINY_CONFIG + extra, encoding="utf-8")
        return path

    @staticmethod
    def top_indices(grad: np.ndarray, count: int = 20) -> list[int]:
        """Coordinates with the largest gradient magnitude, for finite-difference checks."""
        return [int(i) for i in np.argsort(-np.abs(grad))[:count]]


@pytest.fixture
def helpers():
    return Helpers
