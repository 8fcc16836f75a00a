"""Conditional ε-prediction network and the reverse-step mean built from it.

The network is a two-hidden-layer tanh MLP over the concatenation of the noisy
waveform, a condition embedding and a step embedding, plus a per-step gain on
the noisy input (``skip``) added to the MLP output. All weights live in one flat
vector ``theta``; :class:`DenoiserLayout` documents the offsets. The first layer's
weight matrix over ``[x_t | emb(c) | emb(t)]`` is stored as three column blocks
(``w1_x``, ``w1_c``, ``w1_t``), which is the same linear map as one concatenated
matrix.

A layout subclass may override :meth:`DenoiserLayout.predict` and
:meth:`DenoiserLayout.build` to swap the network while keeping the flat-vector
contract.
"""

from functools import cached_property
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dlpo_lab.diffusion.schedule import ScheduleParams, Steps, at_step, check_steps
from dlpo_lab.engine.autograd import Tape, Var
from dlpo_lab.errors import ArgumentError

Conditions = Union[int, np.ndarray]


class DenoiserLayout(BaseModel):
    model_config = ConfigDict(frozen=True)

    N: int = Field(128, ge=1, description="Samples per waveform")
    K: int = Field(8, ge=1, description="Condition classes")
    T: int = Field(10, ge=1, description="Diffusion steps")
    d_c: int = Field(16, ge=1, description="Condition embedding width")
    d_t: int = Field(16, ge=1, description="Step embedding width")
    h1: int = Field(256, ge=1, description="First hidden layer width")
    h2: int = Field(256, ge=1, description="Second hidden layer width")

    @cached_property
    def blocks(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        """``name -> (offset, shape)`` in storage order."""
        shapes = {
            "cond_emb": (self.K, self.d_c),
            "time_emb": (self.T, self.d_t),
            "w1_x": (self.h1, self.N),
            "w1_c": (self.h1, self.d_c),
            "w1_t": (self.h1, self.d_t),
            "b1": (self.h1,),
            "w2": (self.h2, self.h1),
            "b2": (self.h2,),
            "w3": (self.N, self.h2),
            "b3": (self.N,),
            "skip": (self.T, 1),
        }
        blocks, offset = {}, 0
        for name, shape in shapes.items():
            blocks[name] = (offset, shape)
            offset += int(np.prod(shape))
        return blocks

    @property
    def size(self) -> int:
        offset, shape = self.blocks["skip"]
        return offset + int(np.prod(shape))

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        return {
            name: theta[offset : offset + int(np.prod(shape))].reshape(shape)
            for name, (offset, shape) in self.blocks.items()
        }

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Embeddings ~ 0.1·N(0, 1); layers ~ U(±1/√fan_in); skip gains start at 0."""
        theta = np.empty(self.size)
        first = self.N + self.d_c + self.d_t
        fan_in = {
            "w1_x": first,
            "w1_c": first,
            "w1_t": first,
            "b1": first,
            "w2": self.h1,
            "b2": self.h1,
            "w3": self.h2,
            "b3": self.h2,
        }
        for name, block in self.unpack(theta).items():
            if name == "skip":
                block[...] = 0.0
            elif name in fan_in:
                bound = 1.0 / np.sqrt(fan_in[name])
                block[...] = rng.uniform(-bound, bound, size=block.shape)
            else:
                block[...] = 0.1 * rng.standard_normal(block.shape)
        return theta

    def predict(self, theta: np.ndarray, x_t: np.ndarray, c: Conditions, t: Steps) -> np.ndarray:
        w = self.unpack(theta)
        emb_c = w["cond_emb"][np.asarray(c)]
        emb_t = w["time_emb"][np.asarray(t) - 1]
        pre = x_t @ w["w1_x"].T + emb_c @ w["w1_c"].T
        pre = pre + emb_t @ w["w1_t"].T
        hidden = np.tanh(pre + w["b1"])
        hidden = np.tanh(hidden @ w["w2"].T + w["b2"])
        return hidden @ w["w3"].T + w["b3"] + w["skip"][np.asarray(t) - 1] * x_t

    def build(self, tape: Tape, x_t: np.ndarray, c: np.ndarray, t: np.ndarray) -> Var:
        """Record the same computation as :meth:`predict` for row-stacked inputs."""

        def param(name: str, rows=None) -> Var:
            offset, shape = self.blocks[name]
            return tape.param(offset, shape, rows=rows)

        emb_c = param("cond_emb", rows=c)
        emb_t = param("time_emb", rows=t - 1)
        pre = tape.matvec(param("w1_x"), x_t) + tape.matvec(param("w1_c"), emb_c)
        pre = pre + tape.matvec(param("w1_t"), emb_t)
        hidden = tape.tanh(pre + param("b1"))
        hidden = tape.tanh(tape.matvec(param("w2"), hidden) + param("b2"))
        out = tape.matvec(param("w3"), hidden) + param("b3")
        return out + tape.mul(param("skip", rows=t - 1), x_t)


class DenoiserParams(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    layout: DenoiserLayout
    theta: np.ndarray

    @model_validator(mode="after")
    def _check_theta(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.layout.size,):
            raise ArgumentError(
                f"theta has shape {self.theta.shape}, layout needs ({self.layout.size},)"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ArgumentError("theta has non-finite entries")
        return self

    @classmethod
    def initialize(cls, layout: DenoiserLayout, seed: int) -> "DenoiserParams":
        return cls(layout=layout, theta=layout.init(np.random.default_rng(seed)))

    def with_theta(self, theta: np.ndarray) -> "DenoiserParams":
        return DenoiserParams(layout=self.layout, theta=theta)

    def copy(self) -> "DenoiserParams":
        return self.with_theta(self.theta.copy())


def _check_inputs(layout: DenoiserLayout, x_t: np.ndarray, c: Conditions, t: Steps) -> None:
    if np.ndim(x_t) not in (1, 2) or np.shape(x_t)[-1] != layout.N:
        raise ArgumentError(f"x_t must end in length {layout.N}, got shape {np.shape(x_t)}")
    conditions = np.asarray(c)
    if not np.issubdtype(conditions.dtype, np.integer):
        raise ArgumentError("conditions must be integer class indices")
    if np.any(conditions < 0) or np.any(conditions >= layout.K):
        raise ArgumentError(f"condition out of range [0, {layout.K}): {c}")
    steps = np.asarray(t)
    if not np.issubdtype(steps.dtype, np.integer):
        raise ArgumentError("diffusion steps must be integers")
    if np.any(steps < 1) or np.any(steps > layout.T):
        raise ArgumentError(f"diffusion step out of range [1, {layout.T}]: {t}")
    if np.ndim(x_t) == 1 and (conditions.ndim or steps.ndim):
        raise ArgumentError("a single waveform takes a single condition and step")


def predict_eps(params: DenoiserParams, x_t: np.ndarray, c: Conditions, t: Steps) -> np.ndarray:
    """ε_θ(x_t, c, t) for one waveform or a stack of rows."""
    _check_inputs(params.layout, x_t, c, t)
    return params.layout.predict(params.theta, x_t, c, t)


def build_eps(tape: Tape, layout: DenoiserLayout, x_t: np.ndarray, c: Conditions, t: Steps) -> Var:
    """Record ε_θ on ``tape`` for row-stacked inputs."""
    if np.ndim(x_t) != 2:
        raise ArgumentError("tape builds take row-stacked waveforms")
    rows = np.shape(x_t)[0]
    c = np.broadcast_to(np.asarray(c), (rows,))
    t = np.broadcast_to(np.asarray(t), (rows,))
    _check_inputs(layout, x_t, c, t)
    return layout.build(tape, x_t, c, t)


def mean_coefficients(t: Steps, sched: ScheduleParams, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(1/√α_t, β_t/√(1−ᾱ_t))`` shaped to broadcast against ``like``."""
    check_steps(t, sched)
    inv_sqrt_alpha = at_step(1.0 / np.sqrt(sched.alpha), t, like)
    noise_coef = at_step(sched.beta / np.sqrt(1.0 - sched.alpha_bar), t, like)
    return inv_sqrt_alpha, noise_coef


def mu_from_eps(x_t: np.ndarray, eps_hat: np.ndarray, t: Steps, sched: ScheduleParams) -> np.ndarray:
    inv_sqrt_alpha, noise_coef = mean_coefficients(t, sched, x_t)
    return (x_t - noise_coef * eps_hat) * inv_sqrt_alpha
