"""Run configuration: one pydantic model, a ``key = value`` file format and the
objects derived from it.

Example file::

    # desk-scale DLPO run
    T = 10
    algo = dlpo
    beta = 0.1
    mos_weights = 0.6, 0.2, 0.2
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dlpo_lab.diffusion.denoiser import DenoiserLayout, DenoiserParams
from dlpo_lab.diffusion.loss import LossNorm
from dlpo_lab.diffusion.schedule import ScheduleParams, make_schedule
from dlpo_lab.errors import ConfigError
from dlpo_lab.estimators.base_estimator import Algo, RLConfig
from dlpo_lab.rewards import ConditionSpec, HeldoutProxyReward, MosProxyReward, make_dataset
from dlpo_lab.runtime import Stream

logger = logging.getLogger(__name__)

_LIST_FIELDS = ("frequencies", "mos_weights", "heldout_weights")


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # schedule
    T: int = Field(10, ge=1, description="Diffusion steps")
    beta_start: float = Field(0.001, gt=0, lt=1, description="First noise variance")
    beta_end: float = Field(0.6, gt=0, lt=1, description="Last noise variance")
    sigma2_min: float = Field(1e-6, gt=0, description="Floor on reverse-step variances")
    loss_norm: LossNorm = Field("l2", description="Residual norm: l2 or l2sq")
    # data and network
    n_samples: int = Field(128, ge=4, description="Samples per waveform (N)")
    n_classes: int = Field(8, ge=1, description="Condition classes (K)")
    d_c: int = Field(16, ge=1, description="Condition embedding width")
    d_t: int = Field(16, ge=1, description="Step embedding width")
    h1: int = Field(256, ge=1, description="First hidden layer width")
    h2: int = Field(256, ge=1, description="Second hidden layer width")
    frequencies: tuple[float, ...] = Field((), description="Cycles per window per class (default 2..K+1)")
    amplitude: float = Field(1.0, gt=0, description="Sine amplitude")
    observation_noise: float = Field(0.01, ge=0, description="Dataset noise std")
    mos_weights: tuple[float, ...] = Field((0.6, 0.2, 0.2), description="Training reward feature weights")
    heldout_weights: tuple[float, ...] = Field((0.7, 0.3), description="Held-out metric feature weights")
    # fine-tuning objective
    algo: Algo = Field("dlpo", description="rwr, ddpo, dpok, klinr, dlpo or onlydl")
    alpha: float = Field(1.0, ge=0, allow_inf_nan=False, description="Reward weight")
    beta: float = Field(0.1, ge=0, allow_inf_nan=False, description="Regularizer weight")
    baseline: Literal["none", "moving_average"] = Field("moving_average", description="Reward baseline")
    baseline_decay: float = Field(0.9, ge=0, lt=1, description="Moving-average decay")
    dlpo_mode: Literal["direct_grad", "shaped_reward"] = Field("direct_grad", description="DLPO penalty reading")
    dlpo_t_sampling: Literal["single_uniform", "all_steps"] = Field(
        "single_uniform", description="Steps used by the diffusion penalty"
    )
    dl_source: Literal["trajectory", "dataset"] = Field("trajectory", description="States for the diffusion penalty")
    batch_size: int = Field(16, ge=1, description="Trajectories per fine-tuning round")
    # loops
    dataset_size: int = Field(2000, ge=1, description="Training waveforms")
    pretrain_epochs: int = Field(200, ge=0, description="Pretraining epochs")
    pretrain_batch_size: int = Field(32, ge=1, description="Pretraining minibatch")
    pretrain_lr: float = Field(1e-3, gt=0, description="Pretraining learning rate")
    finetune_steps: int = Field(300, ge=0, description="Fine-tuning rounds")
    finetune_lr: float = Field(5e-4, gt=0, description="Fine-tuning learning rate")
    adam_beta1: float = Field(0.9, ge=0, lt=1, description="Adam first-moment decay")
    adam_beta2: float = Field(0.999, ge=0, lt=1, description="Adam second-moment decay")
    adam_eps: float = Field(1e-8, gt=0, description="Adam denominator epsilon")
    topk: int = Field(3, ge=1, description="Checkpoints kept by validation reward")
    val_per_class: int = Field(8, ge=1, description="Validation rollouts per class")
    val_every: int = Field(10, ge=1, description="Rounds between validations")
    rwr_pool_size: int = Field(1024, ge=1, description="Static pretrained samples for RWR")
    eval_per_condition: int = Field(25, ge=1, description="Test rollouts per class")
    compare_seeds: int = Field(3, ge=1, description="Seeds per algorithm in compare")
    compare_ground_truth: bool = Field(False, description="Add a ground_truth row to the comparison table")
    seed: int = Field(0, ge=0, description="Run seed")

    @field_validator(*_LIST_FIELDS, mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(part.strip() for part in value.split(",") if part.strip())
        return value

    @field_validator("mos_weights", "heldout_weights")
    @classmethod
    def _non_negative(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(w < 0 or not np.isfinite(w) for w in value):
            raise ValueError("weights must be finite and non-negative")
        return value

    @model_validator(mode="after")
    def _check_cross_fields(self):
        if not self.beta_start <= self.beta_end:
            raise ConfigError("beta_start must not exceed beta_end", key="beta_start")
        if len(self.mos_weights) != 3:
            raise ConfigError("mos_weights takes 3 values", key="mos_weights")
        if len(self.heldout_weights) != 2:
            raise ConfigError("heldout_weights takes 2 values", key="heldout_weights")
        if self.dlpo_mode == "shaped_reward" and self.dl_source == "dataset":
            raise ConfigError("shaped_reward needs dl_source = trajectory", key="dl_source")
        if self.batch_size > self.rwr_pool_size:
            raise ConfigError("batch_size exceeds rwr_pool_size", key="batch_size")
        self.condition_spec()
        return self

    def condition_spec(self) -> ConditionSpec:
        try:
            return ConditionSpec(
                K=self.n_classes, N=self.n_samples, freq=self.frequencies, amplitude=self.amplitude
            )
        except ValidationError as exc:
            raise _from_validation(exc, {}) from None

    def rl_config(self) -> RLConfig:
        return RLConfig(
            algo=self.algo,
            alpha=self.alpha,
            beta=self.beta,
            baseline=self.baseline,
            baseline_decay=self.baseline_decay,
            dlpo_mode=self.dlpo_mode,
            dlpo_t_sampling=self.dlpo_t_sampling,
            dl_source=self.dl_source,
            batch_size=self.batch_size,
            loss_norm=self.loss_norm,
        )

    def sha256(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def config_help() -> str:
    """One line per key with its default, generated from :class:`RunConfig`."""
    lines = []
    for key, field in RunConfig.model_fields.items():
        default = field.default
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default) or "auto"
        if isinstance(default, bool):
            default = str(default).lower()
        lines.append(f"  {key} = {default}  ({field.description})")
    return "\n".join(lines)


def _from_validation(exc: ValidationError, lines: dict[str, int]) -> ConfigError:
    error = exc.errors()[0]
    original = (error.get("ctx") or {}).get("error")
    if isinstance(original, ConfigError):
        key = original.key
        message = str(original)
    else:
        key = str(error["loc"][0]) if error["loc"] else None
        message = error["msg"]
    prefix = f"{key}: " if key and not message.startswith(key) else ""
    return ConfigError(f"{prefix}{message}", key=key, line=lines.get(key or ""))


def parse_config_text(text: str, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``overrides`` (command-line flags) win over file values.
    """
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    known = RunConfig.model_fields
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", key=key, line=number)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", key=key, line=number)
        if not value:
            raise ConfigError(f"missing value for {key!r}", key=key, line=number)
        values[key] = value
        lines[key] = number
    applied = {k: v for k, v in (overrides or {}).items() if v is not None}
    values.update(applied)
    # an overridden key no longer comes from its file line
    for key in applied:
        lines.pop(key, None)
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise _from_validation(exc, lines) from None


def parse_config_file(path: Union[str, Path], overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    logger.debug("Loaded config from %s", path)
    return parse_config_text(text, overrides)


class Experiment(BaseModel):
    """Everything a run needs, derived once from a :class:`RunConfig`."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: RunConfig
    sched: ScheduleParams
    layout: DenoiserLayout
    spec: ConditionSpec
    rl: RLConfig
    reward: MosProxyReward
    heldout: HeldoutProxyReward

    @classmethod
    def from_config(cls, config: RunConfig) -> "Experiment":
        spec = config.condition_spec()
        return cls(
            config=config,
            sched=make_schedule(config.T, config.beta_start, config.beta_end, config.sigma2_min),
            layout=DenoiserLayout(
                N=config.n_samples,
                K=config.n_classes,
                T=config.T,
                d_c=config.d_c,
                d_t=config.d_t,
                h1=config.h1,
                h2=config.h2,
            ),
            spec=spec,
            rl=config.rl_config(),
            reward=MosProxyReward(spec=spec, weights=config.mos_weights),
            heldout=HeldoutProxyReward(spec=spec, weights=config.heldout_weights),
        )

    def with_algo(self, algo: str) -> "Experiment":
        try:
            config = RunConfig.model_validate({**self.config.model_dump(), "algo": algo})
        except ValidationError as exc:
            raise _from_validation(exc, {}) from None
        return Experiment.from_config(config)

    def dataset(self, seed: Optional[int] = None) -> list[tuple[np.ndarray, int]]:
        seed = self.config.seed if seed is None else seed
        rng = np.random.default_rng([seed, Stream.DATASET])
        return make_dataset(self.spec, self.config.dataset_size, rng, self.config.observation_noise)

    def initial_params(self, seed: Optional[int] = None) -> DenoiserParams:
        seed = self.config.seed if seed is None else seed
        return DenoiserParams.initialize(self.layout, seed)
