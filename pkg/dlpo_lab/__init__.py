from .config import Experiment, RunConfig, parse_config_file, parse_config_text
from .diffusion import (
    DenoiserLayout,
    DenoiserParams,
    ScheduleParams,
    Trajectory,
    make_schedule,
    sample_trajectories,
    sample_trajectory,
)
from .errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DLPOLabError,
    NumericError,
    StateError,
    TapeConstructionError,
)
from .estimators import (
    GradEstimate,
    GradientEstimator,
    RLConfig,
    get_estimator,
    grad_ddpo,
    grad_dlpo,
    grad_dpok,
    grad_klinr,
    grad_onlydl,
    grad_rwr,
)
from .rewards import ConditionSpec, RewardModel, RewardScore, reward_heldout, reward_mos
from .trainer import MetricsRow, TrainState, adam_update, evaluate, finetune, pretrain
