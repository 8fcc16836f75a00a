from .denoiser import DenoiserLayout, DenoiserParams, build_eps, mu_from_eps, predict_eps
from .loss import ddpm_loss, residual_norm
from .policy import (
    StepBatch,
    Trajectory,
    kl_step,
    logprob_step,
    sample_trajectories,
    sample_trajectory,
    traj_logp_diff,
)
from .schedule import (
    ScheduleParams,
    implied_noise,
    make_schedule,
    posterior_mean,
    q_sample,
)
