from .base_reward import RewardModel, RewardScore
from .heldout_proxy.heldout_proxy import HeldoutProxyReward, reward_heldout
from .mos_proxy.mos_proxy import MosProxyReward, reward_mos
from .spectrum import (
    ConditionSpec,
    clean_waveform,
    condition_recovery,
    make_dataset,
    power_spectrum,
    recovery_error,
)
