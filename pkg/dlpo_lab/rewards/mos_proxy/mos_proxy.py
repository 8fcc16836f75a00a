import numpy as np

from dlpo_lab.rewards.base_reward import RewardModel, RewardScore, mos_scale
from dlpo_lab.rewards.spectrum import ConditionSpec, power_spectrum

MOS_WEIGHTS = (0.6, 0.2, 0.2)
SMOOTH_SCALE = 0.1
AMP_SCALE = 0.02


def spectral_fraction(x0: np.ndarray, spec: ConditionSpec, c: int) -> float:
    """Share of the non-DC energy within ±1 bin of the class frequency; 0 for silence."""
    power = power_spectrum(x0)[1:]
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    center = spec.bin_of(c)
    lo, hi = max(1, center - 1), min(len(power), center + 1)
    return float(power[lo - 1 : hi].sum()) / total


def smoothness(x0: np.ndarray) -> float:
    if x0.size < 3:
        return 1.0
    return float(np.exp(-np.mean(np.diff(x0, n=2) ** 2) / SMOOTH_SCALE))


def amplitude_match(x0: np.ndarray, spec: ConditionSpec) -> float:
    rms = float(np.sqrt(np.mean(x0**2)))
    return float(np.exp(-((rms - spec.amplitude / np.sqrt(2.0)) ** 2) / AMP_SCALE))


class MosProxyReward(RewardModel):
    name: str = "reward_mos"
    description: str = (
        "Naturalness proxy: class-band spectral purity, waveform smoothness and loudness match."
    )
    weights: tuple[float, ...] = MOS_WEIGHTS

    def _score(self, x0: np.ndarray, c: int) -> float:
        w_spec, w_smooth, w_amp = self.weights
        quality = (
            w_spec * spectral_fraction(x0, self.spec, c)
            + w_smooth * smoothness(x0)
            + w_amp * amplitude_match(x0, self.spec)
        )
        return mos_scale(quality)


def reward_mos(x0: np.ndarray, c: int, spec: ConditionSpec, weights: tuple[float, ...] = MOS_WEIGHTS) -> RewardScore:
    return MosProxyReward(spec=spec, weights=weights).score(x0, c)
