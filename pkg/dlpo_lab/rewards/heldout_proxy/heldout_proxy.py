import numpy as np

from dlpo_lab.rewards.base_reward import RewardModel, RewardScore, mos_scale
from dlpo_lab.rewards.spectrum import ConditionSpec, power_spectrum

HELDOUT_WEIGHTS = (0.7, 0.3)
SINE_CREST = float(np.sqrt(2.0))
CREST_SCALE = 0.5


def circular_autocorrelation(x0: np.ndarray) -> np.ndarray:
    """Autocorrelation normalised to 1 at lag 0; all zeros for silence."""
    acf = np.fft.irfft(power_spectrum(x0), n=x0.size)
    if acf[0] <= 0.0:
        return np.zeros_like(acf)
    return acf / acf[0]


def periodicity(x0: np.ndarray, spec: ConditionSpec, c: int) -> float:
    """Peak sharpness: correlation at the class period against the half period."""
    acf = circular_autocorrelation(x0)
    period = spec.period_of(c)
    full = int(round(period)) % x0.size
    half = int(round(period / 2.0)) % x0.size
    return float(np.clip((acf[full] - acf[half]) / 2.0, 0.0, 1.0))


def crest_match(x0: np.ndarray) -> float:
    """Penalty on the peak-to-rms ratio drifting from a pure tone's √2."""
    rms = float(np.sqrt(np.mean(x0**2)))
    if rms == 0.0:
        return 0.0
    crest = float(np.max(np.abs(x0))) / rms
    return float(np.exp(-((crest - SINE_CREST) ** 2) / CREST_SCALE))


class HeldoutProxyReward(RewardModel):
    name: str = "reward_heldout"
    description: str = "Held-out quality metric: periodicity at the class period and crest factor."
    weights: tuple[float, ...] = HELDOUT_WEIGHTS

    def _score(self, x0: np.ndarray, c: int) -> float:
        w_period, w_crest = self.weights
        quality = w_period * periodicity(x0, self.spec, c) + w_crest * crest_match(x0)
        return mos_scale(quality)


def reward_heldout(
    x0: np.ndarray, c: int, spec: ConditionSpec, weights: tuple[float, ...] = HELDOUT_WEIGHTS
) -> RewardScore:
    return HeldoutProxyReward(spec=spec, weights=weights).score(x0, c)
