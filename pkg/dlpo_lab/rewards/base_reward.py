from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np
from pydantic import BaseModel, field_validator

from dlpo_lab.rewards.spectrum import ConditionSpec

MOS_MIN = 1.0
MOS_MAX = 5.0


class RewardScore(BaseModel):
    value: float
    """MOS-like score on the 1–5 scale."""

    @field_validator("value")
    @classmethod
    def _clamp(cls, v: float) -> float:
        return float(min(MOS_MAX, max(MOS_MIN, v)))


def mos_scale(quality: float) -> float:
    """Map a [0, 1] quality (clamped) onto the 1–5 scale."""
    return MOS_MIN + (MOS_MAX - MOS_MIN) * float(np.clip(quality, 0.0, 1.0))


class RewardModel(BaseModel, ABC):
    """A black-box scorer of generated waveforms; never differentiated."""

    name: str
    """Short identifier used in logs and reports."""
    description: str
    """What the score measures."""
    spec: ConditionSpec
    """Condition classes the waveforms are scored against."""
    weights: tuple[float, ...]
    """Feature weights; experiment constants, fixed for a run."""

    def score(self, x0: np.ndarray, c: int) -> RewardScore:
        return RewardScore(value=self._score(np.asarray(x0, dtype=np.float64), int(c)))

    def score_batch(self, waveforms: Sequence[np.ndarray], conditions: Sequence[int]) -> np.ndarray:
        return np.array([self.score(x, c).value for x, c in zip(waveforms, conditions)])

    @abstractmethod
    def _score(self, x0: np.ndarray, c: int) -> float:
        """Raw score before clamping to [1, 5]."""
