"""Synthetic conditional waveforms and the shared Fourier utility.

Each condition class is a sine with its own integer number of cycles per window,
standing in for the text prompt of a speech model.
"""

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dlpo_lab.errors import ArgumentError, ConfigError


class ConditionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    K: int = Field(8, ge=1, description="Number of condition classes")
    N: int = Field(128, ge=2, description="Samples per waveform")
    freq: tuple[float, ...] = Field(
        default=(), description="Cycles per window for each class; defaults to 2..K+1"
    )
    amplitude: float = Field(1.0, gt=0, description="Sine amplitude")

    @model_validator(mode="before")
    @classmethod
    def _default_frequencies(cls, data):
        if isinstance(data, dict) and not data.get("freq"):
            K = int(data.get("K", 8))
            data = {**data, "freq": tuple(float(f) for f in range(2, K + 2))}
        return data

    @model_validator(mode="after")
    def _check_frequencies(self):
        if len(self.freq) != self.K:
            raise ConfigError(f"need {self.K} class frequencies, got {len(self.freq)}", key="frequencies")
        if len(set(self.freq)) != len(self.freq):
            raise ConfigError("class frequencies must be distinct", key="frequencies")
        if any(f <= 0 or f >= self.N / 2 for f in self.freq):
            raise ConfigError(f"class frequencies must lie in (0, {self.N / 2})", key="frequencies")
        return self

    def bin_of(self, c: int) -> int:
        return int(round(self.freq[c]))

    def period_of(self, c: int) -> float:
        return self.N / self.freq[c]


def power_spectrum(x: np.ndarray) -> np.ndarray:
    """``|DFT(x)|²`` for the non-negative frequency bins 0..N//2."""
    return np.abs(np.fft.rfft(np.asarray(x, dtype=np.float64))) ** 2


def clean_waveform(spec: ConditionSpec, c: int, phase: float = 0.0) -> np.ndarray:
    n = np.arange(spec.N)
    return spec.amplitude * np.sin(2.0 * np.pi * spec.freq[c] * n / spec.N + phase)


def make_dataset(
    spec: ConditionSpec,
    count: int,
    rng: np.random.Generator,
    noise_std: float = 0.01,
    phase: Optional[float] = None,
) -> list[tuple[np.ndarray, int]]:
    """``count`` noisy class sines with uniform class and phase.

    Per item the generator draws the class, then the phase (unless ``phase`` is
    fixed), then the observation noise (unless ``noise_std`` is 0).
    """
    if count < 1:
        raise ArgumentError(f"dataset size must be at least 1, got {count}")
    items = []
    for _ in range(count):
        c = int(rng.integers(spec.K))
        phi = rng.uniform(0.0, 2.0 * np.pi) if phase is None else phase
        x0 = clean_waveform(spec, c, phi)
        if noise_std > 0:
            x0 = x0 + rng.normal(0.0, noise_std, size=spec.N)
        items.append((x0, c))
    return items


def condition_recovery(x0: np.ndarray, spec: ConditionSpec) -> int:
    """Class whose frequency bin holds the most energy; ties go to the lower index."""
    power = power_spectrum(x0)
    energies = np.array([power[spec.bin_of(c)] for c in range(spec.K)])
    return int(np.argmax(energies))


def recovery_error(waveforms: np.ndarray, conditions: np.ndarray, spec: ConditionSpec) -> float:
    predicted = np.array([condition_recovery(x, spec) for x in waveforms])
    return float(np.mean(predicted != np.asarray(conditions)))
