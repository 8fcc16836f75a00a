import numpy as np
import pytest

from dlpo_lab.rewards import ConditionSpec, HeldoutProxyReward, clean_waveform, reward_heldout
from dlpo_lab.rewards.heldout_proxy.heldout_proxy import circular_autocorrelation, crest_match, periodicity


@pytest.fixture
def spec():
    return ConditionSpec()


@pytest.mark.parametrize("c", range(8))
def test_clean_waveform_scores_high(spec, c):
    assert reward_heldout(clean_waveform(spec, c, phase=2.0), c, spec).value >= 4.0


def test_white_noise_scores_low(spec):
    rng = np.random.default_rng(0)
    scores = [reward_heldout(rng.standard_normal(spec.N), int(rng.integers(spec.K)), spec).value for _ in range(500)]
    assert np.mean(scores) <= 2.0


def test_circular_shift_leaves_the_score_unchanged(spec):
    rng = np.random.default_rng(1)
    for _ in range(20):
        x0 = clean_waveform(spec, 4, phase=0.3) + 0.3 * rng.standard_normal(spec.N)
        shifted = np.roll(x0, int(rng.integers(1, spec.N)))
        assert reward_heldout(shifted, 4, spec).value == pytest.approx(reward_heldout(x0, 4, spec).value, abs=1e-6)


def test_autocorrelation_of_a_tone(spec):
    acf = circular_autocorrelation(clean_waveform(spec, 2))
    lags = np.arange(spec.N)
    assert acf[0] == pytest.approx(1.0)
    assert np.allclose(acf, np.cos(2 * np.pi * 4 * lags / spec.N), atol=1e-12)


def test_silence(spec):
    x0 = np.zeros(spec.N)
    assert np.array_equal(circular_autocorrelation(x0), x0)
    assert periodicity(x0, spec, 0) == 0.0
    assert crest_match(x0) == 0.0
    assert reward_heldout(x0, 0, spec).value == 1.0


def test_crest_factor_of_a_tone(spec):
    assert crest_match(clean_waveform(spec, 0)) == pytest.approx(1.0, abs=1e-6)
    square = np.sign(clean_waveform(spec, 0, phase=0.1))
    assert crest_match(square) < crest_match(clean_waveform(spec, 0))


def test_scores_stay_on_the_scale(spec):
    model = HeldoutProxyReward(spec=spec)
    rng = np.random.default_rng(2)
    values = model.score_batch(1e3 * rng.standard_normal((50, spec.N)), rng.integers(0, spec.K, size=50))
    assert np.all((values >= 1.0) & (values <= 5.0))
