"""End-to-end runs at the default desk-scale config. Run with ``pytest -m slow``."""

import numpy as np
import pytest

from dlpo_lab.config import Experiment, parse_config_text
from dlpo_lab.trainer import TrainState, evaluate, finetune, load_checkpoint, pretrain, validation_score

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def experiment():
    return Experiment.from_config(parse_config_text(""))


@pytest.fixture(scope="module")
def pretraining(experiment):
    return pretrain(experiment, experiment.dataset(), progress=False)


@pytest.fixture(scope="module")
def pretrained(pretraining):
    return pretraining[0].params


def _best(experiment, pretrained, algo, seed, ckpt_dir):
    experiment = experiment.with_algo(algo)
    state = TrainState.fresh(pretrained.copy(), seed)
    state, rows = finetune(experiment, state, pretrained, ckpt_dir, seed=seed, progress=False)
    return load_checkpoint(state.topk[0][1], experiment.layout), rows


def test_pretraining_loss_falls_well_below_its_first_epoch(pretraining):
    rows = pretraining[1]
    assert rows[-1].diff_loss / rows[0].diff_loss <= 0.40


def test_pretraining_recovers_the_condition(experiment, pretrained):
    assert evaluate(pretrained, experiment).recovery_err <= 0.10


def test_dlpo_improves_on_the_pretrained_model(experiment, pretrained, tmp_path):
    baseline = np.mean([validation_score(pretrained, experiment, s) for s in SEEDS])
    before = np.mean([evaluate(pretrained, experiment, seed=s).recovery_err for s in SEEDS])
    heldout_before = np.mean([evaluate(pretrained, experiment, seed=s).heldout for s in SEEDS])
    gains, errors, heldout = [], [], []
    for seed in SEEDS:
        best, rows = _best(experiment, pretrained, "dlpo", seed, tmp_path / f"dlpo_{seed}")
        gains.append(validation_score(best, experiment, seed) - baseline)
        row = evaluate(best, experiment, seed=seed)
        errors.append(row.recovery_err)
        heldout.append(row.heldout)
        assert rows[-1].reward_mos > rows[0].reward_mos
    assert np.mean(gains) >= 0.3
    assert np.mean(errors) <= before + 0.01
    assert np.mean(heldout) >= heldout_before


def test_onlydl_stays_near_the_pretrained_model(experiment, pretrained, tmp_path):
    shifts = []
    for seed in SEEDS:
        best, _ = _best(experiment, pretrained, "onlydl", seed, tmp_path / f"onlydl_{seed}")
        shifts.append(validation_score(best, experiment, seed) - validation_score(pretrained, experiment, seed))
    assert abs(np.mean(shifts)) <= 0.1
