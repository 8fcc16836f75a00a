import pytest

from dlpo_lab.config import Experiment, RunConfig, config_help, parse_config_file, parse_config_text
from dlpo_lab.errors import ConfigError


def test_defaults():
    config = parse_config_text("")
    assert config == RunConfig()
    assert (config.T, config.algo, config.alpha, config.beta) == (10, "dlpo", 1.0, 0.1)
    assert config.dlpo_mode == "direct_grad"
    assert config.rwr_pool_size == 1024


def test_values_comments_and_blank_lines():
    config = parse_config_text(
        """
        # a DPOK run
        algo = dpok   # trailing comment
        beta = 0.25

        mos_weights = 0.5, 0.25,0.25
        frequencies = 1, 2, 3, 4, 5, 6, 7, 8
        compare_ground_truth = true
        """
    )
    assert config.algo == "dpok"
    assert config.beta == 0.25
    assert config.mos_weights == (0.5, 0.25, 0.25)
    assert config.frequencies == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    assert config.compare_ground_truth is True


@pytest.mark.parametrize(
    "text, line, key",
    [
        ("T = 4\nbetaa = 0.1\n", 2, "betaa"),
        ("beta = 0.1\n\nbeta = 0.2\n", 3, "beta"),
        ("T = 4\nalgo\n", 2, None),
        ("algo =\n", 1, "algo"),
        ("# header\nT = 0\n", 2, "T"),
        ("T = 4\nalgo = bogus\n", 2, "algo"),
        ("beta = nan\n", 1, "beta"),
        ("seed = -1\n", 1, "seed"),
    ],
)
def test_errors_name_the_line(text, line, key):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.line == line
    assert info.value.key == key
    assert str(info.value).startswith(f"line {line}: ")


def test_unknown_key_message():
    with pytest.raises(ConfigError, match="unknown key 'betaa'"):
        parse_config_text("betaa = 0.1")


def test_cross_field_checks():
    with pytest.raises(ConfigError, match="beta_start"):
        parse_config_text("beta_start = 0.5\nbeta_end = 0.1")
    with pytest.raises(ConfigError, match="mos_weights"):
        parse_config_text("mos_weights = 1, 1")
    with pytest.raises(ConfigError, match="dl_source"):
        parse_config_text("dlpo_mode = shaped_reward\ndl_source = dataset")
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config_text("batch_size = 32\nrwr_pool_size = 16")
    with pytest.raises(ConfigError):
        parse_config_text("n_classes = 3\nfrequencies = 1, 2")


def test_overrides_win_over_the_file():
    config = parse_config_text("seed = 3\nalgo = rwr\n", {"seed": 9, "algo": None})
    assert config.seed == 9
    assert config.algo == "rwr"


def test_override_errors_carry_no_file_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text("seed = 3\nalgo = rwr\n", {"algo": "bogus"})
    assert info.value.key == "algo"
    assert info.value.line is None
    assert not str(info.value).startswith("line")

    with pytest.raises(ConfigError) as info:
        parse_config_text("seed = 3\nalgo = bogus\n")
    assert info.value.line == 2


def test_parse_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("T = 5\nalgo = klinr\n", encoding="utf-8")
    assert parse_config_file(path) == RunConfig(T=5, algo="klinr")


def test_help_lists_every_key():
    lines = config_help().splitlines()
    assert len(lines) == len(RunConfig.model_fields)
    for key in RunConfig.model_fields:
        assert any(line.strip().startswith(f"{key} = ") for line in lines)
    assert "  beta = 0.1  (Regularizer weight)" in lines
    assert "  frequencies = auto  (Cycles per window per class (default 2..K+1))" in lines


def test_sha256_tracks_the_values():
    assert parse_config_text("").sha256() == RunConfig().sha256()
    assert RunConfig(beta=0.2).sha256() != RunConfig().sha256()
    assert len(RunConfig().sha256()) == 64


def test_experiment(helpers):
    experiment = helpers.tiny_experiment()
    assert experiment.sched.T == 3
    assert experiment.layout.N == experiment.spec.N == 16
    assert experiment.spec.freq == (2.0, 3.0)
    assert experiment.rl.beta == 0.1
    assert len(experiment.dataset()) == 32
    assert experiment.with_algo("rwr").rl.algo == "rwr"
    with pytest.raises(ConfigError):
        experiment.with_algo("bogus")


def test_experiment_from_defaults():
    experiment = Experiment.from_config(RunConfig())
    assert experiment.layout.size == experiment.initial_params().theta.size
