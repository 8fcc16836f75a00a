import numpy as np
import pytest
from pydantic import ValidationError

from dlpo_lab.diffusion import (
    DenoiserLayout,
    DenoiserParams,
    build_eps,
    implied_noise,
    make_schedule,
    mu_from_eps,
    posterior_mean,
    predict_eps,
)
from dlpo_lab.engine import Tape, finite_diff_check
from dlpo_lab.errors import ArgumentError


def test_blocks_tile_the_parameter_vector():
    layout = DenoiserLayout()
    offset = 0
    for start, shape in layout.blocks.values():
        assert start == offset
        offset += int(np.prod(shape))
    assert layout.size == offset
    assert layout.blocks["cond_emb"][1] == (8, 16)
    assert layout.blocks["w1_x"][1] == (256, 128)
    assert layout.blocks["skip"] == (layout.size - 10, (10, 1))


def test_zero_network_predicts_zero(helpers):
    layout = helpers.tiny_layout()
    params = DenoiserParams(layout=layout, theta=np.zeros(layout.size))
    out = predict_eps(params, np.ones(layout.N), 1, 2)
    assert np.array_equal(out, np.zeros(layout.N))


def test_skip_gain_passes_the_noisy_input_per_step(helpers):
    layout = helpers.tiny_layout()
    theta = np.zeros(layout.size)
    offset, shape = layout.blocks["skip"]
    theta[offset : offset + shape[0]] = np.arange(1, shape[0] + 1)
    params = DenoiserParams(layout=layout, theta=theta)
    x = np.linspace(-1, 1, layout.N)
    for t in range(1, layout.T + 1):
        assert np.array_equal(predict_eps(params, x, 0, t), t * x)
    fresh = helpers.tiny_params()
    assert np.all(fresh.layout.unpack(fresh.theta)["skip"] == 0.0)


def test_seeded_init_is_deterministic(helpers):
    a = helpers.tiny_params(seed=3)
    b = helpers.tiny_params(seed=3)
    assert np.array_equal(a.theta, b.theta)
    x = np.linspace(-1, 1, a.layout.N)
    assert np.array_equal(predict_eps(a, x, 0, 1), predict_eps(b, x, 0, 1))
    assert not np.array_equal(a.theta, helpers.tiny_params(seed=4).theta)


def test_output_bias_moves_one_coordinate(helpers):
    params = helpers.tiny_params()
    x = np.linspace(-1, 1, params.layout.N)
    before = predict_eps(params, x, 1, 3)
    offset, _ = params.layout.blocks["b3"]
    theta = params.theta.copy()
    theta[offset + 5] += 0.25
    after = predict_eps(params.with_theta(theta), x, 1, 3)
    changed = np.flatnonzero(after != before)
    assert changed.tolist() == [5]
    assert after[5] - before[5] == pytest.approx(0.25, abs=1e-12)


def test_rows_match_single_predictions(helpers):
    params = helpers.tiny_params()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, params.layout.N))
    c, t = np.array([0, 1, 1]), np.array([3, 1, 2])
    rows = predict_eps(params, x, c, t)
    for i in range(3):
        assert np.allclose(rows[i], predict_eps(params, x[i], int(c[i]), int(t[i])), rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize(
    "x_len, c, t",
    [(7, 0, 1), (8, 2, 1), (8, -1, 1), (8, 0, 0), (8, 0, 4), (8, 0.5, 1)],
)
def test_bad_inputs(helpers, x_len, c, t):
    params = helpers.tiny_params()
    with pytest.raises(ArgumentError):
        predict_eps(params, np.zeros(x_len), c, t)


def test_theta_length_is_checked(helpers):
    layout = helpers.tiny_layout()
    with pytest.raises(ValidationError):
        DenoiserParams(layout=layout, theta=np.zeros(layout.size + 1))
    with pytest.raises(ValidationError):
        DenoiserParams(layout=layout, theta=np.full(layout.size, np.nan))


def test_tape_build_matches_predict(helpers):
    params = helpers.tiny_params()
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, params.layout.N))
    c, t = np.array([0, 1, 0, 1]), np.array([1, 2, 3, 3])
    weights = rng.standard_normal((4, params.layout.N))
    tape = Tape(params.layout.size)
    tape.sum(build_eps(tape, params.layout, x, c, t) * weights)
    value = tape.forward(params.theta)
    assert value == pytest.approx(float(np.sum(predict_eps(params, x, c, t) * weights)), rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_network_gradient_matches_finite_differences(helpers, seed):
    params = helpers.tiny_params(seed=seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.standard_normal((5, params.layout.N))
    c = rng.integers(0, params.layout.K, size=5)
    t = rng.integers(1, params.layout.T + 1, size=5)
    target = rng.standard_normal((5, params.layout.N))

    def objective(theta):
        tape = Tape(params.layout.size)
        eps = build_eps(tape, params.layout, x, c, t)
        tape.sum(tape.square(eps - target))
        value = tape.forward(theta)
        return value, tape.backward()

    grad = objective(params.theta)[1]
    error = finite_diff_check(objective, params.theta, gradient=grad, indices=helpers.top_indices(grad, 30))
    assert error < 1e-4


def test_mu_with_zero_noise_estimate():
    sched = make_schedule(3, 0.1, 0.3)
    x_t = np.array([0.5, -1.0, 2.0])
    for t in (1, 2, 3):
        assert np.allclose(mu_from_eps(x_t, np.zeros(3), t, sched), x_t / np.sqrt(sched.alpha[t - 1]), rtol=1e-15)


def test_mu_without_noise_is_identity():
    sched = make_schedule(1, 1e-12, 1e-12)
    x_t = np.array([0.5, -1.0])
    assert np.allclose(mu_from_eps(x_t, np.ones(2), 1, sched), x_t, atol=1e-5)


def test_mu_from_implied_noise_is_the_posterior_mean():
    sched = make_schedule(10, 1e-3, 0.3)
    rng = np.random.default_rng(2)
    for t in range(1, 11):
        x_t, x0 = rng.standard_normal((2, 32))
        mu = mu_from_eps(x_t, implied_noise(x_t, x0, t, sched), t, sched)
        assert np.max(np.abs(mu - posterior_mean(x_t, x0, t, sched))) < 1e-10


def test_mu_step_out_of_range():
    sched = make_schedule(2, 0.1, 0.2)
    with pytest.raises(ArgumentError):
        mu_from_eps(np.zeros(2), np.zeros(2), 3, sched)
