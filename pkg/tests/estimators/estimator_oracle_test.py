"""Score-function estimators against closed-form gradients on a two-step scalar chain.

With ε_θ(x) = θ₀ + θ₁·x every reverse step is affine in its input,
x_{t−1} = A_t·x_t + b_t + σ_t·z, so the law of x₀ is Gaussian with moments that
can be propagated exactly. The reward is r(x₀) = −(x₀ − 1)².

Objectives with a squared noise residual are polynomials of degree four in the
chain's Gaussian draws, so a five-node Gauss–Hermite rule per draw integrates them
exactly.
"""

import numpy as np
import pytest

from dlpo_lab.diffusion import DenoiserParams, make_schedule, sample_trajectories
from dlpo_lab.diffusion.policy import batch_logp_diff
from dlpo_lab.estimators import RLConfig, grad_ddpo, grad_dlpo, grad_dpok, grad_klinr, grad_onlydl, grad_rwr
from dlpo_lab.runtime import spawn_rngs

SCHED = make_schedule(2, 0.2, 0.5)
THETA = np.array([0.1, 0.2])
THETA_PRE = np.array([0.0, 0.1])


def _step(theta: np.ndarray, t: int) -> tuple[float, float]:
    """``(A_t, b_t)`` of the reverse mean ``A_t·x + b_t``."""
    c = SCHED.beta[t - 1] / np.sqrt(1.0 - SCHED.alpha_bar[t - 1])
    root = np.sqrt(SCHED.alpha[t - 1])
    return (1.0 - c * theta[1]) / root, -c * theta[0] / root


def expected_reward(theta: np.ndarray) -> float:
    m, v = 0.0, 1.0
    for t in range(SCHED.T, 0, -1):
        A, b = _step(theta, t)
        m, v = A * m + b, A * A * v + SCHED.sigma2[t - 1]
    return -((m - 1.0) ** 2 + v)


def trajectory_kl(theta: np.ndarray, theta_pre: np.ndarray) -> float:
    m, v, total = 0.0, 1.0, 0.0
    for t in range(SCHED.T, 0, -1):
        A, b = _step(theta, t)
        A_pre, b_pre = _step(theta_pre, t)
        dA, db = A - A_pre, b - b_pre
        total += (dA * dA * (v + m * m) + 2 * dA * db * m + db * db) / (2 * SCHED.sigma2[t - 1])
        m, v = A * m + b, A * A * v + SCHED.sigma2[t - 1]
    return total


def _ascent_gradient(objective, theta: np.ndarray, step: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        shifted = theta.copy()
        shifted[i] += step
        upper = objective(shifted)
        shifted[i] -= 2 * step
        grad[i] = (upper - objective(shifted)) / (2 * step)
    return grad


def _scored_rollouts(helpers, theta: np.ndarray, count: int, seed: int):
    params = DenoiserParams(layout=helpers.AffineNoiseLayout(), theta=theta)
    batch = sample_trajectories(params, [0] * count, SCHED, spawn_rngs(seed, count))
    return params, [traj.model_copy(update={"reward": -float((traj.x0[0] - 1.0) ** 2)}) for traj in batch]


def _relative_error(estimate: np.ndarray, target: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - target) / np.linalg.norm(target))


def test_closed_form_matches_simulation(helpers):
    _, batch = _scored_rollouts(helpers, THETA, 20_000, seed=1)
    rewards = np.array([traj.reward for traj in batch])
    se = rewards.std() / np.sqrt(rewards.size)
    assert abs(rewards.mean() - expected_reward(THETA)) < 4 * se


def test_ddpo_is_unbiased(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 100_000, seed=2)
    config = RLConfig(algo="ddpo", baseline="moving_average")
    estimate = grad_ddpo(batch, params, params, SCHED, config, np.random.default_rng(0), expected_reward(THETA))
    target = -_ascent_gradient(expected_reward, THETA)
    assert _relative_error(estimate.grad, target) < 0.05


def test_klinr_is_unbiased_for_the_kl_shaped_objective(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 100_000, seed=3)
    pretrained = DenoiserParams(layout=params.layout, theta=THETA_PRE)

    def objective(theta):
        return expected_reward(theta) - trajectory_kl(theta, THETA_PRE)

    config = RLConfig(algo="klinr", baseline="moving_average")
    estimate = grad_klinr(batch, params, pretrained, SCHED, config, np.random.default_rng(0), objective(THETA))
    target = -_ascent_gradient(objective, THETA)
    assert _relative_error(estimate.grad, target) < 0.05
    assert estimate.aux["mean_shaped_reward"] == pytest.approx(objective(THETA), abs=0.1)


def test_trajectory_kl_matches_the_mean_log_ratio(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 20_000, seed=4)
    pretrained = DenoiserParams(layout=params.layout, theta=THETA_PRE)
    log_ratio = batch_logp_diff(batch, params, pretrained, SCHED)
    se = log_ratio.std() / np.sqrt(log_ratio.size)
    assert abs(log_ratio.mean() - trajectory_kl(THETA, THETA_PRE)) < 4 * se


def test_baseline_keeps_the_mean_and_cuts_the_variance(helpers):
    plain = RLConfig(algo="ddpo", baseline="none")
    centered = RLConfig(algo="ddpo", baseline="moving_average")
    baseline = expected_reward(THETA)
    without, with_baseline = [], []
    for seed in range(50):
        params, batch = _scored_rollouts(helpers, THETA, 2000, seed=100 + seed)
        rng = np.random.default_rng(0)
        without.append(grad_ddpo(batch, params, params, SCHED, plain, rng).grad)
        with_baseline.append(grad_ddpo(batch, params, params, SCHED, centered, rng, baseline).grad)
    without, with_baseline = np.array(without), np.array(with_baseline)

    shift = with_baseline - without
    se = shift.std(axis=0) / np.sqrt(len(shift))
    assert np.all(np.abs(shift.mean(axis=0)) < 4 * se)
    assert with_baseline.var(axis=0).sum() < without.var(axis=0).sum()


NODES, NODE_WEIGHTS = np.polynomial.hermite_e.hermegauss(5)
NODE_WEIGHTS = NODE_WEIGHTS / NODE_WEIGHTS.sum()


def chain_expectation(theta: np.ndarray, fn) -> float:
    """``E[fn(states)]`` with ``states[t] = x_t`` over the chain run with ``theta``."""
    draws = np.meshgrid(*[NODES] * (SCHED.T + 1), indexing="ij")
    weights = np.prod(np.meshgrid(*[NODE_WEIGHTS] * (SCHED.T + 1), indexing="ij"), axis=0)
    x = draws[0]
    states = {SCHED.T: x}
    for t in range(SCHED.T, 0, -1):
        A, b = _step(theta, t)
        x = A * x + b + np.sqrt(SCHED.sigma2[t - 1]) * draws[SCHED.T - t + 1]
        states[t - 1] = x
    return float(np.sum(weights * fn(states)))


def _reward(states) -> np.ndarray:
    return -((states[0] - 1.0) ** 2)


def mean_residual_sq(theta: np.ndarray, states) -> np.ndarray:
    """``(1/T)·Σ_t (ε̃_t − ε_θ(x_t))²`` with ε̃ implied by each path's own x₀."""
    total = 0.0
    for t in range(1, SCHED.T + 1):
        alpha_bar = SCHED.alpha_bar[t - 1]
        implied = (states[t] - np.sqrt(alpha_bar) * states[0]) / np.sqrt(1.0 - alpha_bar)
        total = total + (implied - theta[0] - theta[1] * states[t]) ** 2
    return total / SCHED.T


def frozen_state_kl(theta: np.ndarray) -> float:
    """``Σ_t KL(p_θ ‖ p_pre)`` on states drawn with THETA, the state law held fixed."""

    def kl(states):
        total = 0.0
        for t in range(1, SCHED.T + 1):
            A, b = _step(theta, t)
            A_pre, b_pre = _step(THETA_PRE, t)
            total = total + ((A - A_pre) * states[t] + b - b_pre) ** 2 / (2 * SCHED.sigma2[t - 1])
        return total

    return chain_expectation(THETA, kl)


def test_quadrature_matches_the_closed_form_moments():
    assert chain_expectation(THETA, _reward) == pytest.approx(expected_reward(THETA), rel=1e-12)
    assert frozen_state_kl(THETA) == pytest.approx(trajectory_kl(THETA, THETA_PRE), rel=1e-12)

def _chunk_estimates(estimate, batch, chunks: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of ``estimate`` over disjoint slices of ``batch``."""
    grads = np.array([estimate(batch[i::chunks], np.random.default_rng(i)) for i in range(chunks)])
    return grads.mean(axis=0), grads.std(axis=0, ddof=1) / np.sqrt(chunks)


def _assert_within(mean: np.ndarray, se: np.ndarray, target: np.ndarray) -> None:
    assert np.all(np.abs(mean - target) < 4 * se)


def _penalty_gradient(theta: np.ndarray) -> np.ndarray:
    return _ascent_gradient(lambda p: chain_expectation(theta, lambda s: mean_residual_sq(p, s)), theta)


def test_rwr_follows_the_reward_weighted_residual(helpers):
    _, pool = _scored_rollouts(helpers, THETA_PRE, 100_000, seed=5)
    params = DenoiserParams(layout=helpers.AffineNoiseLayout(), theta=THETA)
    pretrained = params.with_theta(THETA_PRE)
    baseline = expected_reward(THETA_PRE)

    def objective(theta):
        return chain_expectation(THETA_PRE, lambda s: (_reward(s) - baseline) * mean_residual_sq(theta, s))

    config = RLConfig(algo="rwr", loss_norm="l2sq")
    mean, se = _chunk_estimates(
        lambda batch, rng: grad_rwr(batch, params, pretrained, SCHED, config, rng, baseline).grad, pool
    )
    _assert_within(mean, se, _ascent_gradient(objective, THETA))


def test_dpok_is_unbiased_for_reward_plus_frozen_state_kl(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 100_000, seed=6)
    pretrained = params.with_theta(THETA_PRE)
    config = RLConfig(algo="dpok", alpha=1.0, beta=0.5)
    mean, se = _chunk_estimates(
        lambda b, rng: grad_dpok(b, params, pretrained, SCHED, config, rng, expected_reward(THETA)).grad, batch
    )
    target = -_ascent_gradient(expected_reward, THETA) + 0.5 * _ascent_gradient(frozen_state_kl, THETA)
    _assert_within(mean, se, target)

    kl = grad_dpok(batch, params, pretrained, SCHED, config, np.random.default_rng(0)).parts["kl"]
    assert _relative_error(kl, _ascent_gradient(frozen_state_kl, THETA)) < 0.05


def test_dlpo_direct_grad_is_unbiased(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 100_000, seed=7)
    config = RLConfig(algo="dlpo", alpha=1.0, beta=0.5, loss_norm="l2sq")
    mean, se = _chunk_estimates(
        lambda b, rng: grad_dlpo(b, params, params, SCHED, config, rng, expected_reward(THETA)).grad, batch
    )
    _assert_within(mean, se, -_ascent_gradient(expected_reward, THETA) + 0.5 * _penalty_gradient(THETA))


def test_dlpo_shaped_reward_is_unbiased_for_the_penalized_return(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 100_000, seed=8)
    alpha, beta = 1.0, 0.5

    def penalized(theta):
        return chain_expectation(theta, lambda s: alpha * _reward(s) - beta * mean_residual_sq(THETA, s))

    # centers the whole weight α·r − β·d
    baseline = penalized(THETA) / alpha
    config = RLConfig(algo="dlpo", alpha=alpha, beta=beta, dlpo_mode="shaped_reward", loss_norm="l2sq")
    mean, se = _chunk_estimates(
        lambda b, rng: grad_dlpo(b, params, params, SCHED, config, rng, baseline).grad, batch
    )
    _assert_within(mean, se, -_ascent_gradient(penalized, THETA))


def test_onlydl_descends_the_residual_alone(helpers):
    params, batch = _scored_rollouts(helpers, THETA, 100_000, seed=9)
    config = RLConfig(algo="onlydl", beta=0.5, loss_norm="l2sq")
    mean, se = _chunk_estimates(
        lambda b, rng: grad_onlydl(b, params, params, SCHED, config, rng, expected_reward(THETA)).grad, batch
    )
    _assert_within(mean, se, 0.5 * _penalty_gradient(THETA))
