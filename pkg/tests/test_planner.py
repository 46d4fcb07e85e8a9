import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gsmppi.cbf import BarrierSpec, CompositeCbf, DegenerateFilter, safe_set_membership
from gsmppi.dynamics import ContractError, SystemModel, integrator_model
from gsmppi.planner import (
    DEGENERATE,
    NONFINITE,
    ControlProblem,
    CostSpec,
    PlannerConfig,
    PlanningFailed,
    importance_weights,
    noise_rng,
    plan,
    rollout,
    rollouts_numpy,
    s_cost_correction,
    sample_noise,
    update_mean,
    weight_entropy,
)

J_SAMPLE0 = 3982.9299395438575   # goal (3, 4.5), seed 0, tick 0, M = 0, sample 0


def far_disc():
    # relative-degree-one barrier that is never active near the origin
    return BarrierSpec(
        1,
        lambda x: (1e4 - np.sum(np.asarray(x) ** 2, axis=-1))[..., None],
        lambda x: -2.0 * np.asarray(x, dtype=float),
    )


def integrator_problem(terminal=None, running=None, n=2):
    sys = integrator_model(n)
    cbf = CompositeCbf([far_disc()], rho=20.0, alpha_gain=1.0, gamma=1e24)
    cost = CostSpec(
        terminal or (lambda x: np.zeros(np.shape(x)[:-1])),
        running or (lambda x, v: np.sum(np.asarray(v) ** 2, axis=-1)),
    )
    return ControlProblem(sys, cbf, cost)


# --- configuration and noise -------------------------------------------------

@pytest.mark.parametrize("kw", [
    {"K": 0}, {"N": 0}, {"lam": 0.0}, {"Ts": 0.0},
    {"sigma": [[1.0, 2.0], [2.0, 1.0]]}, {"sigma": [[1.0, 0.1], [0.0, 1.0]]},
])
def test_config_validation(kw):
    with pytest.raises(ContractError):
        PlannerConfig(**kw)


def test_identity_sigma_gives_raw_normals():
    cfg = PlannerConfig(K=3, N=4, sigma=np.eye(2))
    eps = sample_noise(noise_rng(7, 2), cfg)
    raw = noise_rng(7, 2).standard_normal((3, 4, 2))
    np.testing.assert_array_equal(eps, raw)


def test_noise_statistics():
    cfg = PlannerConfig(K=100_000, N=1)
    eps = sample_noise(noise_rng(1, 0), cfg)[:, 0]
    sig = cfg.sigma
    assert np.all(np.abs(eps.mean(axis=0)) <= 4 * np.sqrt(np.diag(sig) / 1e5))
    cov = np.cov(eps.T)
    assert np.all(np.abs(np.diag(cov) / np.diag(sig) - 1) < 0.05)
    # off-diagonal is zero here; compare on the scale of the diagonal
    assert abs(cov[0, 1]) < 0.05 * np.sqrt(sig[0, 0] * sig[1, 1])


def test_noise_streams_differ_by_tick_and_seed():
    cfg = PlannerConfig(K=4, N=2)
    a = sample_noise(noise_rng(0, 0), cfg)
    assert not np.array_equal(a, sample_noise(noise_rng(0, 1), cfg))
    assert not np.array_equal(a, sample_noise(noise_rng(1, 0), cfg))
    np.testing.assert_array_equal(a, sample_noise(noise_rng(0, 0), cfg))


def test_noise_prefix_independent_of_batch_size():
    cfg = PlannerConfig(K=10, N=3)
    big = sample_noise(noise_rng(5, 9), cfg)
    small = sample_noise(noise_rng(5, 9), cfg, K=4)
    np.testing.assert_array_equal(big[:4], small)


# --- rollouts ------------------------------------------------------------------

def test_single_step_terminal_only():
    prob = integrator_problem(terminal=lambda x: np.sum(np.asarray(x) ** 2, axis=-1), running=lambda x, v: 0.0 * np.sum(v, axis=-1))
    cfg = PlannerConfig(K=1, N=1, sigma=np.eye(2), Ts=0.1)
    x0, mu, eps = np.array([1.0, 2.0]), np.array([[0.5, -1.0]]), np.array([[0.25, 0.5]])
    J, states = rollout(prob.system, prob.cbf, prob.cost, x0, mu, eps, cfg)
    x1 = x0 + 0.1 * (mu[0] + eps[0])
    assert J == float(np.sum(x1**2))
    np.testing.assert_array_equal(states[-1], x1)


def test_control_energy_cost_on_integrator():
    prob = integrator_problem()
    cfg = PlannerConfig(K=5, N=6, sigma=np.eye(2))
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(6, 2))
    eps = sample_noise(noise_rng(0, 0), cfg)
    costs, status, *_ = rollouts_numpy(prob, np.zeros(2), mu, eps, cfg.Ts)
    expected = np.sum((mu + eps) ** 2, axis=(1, 2))
    np.testing.assert_allclose(costs, expected, rtol=1e-14)
    assert (status == 0).all()


def test_batched_rollouts_match_reference(scenario):
    prob = scenario.problem(scenario.goals[1])
    cfg = scenario.planner
    eps = sample_noise(noise_rng(3, 4), cfg, K=16)
    mu = np.random.default_rng(1).normal(0, 0.5, (cfg.N, 2))
    costs, _, _, _, _, traj = rollouts_numpy(prob, scenario.start, mu, eps, cfg.Ts, keep=True)
    for j in range(16):
        J, states = rollout(scenario.system, scenario.cbf, prob.cost, scenario.start, mu, eps[j], cfg)
        assert costs[j] == pytest.approx(J, rel=1e-12)
        np.testing.assert_allclose(traj[j], states, rtol=1e-10, atol=1e-10)


def test_regression_rollout_cost(scenario):
    prob = scenario.problem(scenario.goals[0])
    eps = sample_noise(noise_rng(0, 0), scenario.planner)[0]
    J, states = rollout(scenario.system, scenario.cbf, prob.cost, scenario.start, np.zeros((20, 2)), eps, scenario.planner)
    assert J == pytest.approx(J_SAMPLE0, rel=1e-12)
    inside, _, _ = safe_set_membership(scenario.cbf, states, slack=1e-6)
    assert inside.all()


# --- weights -------------------------------------------------------------------

def test_equal_costs_uniform_exact():
    for K in (1, 3, 1000):
        w, eta, best = importance_weights(np.full(K, 12.5), 1.0)
        assert (w == 1.0 / K).all() and eta == K and best == 0


def test_two_sample_ratio():
    lam = 0.7
    w, _, _ = importance_weights([0.0, lam * math.log(3)], lam)
    assert abs(w[0] - 0.75) < 1e-12 and abs(w[1] - 0.25) < 1e-12


@given(
    arrays(np.float64, st.integers(1, 50), elements=st.integers(-10**6, 10**6).map(float)),
    st.integers(-10**9, 10**9).map(float),
    st.sampled_from([0.5, 1.0, 2.0, 8.0]),
)
def test_offset_invariance_bit_exact(costs, offset, lam):
    w1, _, b1 = importance_weights(costs, lam)
    w2, _, b2 = importance_weights(costs + offset, lam)
    assert np.array_equal(w1, w2) and b1 == b2


@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
def test_weights_normalised(costs, lam):
    w, eta, best = importance_weights(costs, lam)
    assert (w >= 0).all() and abs(w.sum() - 1) < 1e-12
    assert costs[best] == costs.min() and best == int(np.argmin(costs))
    assert eta >= 1.0


@given(arrays(np.float64, st.integers(2, 100), elements=st.floats(-1e3, 1e3)))
def test_large_temperature_is_uniform(costs):
    spread = max(np.ptp(costs), 1.0)
    w, _, _ = importance_weights(costs, 1e12 * spread)
    assert np.max(np.abs(w - 1 / costs.size)) < 1e-9


def test_nonfinite_costs_excluded():
    w, _, best = importance_weights([np.inf, 2.0, np.nan, 2.0], 1.0)
    np.testing.assert_array_equal(w, [0.0, 0.5, 0.0, 0.5])
    assert best == 1
    with pytest.raises(PlanningFailed):
        importance_weights([np.inf, np.nan], 1.0)


def test_entropy():
    assert weight_entropy(np.full(8, 1 / 8)) == pytest.approx(math.log(8), rel=1e-15)
    assert weight_entropy([1.0, 0.0]) == 0.0


# --- mean update -----------------------------------------------------------------

def test_update_all_weight_on_one_sample():
    rng = np.random.default_rng(2)
    mu, eps = rng.normal(size=(5, 2)), rng.normal(size=(4, 5, 2))
    np.testing.assert_array_equal(update_mean(mu, eps, np.array([0, 0, 1.0, 0])), mu + eps[2])


def test_update_symmetric_pair_cancels():
    rng = np.random.default_rng(3)
    mu, e = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    np.testing.assert_array_equal(update_mean(mu, np.stack([e, -e]), np.array([0.5, 0.5])), mu)


def test_update_hand_weights():
    rng = np.random.default_rng(4)
    mu, eps = rng.normal(size=(3, 2)), rng.normal(size=(3, 3, 2))
    w = np.array([0.5, 0.3, 0.2])
    direct = mu.copy()
    for k in range(3):
        for j in range(3):
            direct[k] += w[j] * eps[j, k]
    np.testing.assert_allclose(update_mean(mu, eps, w), direct, rtol=1e-15, atol=1e-15)


# --- S correction ------------------------------------------------------------------

def test_s_correction_examples():
    cfg = PlannerConfig(K=1, N=1, lam=2.0, sigma=np.eye(2))
    assert s_cost_correction(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]]), cfg) == 3.0
    cfg = PlannerConfig(K=1, N=4)
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(4, 2))
    assert s_cost_correction(np.zeros((4, 2)), rng.normal(size=(4, 2)), cfg) == 0.0
    assert abs(s_cost_correction(mu, -mu / 2, cfg)) < 1e-15


def test_s_correction_changes_weights_not_best(scenario):
    prob = scenario.problem(scenario.goals[0])
    mu = np.random.default_rng(0).normal(0, 1, (20, 2))
    base = plan(prob, scenario.start, mu, scenario.planner, noise_rng(0, 0), backend="numpy")
    cfg = PlannerConfig(K=1000, N=20, sigma=scenario.planner.sigma, include_s_correction=True)
    corr = plan(prob, scenario.start, mu, cfg, noise_rng(0, 0), backend="numpy")
    assert not np.array_equal(base.batch.weights, corr.batch.weights)
    assert base.batch.best_index == corr.batch.best_index
    np.testing.assert_array_equal(base.v, corr.v)


# --- plan ---------------------------------------------------------------------------

def test_plan_single_sample():
    prob = integrator_problem()
    cfg = PlannerConfig(K=1, N=3, sigma=np.eye(2))
    mu = np.arange(6.0).reshape(3, 2)
    eps = sample_noise(noise_rng(0, 0), cfg)
    res = plan(prob, np.zeros(2), mu, cfg, noise=eps)
    np.testing.assert_array_equal(res.mu, mu + eps[0])
    np.testing.assert_array_equal(res.v, mu[0] + eps[0, 0])
    assert res.batch.weights[0] == 1.0


def test_plan_zero_noise():
    prob = integrator_problem()
    cfg = PlannerConfig(K=7, N=3, sigma=np.eye(2))
    mu = np.arange(6.0).reshape(3, 2)
    res = plan(prob, np.zeros(2), mu, cfg, noise=np.zeros((7, 3, 2)))
    np.testing.assert_array_equal(res.mu, mu)
    np.testing.assert_array_equal(res.v, mu[0])


def test_plan_best_control_from_pre_update_mean():
    prob = integrator_problem()
    cfg = PlannerConfig(K=50, N=4, sigma=np.eye(2))
    mu = np.ones((4, 2))
    res = plan(prob, np.zeros(2), mu, cfg, noise_rng(2, 0))
    b = res.batch
    np.testing.assert_array_equal(res.v, mu[0] + b.noises[b.best_index, 0])
    assert b.best_index == int(np.argmin(b.costs))


def test_plan_shape_checks():
    prob = integrator_problem()
    cfg = PlannerConfig(K=2, N=3, sigma=np.eye(2))
    with pytest.raises(ContractError):
        plan(prob, np.zeros(2), np.zeros((4, 2)), cfg, noise_rng(0, 0))
    with pytest.raises(ContractError):
        plan(prob, np.zeros(2), np.zeros((3, 2)), cfg)


def test_plan_degenerate_reports_sample():
    sys = SystemModel(
        n=2, m=1,
        drift=lambda x: np.broadcast_to([-1.0, 0.0], np.shape(x)).copy(),
        actuation=lambda x: np.broadcast_to([[0.0], [1.0]], np.shape(x)[:-1] + (2, 1)).copy(),
    )
    spec = BarrierSpec(1, lambda x: np.asarray(x)[..., :1], lambda x: np.broadcast_to([1.0, 0.0], np.shape(x)).copy())
    cbf = CompositeCbf([spec], rho=20.0, alpha_gain=1.0, gamma=1e24)
    prob = ControlProblem(sys, cbf, CostSpec(lambda x: np.zeros(np.shape(x)[:-1]), lambda x, v: np.zeros(np.shape(x)[:-1])))
    cfg = PlannerConfig(K=3, N=2, sigma=np.eye(1))
    with pytest.raises(DegenerateFilter) as info:
        plan(prob, np.array([0.0, 0.0]), np.zeros((2, 1)), cfg, noise_rng(0, 0))
    assert info.value.sample == 0
    passthrough = CompositeCbf([spec], rho=20.0, alpha_gain=1.0, gamma=1e24, on_degenerate="passthrough")
    res = plan(ControlProblem(sys, passthrough, prob.cost), np.zeros(2), np.zeros((2, 1)), cfg, noise_rng(0, 0))
    assert (res.batch.status == DEGENERATE).all()


def test_plan_marks_nonfinite_rollouts(caplog):
    def running(x, v):
        out = np.sum(np.asarray(v) ** 2, axis=-1)
        out[0] = np.nan
        return out

    prob = integrator_problem(running=running)
    cfg = PlannerConfig(K=4, N=2, sigma=np.eye(2))
    res = plan(prob, np.zeros(2), np.zeros((2, 2)), cfg, noise_rng(0, 0))
    assert res.batch.status[0] == NONFINITE and res.batch.weights[0] == 0.0
    assert res.batch.costs[0] == np.inf
    assert "non-finite" in caplog.text
