"""Sampling planner over the filtered (always-safe) discrete dynamics.

Every sampled desired control passes through the safety filter before the
Euler step, so each rollout stays in the certified safe set and the
importance weights only ever compare safe trajectories.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from . import _accel
from .cbf import CompositeCbf, DegenerateFilter, safe_control, safe_control_batch, softmin
from .dynamics import ContractError, SystemModel

log = logging.getLogger(__name__)

AUDIT_SLACK = 1e-6

# rollout status codes
OK, DEGENERATE, NONFINITE = 0, 1, 2


class PlanningFailed(RuntimeError):
    """No rollout of a planning tick produced a finite cost."""


@dataclass(frozen=True)
class PlannerConfig:
    K: int = 1000
    N: int = 20
    lam: float = 1.0
    sigma: Any = ((1.33, 0.0), (0.0, 0.33))
    Ts: float = 0.1
    include_s_correction: bool = False

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if self.K < 1 or self.N < 1:
            raise ContractError(f"K and N must be >= 1, got K={self.K}, N={self.N}")
        if not self.lam > 0:
            raise ContractError(f"temperature must be positive, got {self.lam}")
        if not self.Ts > 0:
            raise ContractError(f"Ts must be positive, got {self.Ts}")
        if sigma.shape[0] != sigma.shape[1] or not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
            raise ContractError("noise covariance must be a symmetric square matrix")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ContractError("noise covariance must be positive definite") from exc
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "sigma_inv", np.linalg.inv(sigma))

    @property
    def m(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class CostSpec:
    """``terminal(x)`` and ``running(x, v)``; both must broadcast over a leading batch axis."""

    terminal: Callable
    running: Callable


@dataclass(frozen=True)
class ControlProblem:
    """System, composite barrier and cost, plus optional tables for the compiled kernel."""

    system: SystemModel
    cbf: CompositeCbf
    cost: CostSpec
    world: Any = None
    goal: Any = None


class RolloutBatch(NamedTuple):
    noises: np.ndarray        # (K, N, m)
    costs: np.ndarray         # (K,) the costs that were weighted
    weights: np.ndarray       # (K,)
    best_index: int
    eta: float
    status: np.ndarray        # (K,) OK / DEGENERATE / NONFINITE
    min_h: np.ndarray         # (K,) over x_1..x_N
    min_cascade: np.ndarray   # (K,)
    violations: np.ndarray    # (K,) states with h or cascade below -AUDIT_SLACK
    trajectories: Optional[np.ndarray] = None  # (K, N+1, n)

    @property
    def entropy(self) -> float:
        return weight_entropy(self.weights)


class PlanResult(NamedTuple):
    mu: np.ndarray
    v: np.ndarray
    batch: RolloutBatch


def noise_rng(seed: int, tick: int) -> np.random.Generator:
    """Counter-based stream for one planning tick: Philox keyed on ``(seed, tick)``."""
    key = (int(seed) % 2**64) << 64 | (int(tick) % 2**64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_noise(rng: np.random.Generator, config: PlannerConfig, K: Optional[int] = None) -> np.ndarray:
    """``(K, N, m)`` noise with ``eps = L z``, ``L L^T = Sigma``.

    Samples are drawn in sample-major order, so sample ``j`` of a given stream
    never depends on how rollouts are later split across workers.
    """
    K = config.K if K is None else K
    z = rng.standard_normal((K, config.N, config.m))
    return z @ config.chol.T


def rollout(sys: SystemModel, cbf: CompositeCbf, cost: CostSpec, x0, M, E, config: PlannerConfig):
    """Reference single rollout, one state at a time.

    Returns ``(J, states)`` with ``states`` of shape ``(N+1, n)``. Running cost
    accumulates from ``k = 0``.
    """
    x = np.asarray(x0, dtype=float)
    M = np.asarray(M, dtype=float)
    E = np.asarray(E, dtype=float)
    states = [x]
    J = 0.0
    for k in range(M.shape[0]):
        v = M[k] + E[k]
        J += float(cost.running(x, v))
        u, _ = safe_control(cbf, sys, x, v)
        x = x + config.Ts * (sys.drift(x) + sys.actuation(x) @ u)
        states.append(x)
    J += float(cost.terminal(x))
    return J, np.array(states)


def rollouts_numpy(problem: ControlProblem, x0, mu, eps, Ts, keep=False):
    """All K rollouts at once, vectorised over samples. Works for any problem."""
    sys, cbf, cost = problem.system, problem.cbf, problem.cost
    K, N, _ = eps.shape
    X = np.broadcast_to(np.asarray(x0, dtype=float), (K, sys.n)).copy()
    costs = np.zeros(K)
    status = np.zeros(K, dtype=np.int64)
    min_h = np.full(K, np.inf)
    min_c = np.full(K, np.inf)
    viol = np.zeros(K, dtype=np.int64)
    traj = np.empty((K, N + 1, sys.n)) if keep else None
    if keep:
        traj[:, 0] = X
    for k in range(N):
        V = mu[k] + eps[:, k]
        costs += cost.running(X, V)
        res = safe_control_batch(cbf, sys, X, V)
        if k > 0:
            _audit(res.h, res.min_cascade, min_h, min_c, viol)
        status[res.degenerate & (status == OK)] = DEGENERATE
        X = X + Ts * (sys.drift(X) + np.einsum("knm,km->kn", sys.actuation(X), res.u))
        if keep:
            traj[:, k + 1] = X
    ev = cbf.evaluate(X)
    _audit(softmin(ev.terminal, cbf.rho), ev.min_cascade, min_h, min_c, viol)
    costs += cost.terminal(X)
    return costs, status, min_h, min_c, viol, traj


def _audit(h, casc, min_h, min_c, viol):
    np.minimum(min_h, h, out=min_h)
    np.minimum(min_c, casc, out=min_c)
    viol += (h < -AUDIT_SLACK) | (casc < -AUDIT_SLACK)


def importance_weights(costs, lam: float):
    """Baseline-shifted exponential weights.

    Returns ``(weights, eta, best_index)``. Non-finite costs get zero weight;
    ties in the minimum resolve to the smallest index.
    """
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        raise PlanningFailed("every rollout produced a non-finite cost")
    xi = costs[finite].min()
    best = int(np.flatnonzero(costs == xi)[0])
    e = np.zeros_like(costs)
    e[finite] = np.exp(-(costs[finite] - xi) / lam)
    eta = float(e.sum())
    return e / eta, eta, best


def weight_entropy(weights) -> float:
    w = np.asarray(weights)
    nz = w[w > 0]
    return float(-(nz * np.log(nz)).sum())


def update_mean(mu, noises, weights) -> np.ndarray:
    """``mu_k + sum_j w_j eps_k^(j)`` summed in sample order."""
    return np.asarray(mu, dtype=float) + np.tensordot(weights, noises, axes=(0, 0))


def s_cost_correction(mu, eps, config: PlannerConfig):
    """``(lam/2) sum_k mu_k^T Sigma^-1 (mu_k + 2 eps_k)``; ``eps`` may carry a leading sample axis."""
    mu = np.asarray(mu, dtype=float)
    eps = np.asarray(eps, dtype=float)
    a = mu @ config.sigma_inv
    return 0.5 * config.lam * np.einsum("km,...km->...", a, mu + 2.0 * eps)


def _use_compiled(problem: ControlProblem, backend: str) -> bool:
    if backend == "numpy":
        return False
    ready = problem.world is not None and problem.goal is not None
    if backend == "numba":
        if not (_accel.NUMBA_AVAILABLE and ready):
            raise ContractError("compiled backend needs numba and a tabulated world")
        return True
    return _accel.NUMBA_AVAILABLE and ready


def plan(
    problem: ControlProblem,
    x0,
    mu,
    config: PlannerConfig,
    rng: Optional[np.random.Generator] = None,
    *,
    noise=None,
    workers: Optional[int] = None,
    backend: str = "auto",
    keep_trajectories: bool = False,
) -> PlanResult:
    """One planning tick.

    Runs K filtered rollouts around ``mu``, reweights them and returns the
    updated mean together with ``mu_0 + eps_0`` of the cheapest rollout (taken
    from the mean *before* the update). ``noise`` overrides sampling.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (config.N, config.m):
        raise ContractError(f"mean sequence must have shape ({config.N}, {config.m}), got {mu.shape}")
    if noise is None:
        if rng is None:
            raise ContractError("need either an rng or explicit noise")
        noise = sample_noise(rng, config)
    noise = np.asarray(noise, dtype=float)

    if _use_compiled(problem, backend):
        from .kernels import rollouts_compiled

        out = rollouts_compiled(problem, x0, mu, noise, config.Ts, keep=keep_trajectories, workers=workers)
    else:
        out = rollouts_numpy(problem, x0, mu, noise, config.Ts, keep=keep_trajectories)
    costs, status, min_h, min_c, viol, traj = out

    bad = np.flatnonzero(status == DEGENERATE)
    if bad.size and problem.cbf.on_degenerate == "raise":
        raise DegenerateFilter(f"degenerate safety filter in rollout {bad[0]}", sample=int(bad[0]))
    nonfinite = ~np.isfinite(costs)
    if nonfinite.any():
        log.warning("%d rollouts with non-finite cost excluded from weighting", int(nonfinite.sum()))
        status = np.where(nonfinite & (status == OK), NONFINITE, status)
        costs = np.where(nonfinite, np.inf, costs)

    weighted = costs
    if config.include_s_correction:
        weighted = costs + s_cost_correction(mu, noise, config)
    weights, eta, _ = importance_weights(weighted, config.lam)
    _, _, best = importance_weights(costs, config.lam)
    batch = RolloutBatch(noise, weighted, weights, best, eta, status, min_h, min_c, viol, traj)
    return PlanResult(update_mean(mu, noise, weights), mu[0] + noise[best, 0], batch)
