"""Receding-horizon executor: replan every ``Ts``, filter and integrate every ``dt``."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cbf import DegenerateFilter, safe_control, safe_set_membership, softmin
from .dynamics import ContractError, rk4_step
from .planner import AUDIT_SLACK, ControlProblem, PlannerConfig, PlanningFailed, noise_rng, plan, sample_noise
from .scenarios import SimConfig

log = logging.getLogger(__name__)

STEP_FIELDS = (
    "t", "qx", "qy", "nu", "theta", "v1", "v2", "u1", "u2",
    "h", "min_b", "min_h", "omega_at_v", "active",
)
TICK_FIELDS = ("t", "best_cost", "eta", "weight_entropy")
AUDIT_FIELDS = ("t", "states", "violations", "min_h", "min_cascade")


def step_fields(n: int, m: int) -> tuple:
    """Column names of a step row; the unicycle layout when ``(n, m) == (4, 2)``."""
    if (n, m) == (4, 2):
        return STEP_FIELDS
    return (
        ("t",) + tuple(f"x{i + 1}" for i in range(n)) + tuple(f"v{i + 1}" for i in range(m))
        + tuple(f"u{i + 1}" for i in range(m)) + STEP_FIELDS[9:]
    )


@dataclass
class TrajectoryLog:
    """Executor records.

    ``steps`` holds one row per inner step (state *before* the step, the held
    desired control, the applied safe control and barrier signals). ``ticks``
    holds one row per planning call. ``audit`` holds per-tick rollout safety
    counts when auditing is enabled.
    """

    fields: tuple = STEP_FIELDS
    steps: list = field(default_factory=list)
    ticks: list = field(default_factory=list)
    audit: list = field(default_factory=list)
    min_cascade: list = field(default_factory=list)
    rollouts: dict = field(default_factory=dict)
    final_state: Optional[np.ndarray] = None
    final_time: float = 0.0
    unsafe_states: int = 0

    def step_array(self) -> np.ndarray:
        return np.array(self.steps, dtype=float).reshape(-1, len(self.fields))

    def column(self, name) -> np.ndarray:
        return self.step_array()[:, self.fields.index(name)]

    def audit_summary(self) -> dict:
        a = np.array(self.audit, dtype=float).reshape(-1, len(AUDIT_FIELDS))
        return {
            "ticks": len(a),
            "states": int(a[:, 1].sum()),
            "violations": int(a[:, 2].sum()),
            "min_h": float(a[:, 3].min()) if len(a) else float("nan"),
            "min_cascade": float(a[:, 4].min()) if len(a) else float("nan"),
        }


def shift_mean(mu) -> np.ndarray:
    """Drop the first control, append a zero control at the end."""
    mu = np.asarray(mu, dtype=float)
    out = np.zeros_like(mu)
    out[:-1] = mu[1:]
    return out


def run(
    problem: ControlProblem,
    x0,
    planner: PlannerConfig,
    sim: SimConfig,
    seed: int = 0,
    *,
    mu0=None,
    workers: Optional[int] = None,
    backend: str = "auto",
    audit: bool = False,
    snapshot_ticks=(),
    noise_scale: float = 1.0,
) -> TrajectoryLog:
    """Closed-loop simulation from ``x0``.

    Planning tick ``i`` draws its noise from ``noise_rng(seed, i)``, so a run is
    fully determined by ``seed`` and the configuration. ``noise_scale=0`` turns
    the planner into a deterministic mean-sequence follower (test hook).

    On :class:`DegenerateFilter` or :class:`PlanningFailed` the exception is
    re-raised with the partial log attached as ``exc.partial_log``.
    """
    sys, cbf = problem.system, problem.cbf
    if abs(planner.Ts - sim.Ts) > 1e-12:
        raise ContractError(f"planner Ts={planner.Ts} differs from executor Ts={sim.Ts}")
    x = np.asarray(x0, dtype=float).copy()
    inside, casc, h0 = safe_set_membership(cbf, x)
    if not inside:
        raise ContractError(f"initial state {x} is outside the safe set (h={h0:.4g}, min cascade={casc:.4g})")
    mu = np.zeros((planner.N, planner.m)) if mu0 is None else np.array(mu0, dtype=float)
    goal = None if problem.goal is None else np.asarray(problem.goal.qd, dtype=float)
    snapshot_ticks = set(snapshot_ticks)
    out = TrajectoryLog(fields=step_fields(sys.n, sys.m))

    try:
        for tick in range(sim.n_ticks):
            t0 = tick * sim.Ts
            keep = tick in snapshot_ticks
            noise = None
            if noise_scale != 1.0:
                noise = noise_scale * sample_noise(noise_rng(seed, tick), planner)
            res = plan(
                problem, x, mu, planner, noise_rng(seed, tick), noise=noise,
                workers=workers, backend=backend, keep_trajectories=keep,
            )
            b = res.batch
            out.ticks.append((t0, float(b.costs[b.best_index]), b.eta, b.entropy))
            if audit:
                out.audit.append((
                    t0, planner.K * planner.N, int(b.violations.sum()),
                    float(b.min_h.min()), float(b.min_cascade.min()),
                ))
            if keep:
                out.rollouts[tick] = b.trajectories
            v = res.v
            for i in range(sim.n_inner):
                ev = cbf.evaluate(x)
                u, diag = safe_control(cbf, sys, x, v, ev=ev)
                out.steps.append((
                    t0 + i * sim.dt, *x, *v, *u, diag.h_value, float(ev.min_b), float(ev.min_h),
                    diag.omega_at_v, float(diag.constraint_active),
                ))
                out.min_cascade.append(float(ev.min_cascade))
                if diag.h_value < -AUDIT_SLACK or ev.min_cascade < -AUDIT_SLACK:
                    out.unsafe_states += 1
                x = rk4_step(sys, x, u, sim.dt)
            out.final_state = x
            out.final_time = (tick + 1) * sim.Ts
            mu = shift_mean(res.mu)
            if sim.stop_radius is not None and goal is not None:
                if np.hypot(*(x[:2] - goal)) <= sim.stop_radius:
                    log.info("goal reached at t=%.2f s", out.final_time)
                    break
    except (DegenerateFilter, PlanningFailed) as exc:
        exc.partial_log = out
        raise

    ev = cbf.evaluate(out.final_state)
    h_end = float(softmin(ev.terminal, cbf.rho))
    if h_end < -AUDIT_SLACK or ev.min_cascade < -AUDIT_SLACK:
        out.unsafe_states += 1
    if out.unsafe_states:
        log.warning("%d executed states left the safe set", out.unsafe_states)
    return out
