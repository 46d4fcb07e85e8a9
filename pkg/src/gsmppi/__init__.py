"""Sampling-based predictive control whose every rollout is passed through a
closed-form composite barrier safety filter."""
from .cbf import (
    BarrierSpec,
    CompositeCbf,
    DegenerateFilter,
    FilterDiagnostics,
    omega,
    safe_control,
    safe_control_batch,
    safe_set_membership,
    softmin,
    softmin_weights,
)
from .dynamics import ContractError, IntegrationError, SystemModel, euler_step, rk4_step
from .loop import TrajectoryLog, run, shift_mean
from .planner import (
    ControlProblem,
    CostSpec,
    PlannerConfig,
    PlanningFailed,
    PlanResult,
    RolloutBatch,
    importance_weights,
    noise_rng,
    plan,
    rollout,
    update_mean,
)
from .scenarios import GoalSpec, Scenario, ScenarioError, SimConfig, build_scenario, load_scenario, paper_scenario

__version__ = "0.1.0"
