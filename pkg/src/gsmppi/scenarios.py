"""Unicycle ground robot among p-norm obstacles inside a p-norm wall.

State ``x = (qx, qy, nu, theta)``, control ``u = (acceleration, turn rate)``.
Obstacles and the wall have relative degree two; the speed bounds have
relative degree one.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .cbf import BarrierSpec, CompositeCbf, safe_set_membership
from .dynamics import ContractError, SystemModel
from .planner import ControlProblem, CostSpec, PlannerConfig


class ScenarioError(ContractError):
    """Scenario file is malformed or describes an unusable world."""


def _unicycle_drift(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[..., 0] = x[..., 2] * np.cos(x[..., 3])
    out[..., 1] = x[..., 2] * np.sin(x[..., 3])
    return out


_G = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _unicycle_actuation(x):
    return np.broadcast_to(_G, np.shape(x)[:-1] + (4, 2)).copy()


def unicycle_model() -> SystemModel:
    return SystemModel(n=4, m=2, drift=_unicycle_drift, actuation=_unicycle_actuation, name="unicycle")


@dataclass(frozen=True)
class ObstacleSpec:
    """Outside of ``|| (ax (qx - bx), ay (qy - by)) ||_p = c``."""

    ax: float
    ay: float
    bx: float
    by: float
    c: float
    p: float = 4.0
    alpha0: float = 2.5

    def __post_init__(self):
        if min(self.ax, self.ay, self.c) <= 0:
            raise ScenarioError(f"obstacle scales and offset must be positive: {self}")
        if not self.p > 1:
            raise ScenarioError(f"norm order must exceed 1, got {self.p}")


@dataclass(frozen=True)
class WallSpec:
    """Inside of ``|| (ax qx, ay qy) ||_p = c``."""

    ax: float
    ay: float
    c: float
    p: float = 4.0
    alpha0: float = 1.0

    def __post_init__(self):
        if min(self.ax, self.ay, self.c) <= 0:
            raise ScenarioError(f"wall scales and offset must be positive: {self}")
        if not self.p > 1:
            raise ScenarioError(f"norm order must exceed 1, got {self.p}")


def _pnorm_terms(x, ax, ay, bx, by, p):
    """p-norm of the scaled offset with its position gradient and Hessian.

    Returns ``r, G, H, valid`` where ``G`` is ``(..., 2)`` and ``H`` is
    ``(..., 2, 2)``; at ``r == 0`` the derivatives are set to NaN.
    """
    x = np.asarray(x, dtype=float)
    s = np.stack([ax * (x[..., 0] - bx), ay * (x[..., 1] - by)], axis=-1)
    a = np.array([ax, ay])
    abs_s = np.abs(s)
    r = np.sum(abs_s**p, axis=-1) ** (1.0 / p)
    valid = r > 0
    rs = np.where(valid, r, 1.0)
    g = np.sign(s) * abs_s ** (p - 1)                      # d(r^p)/ds / p
    dr_ds = g * rs[..., None] ** (1.0 - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = (p - 1) * abs_s ** (p - 2) * rs[..., None] ** (1.0 - p)
    H_s = np.zeros(s.shape + (2,))
    H_s[..., 0, 0] = diag[..., 0]
    H_s[..., 1, 1] = diag[..., 1]
    H_s -= (p - 1) * g[..., :, None] * g[..., None, :] * rs[..., None, None] ** (1.0 - 2 * p)
    G = dr_ds * a
    H = H_s * a[:, None] * a[None, :]
    G = np.where(valid[..., None], G, np.nan)
    H = np.where(valid[..., None, None], H, np.nan)
    return r, G, H, valid


def _pnorm_barrier(ax, ay, bx, by, c, p, gain, sign, name):
    def cascade(x):
        x = np.asarray(x, dtype=float)
        r, G, _, valid = _pnorm_terms(x, ax, ay, bx, by, p)
        b0 = sign * (r - c)
        heading = np.stack([np.cos(x[..., 3]), np.sin(x[..., 3])], axis=-1)
        lf = sign * x[..., 2] * np.einsum("...i,...i->...", np.where(valid[..., None], G, 0.0), heading)
        return np.stack([b0, lf + gain * b0], axis=-1)

    def terminal_gradient(x):
        x = np.asarray(x, dtype=float)
        _, G, H, _ = _pnorm_terms(x, ax, ay, bx, by, p)
        nu = x[..., 2]
        heading = np.stack([np.cos(x[..., 3]), np.sin(x[..., 3])], axis=-1)
        normal = np.stack([-np.sin(x[..., 3]), np.cos(x[..., 3])], axis=-1)
        out = np.empty(x.shape)
        out[..., 0:2] = sign * (nu[..., None] * np.einsum("...ij,...j->...i", H, heading) + gain * G)
        out[..., 2] = sign * np.einsum("...i,...i->...", G, heading)
        out[..., 3] = sign * nu * np.einsum("...i,...i->...", G, normal)
        return out

    return BarrierSpec(relative_degree=2, cascade=cascade, terminal_gradient=terminal_gradient, gains=(gain,), name=name)


def obstacle_barrier(spec: ObstacleSpec, gain: Optional[float] = None, name="obstacle") -> BarrierSpec:
    gain = spec.alpha0 if gain is None else gain
    return _pnorm_barrier(spec.ax, spec.ay, spec.bx, spec.by, spec.c, spec.p, gain, 1.0, name)


def wall_barrier(spec: WallSpec, gain: Optional[float] = None) -> BarrierSpec:
    gain = spec.alpha0 if gain is None else gain
    return _pnorm_barrier(spec.ax, spec.ay, 0.0, 0.0, spec.c, spec.p, gain, -1.0, "wall")


def speed_barriers(max_speed: float = 9.0, min_speed: float = -1.0):
    """``(max_speed - nu, nu - min_speed)``, both relative degree one."""
    if not max_speed > min_speed:
        raise ScenarioError(f"speed bounds are empty: [{min_speed}, {max_speed}]")
    down = np.array([0.0, 0.0, -1.0, 0.0])

    def upper(x):
        return max_speed - np.asarray(x, dtype=float)[..., 2:3]

    def lower(x):
        return np.asarray(x, dtype=float)[..., 2:3] - min_speed

    def grad(sign):
        return lambda x: np.broadcast_to(sign * down, np.shape(x)).copy()

    return (
        BarrierSpec(1, upper, grad(1.0), name="speed_max"),
        BarrierSpec(1, lower, grad(-1.0), name="speed_min"),
    )


@dataclass(frozen=True)
class GoalSpec:
    """Quadratic goal costs: terminal ``2|q-qd|^2``, running ``|q-qd|^2 + 0.05 |v|^2``."""

    qd: tuple
    phi_weight: float = 2.0
    run_weight: float = 1.0
    ctrl_weight: float = 0.05

    def cost_spec(self) -> CostSpec:
        qd = np.asarray(self.qd, dtype=float)
        wf, wr, wc = self.phi_weight, self.run_weight, self.ctrl_weight

        def terminal(x):
            d = np.asarray(x, dtype=float)[..., :2] - qd
            return wf * np.sum(d * d, axis=-1)

        def running(x, v):
            d = np.asarray(x, dtype=float)[..., :2] - qd
            v = np.asarray(v, dtype=float)
            return wr * np.sum(d * d, axis=-1) + wc * np.sum(v * v, axis=-1)

        return CostSpec(terminal=terminal, running=running)

    def distance(self, x) -> float:
        return float(np.hypot(x[0] - self.qd[0], x[1] - self.qd[1]))


@dataclass(frozen=True)
class SimConfig:
    """Executor timing. ``T`` total seconds, ``Ts`` planning period, ``dt`` inner step."""

    T: float = 20.0
    Ts: float = 0.1
    dt: float = 0.05
    stop_radius: Optional[float] = None

    def __post_init__(self):
        if not (0 < self.dt <= self.Ts <= self.T):
            raise ContractError(f"need 0 < dt <= Ts <= T, got dt={self.dt}, Ts={self.Ts}, T={self.T}")
        ratio = self.Ts / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ContractError(f"Ts={self.Ts} must be an integer multiple of dt={self.dt}")
        if self.stop_radius is not None and self.stop_radius <= 0:
            raise ContractError("stop_radius must be positive")

    @property
    def n_inner(self) -> int:
        return int(round(self.Ts / self.dt))

    @property
    def n_ticks(self) -> int:
        return int(round(self.T / self.Ts))


@dataclass(frozen=True)
class WorldTables:
    """Flat parameter arrays consumed by the compiled rollout kernel.

    ``pnorm`` rows are ``(ax, ay, bx, by, c, p, gain, sign)``; ``speed`` is
    ``(max, min)``.
    """

    pnorm: np.ndarray
    speed: np.ndarray


@dataclass
class Scenario:
    system: SystemModel
    cbf: CompositeCbf
    planner: PlannerConfig
    sim: SimConfig
    start: np.ndarray
    goals: list
    obstacles: list
    wall: WallSpec
    speed: tuple
    config: dict = field(repr=False, default_factory=dict)

    @property
    def tables(self) -> WorldTables:
        rows = [(o.ax, o.ay, o.bx, o.by, o.c, o.p, o.alpha0, 1.0) for o in self.obstacles]
        w = self.wall
        rows.append((w.ax, w.ay, 0.0, 0.0, w.c, w.p, w.alpha0, -1.0))
        return WorldTables(pnorm=np.array(rows, dtype=float), speed=np.array(self.speed, dtype=float))

    def goal(self, index=None, xy=None) -> GoalSpec:
        if xy is not None:
            return GoalSpec(qd=(float(xy[0]), float(xy[1])))
        if not 0 <= index < len(self.goals):
            raise ScenarioError(f"goal index {index} out of range 0..{len(self.goals) - 1}")
        return self.goals[index]

    def problem(self, goal: GoalSpec, cbf: Optional[CompositeCbf] = None) -> ControlProblem:
        cbf = self.cbf if cbf is None else cbf
        return ControlProblem(
            system=self.system,
            cbf=cbf,
            cost=goal.cost_spec(),
            world=self.tables,
            goal=goal,
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


SCHEMA = json.loads(resources.files(__package__).joinpath("data/scenario.schema.json").read_text())


def default_scenario_path() -> Path:
    return Path(str(resources.files(__package__).joinpath("data/paper.json")))


def build_scenario(config: dict) -> Scenario:
    """Validate a scenario dictionary against the schema and build all objects."""
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"invalid scenario: {exc.message} (at {list(exc.absolute_path)})") from exc
    config = copy.deepcopy(config)
    obstacles = [ObstacleSpec(**o) for o in config["obstacles"]]
    wall = WallSpec(**config["wall"])
    speed = (float(config["speed"]["max"]), float(config["speed"]["min"]))
    barriers = [obstacle_barrier(o, name=f"obstacle{i + 1}") for i, o in enumerate(obstacles)]
    barriers.append(wall_barrier(wall))
    barriers.extend(speed_barriers(*speed))
    c = config["cbf"]
    cbf = CompositeCbf(
        barriers=barriers,
        rho=c["rho"],
        alpha_gain=c["alpha"],
        gamma=c["gamma"],
        denom_eps=c.get("denom_eps", 1e-12),
    )
    pl = config["planner"]
    planner = PlannerConfig(
        K=pl["K"],
        N=pl["N"],
        lam=pl["lambda"],
        sigma=np.array(pl["sigma"], dtype=float),
        Ts=pl["Ts"],
        include_s_correction=pl.get("s_correction", False),
    )
    s = config["sim"]
    sim = SimConfig(T=s["T"], Ts=pl["Ts"], dt=s["dt"], stop_radius=s.get("stop_radius"))
    return Scenario(
        system=unicycle_model(),
        cbf=cbf,
        planner=planner,
        sim=sim,
        start=np.array(config["start"], dtype=float),
        goals=[GoalSpec(qd=tuple(map(float, g))) for g in config["goals"]],
        obstacles=obstacles,
        wall=wall,
        speed=speed,
        config=config,
    )


def load_scenario(path=None) -> Scenario:
    path = default_scenario_path() if path is None else Path(path)
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return build_scenario(config)


def paper_scenario() -> Scenario:
    """Ground-robot benchmark with the shipped default geometry."""
    sc = load_scenario()
    inside, _, _ = safe_set_membership(sc.cbf, sc.start)
    if not inside:
        raise ScenarioError("default start state is outside the certified safe set")
    return sc
