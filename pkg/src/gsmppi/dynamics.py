"""Control-affine systems ``xdot = f(x) + g(x) u`` and their integrators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ContractError(ValueError):
    """Input violates a documented precondition (shape, finiteness, sign)."""


class IntegrationError(ArithmeticError):
    """An integrator produced a non-finite state."""

    def __init__(self, message, stage=None, state=None):
        super().__init__(message)
        self.stage = stage
        self.state = state


def as_finite_vector(x, length, name="x"):
    x = np.asarray(x, dtype=float)
    if x.shape != (length,):
        raise ContractError(f"{name} must have shape ({length},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{name} has non-finite entries: {x}")
    return x


@dataclass(frozen=True)
class SystemModel:
    """Control-affine dynamics.

    ``drift`` and ``actuation`` must broadcast over leading axes: a state batch
    of shape ``(..., n)`` maps to ``(..., n)`` and ``(..., n, m)``. This lets the
    planner evaluate all rollouts of a step in one call.
    """

    n: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    actuation: Callable[[np.ndarray], np.ndarray]
    name: str = "system"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ContractError(f"dimensions must be positive, got n={self.n}, m={self.m}")
        # Shapes are checked once here rather than on every call.
        probe = np.zeros(self.n)
        f = np.asarray(self.drift(probe))
        g = np.asarray(self.actuation(probe))
        if f.shape != (self.n,):
            raise ContractError(f"drift returns shape {f.shape}, expected ({self.n},)")
        if g.shape != (self.n, self.m):
            raise ContractError(f"actuation returns shape {g.shape}, expected ({self.n}, {self.m})")
        batch = np.zeros((3, self.n))
        if np.shape(self.drift(batch)) != (3, self.n) or np.shape(self.actuation(batch)) != (3, self.n, self.m):
            raise ContractError("drift/actuation must broadcast over leading batch axes")


def eval_vector_field(sys: SystemModel, x, u) -> np.ndarray:
    """Return ``f(x) + g(x) u``. Works on single states or ``(..., n)`` batches."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1:] != (sys.n,) or u.shape[-1:] != (sys.m,):
        raise ContractError(
            f"expected state (..., {sys.n}) and control (..., {sys.m}), got {x.shape} and {u.shape}"
        )
    return sys.drift(x) + np.einsum("...ij,...j->...i", sys.actuation(x), u)


def euler_step(sys: SystemModel, x, u, dt: float) -> np.ndarray:
    return np.asarray(x, dtype=float) + dt * eval_vector_field(sys, x, u)


def rk4_step(sys: SystemModel, x, u, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step with ``u`` held over ``[0, dt]``."""
    if dt < 0:
        raise ContractError(f"dt must be non-negative, got {dt}")
    x = np.asarray(x, dtype=float)
    if dt == 0:
        return x.copy()
    k1 = eval_vector_field(sys, x, u)
    k2 = eval_vector_field(sys, x + 0.5 * dt * k1, u)
    k3 = eval_vector_field(sys, x + 0.5 * dt * k2, u)
    k4 = eval_vector_field(sys, x + dt * k3, u)
    for stage, k in enumerate((k1, k2, k3, k4), start=1):
        if not np.all(np.isfinite(k)):
            raise IntegrationError(f"non-finite derivative at RK4 stage {stage}", stage=stage, state=x)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after RK4 step", stage=5, state=x)
    return out


def integrator_model(n: int) -> SystemModel:
    """``xdot = u`` with ``m = n``; handy for tests and sanity checks."""
    eye = np.eye(n)
    return SystemModel(
        n=n,
        m=n,
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        actuation=lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (n, n)).copy(),
        name=f"integrator{n}",
    )


def linear_model(A, B) -> SystemModel:
    """``xdot = A x + B u``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = B.shape
    return SystemModel(
        n=n,
        m=m,
        drift=lambda x: np.asarray(x, dtype=float) @ A.T,
        actuation=lambda x: np.broadcast_to(B, np.shape(x)[:-1] + (n, m)).copy(),
        name="linear",
    )
