"""Composite soft-minimum barrier and the closed-form minimum-intervention filter.

Each constraint contributes a cascade ``b_0 = h, b_{i+1} = L_f b_i + c_i b_i``
whose last entry has relative degree one. The terminal entries are merged with
a log-sum-exp soft minimum into a single barrier ``h``, and a desired control
``v`` is corrected by the explicit solution of the one-constraint QP

    min  1/2 |u - v|^2 + gamma/2 mu^2   s.t.  L_f h + L_g h u + alpha(h) + mu h >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .dynamics import ContractError, SystemModel, as_finite_vector


class DegenerateFilter(ArithmeticError):
    """The filter must intervene but ``L_g h L_g h^T + h^2/gamma`` is (numerically) zero."""

    def __init__(self, message, state=None, diagnostics=None, sample=None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics
        self.sample = sample


def softmin(values, rho: float):
    """Log-sum-exp soft minimum ``-(1/rho) log sum exp(-rho z)`` along the last axis.

    The minimum is factored out before exponentiating, so the result stays
    finite for any finite input and always satisfies
    ``min(z) - log(len(z))/rho <= softmin(z) <= min(z)``.
    """
    z = np.asarray(values, dtype=float)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ContractError("softmin needs at least one value")
    if rho <= 0:
        raise ContractError(f"rho must be positive, got {rho}")
    zmin = z.min(axis=-1)
    s = np.exp(-rho * (z - zmin[..., None])).sum(axis=-1)
    return zmin - np.log(s) / rho


def softmin_weights(values, rho: float) -> np.ndarray:
    """Gradient of :func:`softmin` w.r.t. its inputs, i.e. ``softmax(-rho z)``."""
    z = np.asarray(values, dtype=float)
    e = np.exp(-rho * (z - z.min(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class BarrierSpec:
    """One constraint together with its barrier cascade.

    Parameters
    ----------
    relative_degree
        Relative degree ``d`` of the constraint.
    cascade
        ``x -> (b_0, ..., b_{d-1})``; batched, ``(..., n) -> (..., d)``.
    terminal_gradient
        ``x -> grad b_{d-1}(x)``; batched, ``(..., n) -> (..., n)``.
    gains
        Slopes ``c_i > 0`` of the linear class-K functions used in the cascade,
        one per ``i = 0 .. d-2``.
    """

    relative_degree: int
    cascade: Callable[[np.ndarray], np.ndarray]
    terminal_gradient: Callable[[np.ndarray], np.ndarray]
    gains: tuple = ()
    name: str = "barrier"

    def __post_init__(self):
        if self.relative_degree < 1:
            raise ContractError(f"relative degree must be >= 1, got {self.relative_degree}")
        if len(self.gains) != self.relative_degree - 1:
            raise ContractError(
                f"{self.name}: need {self.relative_degree - 1} class-K gains, got {len(self.gains)}"
            )
        if any(not c > 0 for c in self.gains):
            raise ContractError(f"{self.name}: class-K gains must be positive, got {self.gains}")


class FilterDiagnostics(NamedTuple):
    h_value: float
    omega_at_v: float
    correction_norm: float
    denominator: float
    constraint_active: bool


class BarrierEval(NamedTuple):
    """Everything the filter and the safety audit need at a (batch of) state(s)."""

    terminal: np.ndarray      # (..., l) last cascade entries
    gradients: np.ndarray     # (..., l, n)
    min_cascade: np.ndarray   # (...,) min b_{j,i} over i <= max(d_j - 2, 0)
    min_b: np.ndarray         # (...,) min over every cascade entry
    min_h: np.ndarray         # (...,) min raw constraint h_j


@dataclass(frozen=True)
class CompositeCbf:
    """Soft-minimum composite of several barrier cascades plus filter settings.

    ``on_degenerate="passthrough"`` returns ``v`` unchanged instead of raising
    :class:`DegenerateFilter`.
    """

    barriers: Sequence[BarrierSpec]
    rho: float
    alpha_gain: float
    gamma: float
    denom_eps: float = 1e-12
    on_degenerate: str = "raise"
    # test hook: skip the correction entirely (negative control for audits)
    disabled: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "barriers", tuple(self.barriers))
        if not self.barriers:
            raise ContractError("composite barrier needs at least one constraint")
        if not self.rho > 0:
            raise ContractError(f"rho must be positive, got {self.rho}")
        if not self.gamma > 0:
            raise ContractError(f"gamma must be positive, got {self.gamma}")
        if self.alpha_gain < 0:
            raise ContractError(f"alpha gain must be non-negative, got {self.alpha_gain}")
        if self.denom_eps < 0:
            raise ContractError("denom_eps must be non-negative")
        if self.on_degenerate not in ("raise", "passthrough"):
            raise ContractError(f"unknown on_degenerate mode {self.on_degenerate!r}")

    @property
    def size(self) -> int:
        return len(self.barriers)

    def evaluate(self, x) -> BarrierEval:
        x = np.asarray(x, dtype=float)
        terminal, grads, guard, all_b, raw = [], [], [], [], []
        for spec in self.barriers:
            b = np.asarray(spec.cascade(x), dtype=float)
            d = spec.relative_degree
            terminal.append(b[..., d - 1])
            grads.append(np.asarray(spec.terminal_gradient(x), dtype=float))
            guard.append(b[..., : max(d - 1, 1)].min(axis=-1))
            all_b.append(b.min(axis=-1))
            raw.append(b[..., 0])
        return BarrierEval(
            terminal=np.stack(terminal, axis=-1),
            gradients=np.stack(grads, axis=-2),
            min_cascade=np.min(np.stack(guard, axis=-1), axis=-1),
            min_b=np.min(np.stack(all_b, axis=-1), axis=-1),
            min_h=np.min(np.stack(raw, axis=-1), axis=-1),
        )

    def value_and_gradient(self, x, ev: BarrierEval | None = None):
        ev = self.evaluate(x) if ev is None else ev
        h = softmin(ev.terminal, self.rho)
        w = softmin_weights(ev.terminal, self.rho)
        grad = np.einsum("...l,...ln->...n", w, ev.gradients)
        return h, grad


def composite_value_and_gradient(cbf: CompositeCbf, x):
    """Return ``(h(x), grad h(x))`` with the softmax-weighted chain rule."""
    h, grad = cbf.value_and_gradient(x)
    if np.ndim(h) == 0:
        return float(h), grad
    return h, grad


def _lie_terms(cbf, sys, x, ev=None):
    h, grad = cbf.value_and_gradient(x, ev)
    lf = np.einsum("...n,...n->...", grad, sys.drift(x))
    lg = np.einsum("...n,...nm->...m", grad, sys.actuation(x))
    return h, lf, lg


def omega(cbf: CompositeCbf, sys: SystemModel, x, u, mu: float = 0.0):
    """Relaxed barrier constraint ``L_f h + L_g h u + alpha(h) + mu h``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != sys.n or u.shape[-1] != sys.m:
        raise ContractError(f"state/control dims {x.shape}/{u.shape} do not match system ({sys.n}, {sys.m})")
    h, lf, lg = _lie_terms(cbf, sys, x)
    out = lf + np.einsum("...m,...m->...", lg, u) + cbf.alpha_gain * h + mu * h
    return float(out) if np.ndim(out) == 0 else out


def safe_control(cbf: CompositeCbf, sys: SystemModel, x, v, ev: BarrierEval | None = None):
    """Minimum-intervention safe control for a single state.

    Returns ``(u_star, FilterDiagnostics)``. ``u_star == v`` whenever
    ``omega(x, v, 0) >= 0``.
    """
    x = as_finite_vector(x, sys.n, "x")
    v = as_finite_vector(v, sys.m, "v")
    h, lf, lg = _lie_terms(cbf, sys, x, ev)
    h = float(h)
    w0 = float(lf + lg @ v + cbf.alpha_gain * h)
    denom = float(lg @ lg + h * h / cbf.gamma)
    if not (w0 < 0) or cbf.disabled:
        if not np.isfinite(w0):
            raise DegenerateFilter("barrier gradient undefined at this state", state=x)
        return v.copy(), FilterDiagnostics(h, w0, 0.0, denom, False)
    if not denom >= cbf.denom_eps or denom == 0.0:
        diag = FilterDiagnostics(h, w0, float("nan"), denom, True)
        if cbf.on_degenerate == "passthrough":
            return v.copy(), diag
        raise DegenerateFilter(
            f"filter active (omega={w0:.3g}) but denominator {denom:.3g} < {cbf.denom_eps:.3g}",
            state=x,
            diagnostics=diag,
        )
    du = lg * (-w0 / denom)
    return v + du, FilterDiagnostics(h, w0, float(np.linalg.norm(du)), denom, True)


def slack_at_solution(cbf: CompositeCbf, sys: SystemModel, x, v) -> float:
    """Optimal slack ``mu*`` paired with :func:`safe_control`'s output."""
    h, lf, lg = _lie_terms(cbf, sys, np.asarray(x, dtype=float))
    w0 = float(lf + lg @ np.asarray(v, dtype=float) + cbf.alpha_gain * h)
    denom = float(lg @ lg + h * h / cbf.gamma)
    return float(h / cbf.gamma * max(0.0, -w0) / denom)


class BatchFilterResult(NamedTuple):
    u: np.ndarray
    h: np.ndarray
    omega_at_v: np.ndarray
    denominator: np.ndarray
    active: np.ndarray
    degenerate: np.ndarray
    min_cascade: np.ndarray


def safe_control_batch(cbf: CompositeCbf, sys: SystemModel, X, V) -> BatchFilterResult:
    """Vectorised :func:`safe_control` over a ``(K, n)`` state batch.

    Degenerate rows are flagged rather than raised; their control is left at
    ``v`` so the caller decides what to do with them.
    """
    ev = cbf.evaluate(X)
    h, lf, lg = _lie_terms(cbf, sys, X, ev)
    w0 = lf + np.einsum("km,km->k", lg, V) + cbf.alpha_gain * h
    denom = np.einsum("km,km->k", lg, lg) + h * h / cbf.gamma
    active = w0 < 0
    if cbf.disabled:
        active = np.zeros_like(active)
    degenerate = (active & ~(denom >= cbf.denom_eps)) | (active & (denom == 0.0)) | ~np.isfinite(w0)
    ok = active & ~degenerate
    scale = np.where(ok, -w0 / np.where(ok, denom, 1.0), 0.0)
    U = V + lg * scale[:, None]
    return BatchFilterResult(U, h, w0, denom, active, degenerate, ev.min_cascade)


def safe_set_membership(cbf: CompositeCbf, x, slack: float = 0.0):
    """Membership in ``{h >= 0} intersected with {b_{j,i} >= 0, i <= max(d_j-2, 0)}``.

    Returns ``(inside, min_cascade, h)``; ``slack`` loosens both thresholds to
    ``-slack``.
    """
    ev = cbf.evaluate(x)
    h = softmin(ev.terminal, cbf.rho)
    inside = (h >= -slack) & (ev.min_cascade >= -slack)
    if np.ndim(h) == 0:
        return bool(inside), float(ev.min_cascade), float(h)
    return inside, ev.min_cascade, h


def finite_difference_gradient(func, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function; for cross-checking analytic gradients."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (func(x + e) - func(x - e)) / (2 * step)
    return grad
