"""Compiled rollouts for the unicycle p-norm world.

Mirrors :func:`gsmppi.planner.rollouts_numpy` for problems built by
:mod:`gsmppi.scenarios`, fused into one loop per sample. Samples run in
parallel; every sample writes only its own output slots, so results do not
depend on the worker count.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit, prange

# status codes, kept in sync with planner
_OK, _DEGENERATE, _NONFINITE = 0, 1, 2


@njit(cache=True)
def _ipow(a, p):
    # a >= 0; integer orders avoid the libm pow call
    if p == 4.0:
        a2 = a * a
        return a2 * a2
    if p == 3.0:
        return a * a * a
    if p == 2.0:
        return a * a
    if p == 1.0:
        return a
    if p == 0.0:
        return 1.0
    return a**p


@njit(cache=True)
def world_eval(x, pn, speed, rho, term, gb, grad):
    """Composite barrier at one state.

    Fills ``grad`` with the composite gradient and returns
    ``(h, min_cascade, min_b, min_h)``. ``term`` (length ``rows + 2``) and
    ``gb`` (``rows + 2`` by 4) are scratch.
    """
    qx, qy, nu, th = x[0], x[1], x[2], x[3]
    c_, s_ = math.cos(th), math.sin(th)
    nrow = pn.shape[0]
    ell = nrow + 2
    min_casc = np.inf
    min_b = np.inf
    for i in range(nrow):
        ax, ay, bx, by, c, p, k, sg = pn[i, 0], pn[i, 1], pn[i, 2], pn[i, 3], pn[i, 4], pn[i, 5], pn[i, 6], pn[i, 7]
        s1 = ax * (qx - bx)
        s2 = ay * (qy - by)
        a1 = abs(s1)
        a2 = abs(s2)
        rp = _ipow(a1, p) + _ipow(a2, p)
        if rp > 0.0:
            if p == 4.0:
                r = math.sqrt(math.sqrt(rp))
            elif p == 2.0:
                r = math.sqrt(rp)
            else:
                r = rp ** (1.0 / p)
            rinv = r / rp                       # r^(1-p)
            g1 = math.copysign(_ipow(a1, p - 1.0), s1)
            g2 = math.copysign(_ipow(a2, p - 1.0), s2)
            G1 = ax * g1 * rinv
            G2 = ay * g2 * rinv
            w = (p - 1.0) * rinv
            r12 = rinv / rp                     # r^(1-2p)
            H11 = ax * ax * (w * _ipow(a1, p - 2.0) - (p - 1.0) * g1 * g1 * r12)
            H22 = ay * ay * (w * _ipow(a2, p - 2.0) - (p - 1.0) * g2 * g2 * r12)
            H12 = -ax * ay * (p - 1.0) * g1 * g2 * r12
        else:
            r = 0.0
            G1 = G2 = 0.0
            H11 = H22 = H12 = np.nan
        b0 = sg * (r - c)
        ge = G1 * c_ + G2 * s_
        b1 = sg * nu * ge + k * b0
        term[i] = b1
        if rp > 0.0:
            gb[i, 0] = sg * (nu * (H11 * c_ + H12 * s_) + k * G1)
            gb[i, 1] = sg * (nu * (H12 * c_ + H22 * s_) + k * G2)
            gb[i, 2] = sg * ge
            gb[i, 3] = sg * nu * (-G1 * s_ + G2 * c_)
        else:
            gb[i, 0] = gb[i, 1] = gb[i, 2] = gb[i, 3] = np.nan
        if b0 < min_casc:
            min_casc = b0
        if b0 < min_b:
            min_b = b0
        if b1 < min_b:
            min_b = b1
    # speed bounds: relative degree one, cascade is the constraint itself
    hu = speed[0] - nu
    hl = nu - speed[1]
    term[nrow] = hu
    term[nrow + 1] = hl
    for j in range(4):
        gb[nrow, j] = 0.0
        gb[nrow + 1, j] = 0.0
    gb[nrow, 2] = -1.0
    gb[nrow + 1, 2] = 1.0
    for v in (hu, hl):
        if v < min_casc:
            min_casc = v
        if v < min_b:
            min_b = v
    # every constraint here has d <= 2, so the guarded cascade entries are
    # exactly the raw constraints
    min_h = min_casc
    # soft minimum with the minimum factored out
    zmin = np.inf
    for i in range(ell):
        if term[i] < zmin:
            zmin = term[i]
    tot = 0.0
    for i in range(ell):
        e = math.exp(-rho * (term[i] - zmin))
        term[i] = e
        tot += e
    h = zmin - math.log(tot) / rho
    for j in range(4):
        grad[j] = 0.0
    for i in range(ell):
        wi = term[i] / tot
        for j in range(4):
            grad[j] += wi * gb[i, j]
    return h, min_casc, min_b, min_h


@njit(cache=True)
def world_filter(x, v, pn, speed, rho, alpha, gamma, eps, enabled, term, gb, grad, u):
    """Closed-form safe control at one state; writes ``u``.

    Returns ``(h, omega_at_v, denominator, active, degenerate, min_cascade)``.
    """
    h, min_casc, _, _ = world_eval(x, pn, speed, rho, term, gb, grad)
    nu, th = x[2], x[3]
    lf = grad[0] * nu * math.cos(th) + grad[1] * nu * math.sin(th)
    l1 = grad[2]
    l2 = grad[3]
    w0 = lf + l1 * v[0] + l2 * v[1] + alpha * h
    denom = l1 * l1 + l2 * l2 + h * h / gamma
    u[0] = v[0]
    u[1] = v[1]
    active = enabled and w0 < 0.0
    degenerate = not math.isfinite(w0)
    if active:
        if not (denom >= eps) or denom == 0.0:
            degenerate = True
        else:
            s = -w0 / denom
            u[0] = v[0] + l1 * s
            u[1] = v[1] + l2 * s
    return h, w0, denom, active, degenerate, min_casc


@njit(parallel=True, cache=True)
def _rollouts(x0, mu, eps, Ts, pn, speed, rho, alpha, gamma, denom_eps, enabled,
              qd, wf, wr, wc, slack, keep, costs, status, min_h, min_c, viol, traj):
    K = eps.shape[0]
    N = eps.shape[1]
    ell = pn.shape[0] + 2
    for j in prange(K):
        x = x0.copy()
        v = np.empty(2)
        u = np.empty(2)
        term = np.empty(ell)
        gb = np.empty((ell, 4))
        grad = np.empty(4)
        J = 0.0
        st = _OK
        mh = np.inf
        mc = np.inf
        nv = 0
        if keep:
            for i in range(4):
                traj[j, 0, i] = x[i]
        for k in range(N):
            v[0] = mu[k, 0] + eps[j, k, 0]
            v[1] = mu[k, 1] + eps[j, k, 1]
            dx = x[0] - qd[0]
            dy = x[1] - qd[1]
            J += wr * (dx * dx + dy * dy) + wc * (v[0] * v[0] + v[1] * v[1])
            h, _, _, _, degenerate, casc = world_filter(
                x, v, pn, speed, rho, alpha, gamma, denom_eps, enabled, term, gb, grad, u
            )
            if k > 0:
                mh = min(mh, h)
                mc = min(mc, casc)
                if h < -slack or casc < -slack:
                    nv += 1
            if degenerate and st == _OK:
                st = _DEGENERATE
            nu = x[2]
            th = x[3]
            x[0] += Ts * nu * math.cos(th)
            x[1] += Ts * nu * math.sin(th)
            x[2] += Ts * u[0]
            x[3] += Ts * u[1]
            if keep:
                for i in range(4):
                    traj[j, k + 1, i] = x[i]
        h, casc, _, _ = world_eval(x, pn, speed, rho, term, gb, grad)
        mh = min(mh, h)
        mc = min(mc, casc)
        if h < -slack or casc < -slack:
            nv += 1
        dx = x[0] - qd[0]
        dy = x[1] - qd[1]
        J += wf * (dx * dx + dy * dy)
        if not math.isfinite(J) and st == _OK:
            st = _NONFINITE
        costs[j] = J
        status[j] = st
        min_h[j] = mh
        min_c[j] = mc
        viol[j] = nv


def rollouts_compiled(problem, x0, mu, eps, Ts, keep=False, workers=None):
    """Same outputs as :func:`gsmppi.planner.rollouts_numpy`."""
    from .planner import AUDIT_SLACK

    cbf, world, goal = problem.cbf, problem.world, problem.goal
    K, N, _ = eps.shape
    costs = np.empty(K)
    status = np.empty(K, dtype=np.int64)
    min_h = np.empty(K)
    min_c = np.empty(K)
    viol = np.empty(K, dtype=np.int64)
    traj = np.empty((K, N + 1, 4)) if keep else np.empty((1, 1, 4))
    prev = _accel.set_workers(workers)
    try:
        _rollouts(
            np.ascontiguousarray(x0, dtype=float), np.ascontiguousarray(mu), np.ascontiguousarray(eps),
            float(Ts), world.pnorm, world.speed, float(cbf.rho), float(cbf.alpha_gain), float(cbf.gamma),
            float(cbf.denom_eps), not cbf.disabled, np.asarray(goal.qd, dtype=float),
            float(goal.phi_weight), float(goal.run_weight), float(goal.ctrl_weight), AUDIT_SLACK, keep,
            costs, status, min_h, min_c, viol, traj,
        )
    finally:
        if prev is not None:
            _accel.set_workers(prev)
    return costs, status, min_h, min_c, viol, traj if keep else None
