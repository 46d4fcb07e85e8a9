"""CSV and SVG writers for simulation logs."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .loop import TICK_FIELDS, TrajectoryLog


def _fmt(value) -> str:
    # repr-free, locale-independent, round-trippable
    return "%.17g" % value


def _header(meta: dict) -> str:
    return "# gsmppi " + " ".join(f"{k}={v}" for k, v in meta.items())


def write_csv(path, fields, rows, meta: dict, int_fields=()):
    path = Path(path)
    ints = {fields.index(f) for f in int_fields}
    lines = [_header(meta), ",".join(fields)]
    for row in rows:
        lines.append(",".join(str(int(v)) if i in ints else _fmt(v) for i, v in enumerate(row)))
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_trajectory_csv(path, log: TrajectoryLog, meta: dict):
    return write_csv(path, log.fields, log.steps, meta, int_fields=("active",))


def write_planner_csv(path, log: TrajectoryLog, meta: dict):
    return write_csv(path, TICK_FIELDS, log.ticks, meta)


def write_audit(path, log: TrajectoryLog, meta: dict):
    summary = dict(meta)
    summary.update(log.audit_summary())
    summary["slack"] = 1e-6
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def read_csv(path):
    """Read a CSV written by :func:`write_csv` back into ``(fields, array)``."""
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    fields = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(fields))
    return fields, data


def superellipse(ax, ay, bx, by, c, p, n=128):
    """``n`` points on ``|| (ax (x - bx), ay (y - by)) ||_p = c``."""
    phi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    cx, sy = np.cos(phi), np.sin(phi)
    x = bx + c / ax * np.sign(cx) * np.abs(cx) ** (2.0 / p)
    y = by + c / ay * np.sign(sy) * np.abs(sy) ** (2.0 / p)
    return np.stack([x, y], axis=1)


class _Canvas:
    def __init__(self, width, height, xlim, ylim, margin=30):
        self.w, self.h, self.xlim, self.ylim, self.m = width, height, xlim, ylim, margin
        self.items = []

    def pt(self, x, y):
        sx = self.m + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * (self.w - 2 * self.m)
        sy = self.h - self.m - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * (self.h - 2 * self.m)
        return sx, sy

    def poly(self, pts, closed=False, **style):
        coords = " ".join("%.2f,%.2f" % self.pt(x, y) for x, y in pts if math.isfinite(x) and math.isfinite(y))
        tag = "polygon" if closed else "polyline"
        attrs = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in style.items())
        self.items.append(f'<{tag} points="{coords}" {attrs}/>')

    def circle(self, x, y, r=4, **style):
        sx, sy = self.pt(x, y)
        attrs = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in style.items())
        self.items.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="{r}" {attrs}/>')

    def text(self, x, y, s, size=11):
        self.items.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" font-family="sans-serif">{s}</text>')


def _svg(parts, width, height, meta):
    body = "\n".join(parts)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n<!-- {_header(meta)[2:]} -->\n'
        f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
    )


def write_arena_svg(path, scenario, log: TrajectoryLog, goal, meta, size=520):
    w = scenario.wall
    extent = 1.05 * max(w.c / w.ax, w.c / w.ay)
    cv = _Canvas(size, size, (-extent, extent), (-extent, extent))
    cv.poly(superellipse(w.ax, w.ay, 0, 0, w.c, w.p), closed=True, fill="#f4f4f4", stroke="black", stroke_width=2)
    for o in scenario.obstacles:
        cv.poly(superellipse(o.ax, o.ay, o.bx, o.by, o.c, o.p), closed=True, fill="#9a9a9a", stroke="black")
    for tick, traj in sorted(log.rollouts.items()):
        if traj is None:
            continue
        for j in range(0, traj.shape[0], max(1, traj.shape[0] // 100)):
            cv.poly(traj[j, :, :2], fill="none", stroke="#3b7dd8", stroke_width=0.5, stroke_opacity=0.4)
    a = log.step_array()
    if len(a):
        path_pts = np.vstack([a[:, 1:3], log.final_state[None, :2]])
        cv.poly(path_pts, fill="none", stroke="#c0392b", stroke_width=2)
    cv.circle(scenario.start[0], scenario.start[1], fill="#27ae60")
    cv.circle(goal.qd[0], goal.qd[1], r=6, fill="none", stroke="#c0392b", stroke_width=2)
    Path(path).write_text(_svg(cv.items, size, size, meta), encoding="ascii")


def write_signals_svg(path, log: TrajectoryLog, meta, width=640, strip=110):
    """Stacked time strips: position, speed, heading, controls, barrier signals."""
    a = log.step_array()
    names = [
        ("qx, qy", [1, 2]),
        ("nu, theta", [3, 4]),
        ("v (dashed), u", [5, 6, 7, 8]),
        ("h, min b, min h_j", [9, 10, 11]),
    ]
    colors = ["#c0392b", "#2c7fb8", "#27ae60", "#8e44ad"]
    parts = []
    height = strip * len(names) + 20
    t = a[:, 0] if len(a) else np.zeros(1)
    for s, (label, cols) in enumerate(names):
        if not len(a):
            break
        vals = a[:, cols]
        lo, hi = float(np.nanmin(vals)), float(np.nanmax(vals))
        if hi - lo < 1e-9:
            lo, hi = lo - 1, hi + 1
        cv = _Canvas(width, strip, (t[0], max(t[-1], t[0] + 1e-9)), (lo, hi), margin=18)
        for i, c in enumerate(cols):
            dash = {"stroke_dasharray": "4,3"} if label.startswith("v") and i < 2 else {}
            cv.poly(np.stack([t, a[:, c]], axis=1), fill="none", stroke=colors[i % 4], stroke_width=1.2, **dash)
        if lo < 0 < hi:
            cv.poly([(t[0], 0.0), (t[-1], 0.0)], stroke="black", stroke_width=0.5)
        cv.text(22, 14, label)
        parts.append(f'<g transform="translate(0,{s * strip + 10})">' + "\n".join(cv.items) + "</g>")
    Path(path).write_text(_svg(parts, width, height, meta), encoding="ascii")
