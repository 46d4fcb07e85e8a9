"""Command-line front end: ``gsmppi --scenario FILE --goal 0 --emit csv,svg``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cbf import DegenerateFilter, finite_difference_gradient, safe_set_membership, softmin
from .dynamics import ContractError
from .loop import run
from .output import write_arena_svg, write_audit, write_planner_csv, write_signals_svg, write_trajectory_csv
from .planner import PlanningFailed
from .scenarios import ScenarioError, build_scenario, default_scenario_path

log = logging.getLogger("gsmppi")

EMIT_CHOICES = ("csv", "svg", "rollout-audit")
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _xy(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsmppi", description="Safe sampling-based planning for a unicycle robot.")
    p.add_argument("--scenario", type=Path, default=None, help="scenario JSON (default: bundled ground-robot arena)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--goal", type=int, default=0, help="index into the scenario's goal list")
    g.add_argument("--goal-xy", type=_xy, default=None, metavar="X,Y", help="explicit goal position")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--emit", default="csv", help="comma list from: " + ", ".join(EMIT_CHOICES))
    p.add_argument("--validate", action="store_true", help="check the configuration and exit without simulating")
    p.add_argument("--s-correction", action="store_true", help="add the control-cost correction term to rollout costs")
    p.add_argument("--horizon", type=float, default=None, metavar="T", help="simulated time in seconds")
    p.add_argument("--stop-radius", type=float, default=None, help="stop once within this distance of the goal")
    p.add_argument("--workers", type=int, default=None, help="rollout worker threads")
    p.add_argument("--backend", choices=("auto", "numba", "numpy"), default="auto")
    p.add_argument("--snapshot", default="", metavar="T1,T2", help="times whose rollouts are drawn in arena.svg")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def resolve(args):
    """Load the scenario, apply flag overrides, and return ``(scenario, goal, config_hash)``."""
    path = default_scenario_path() if args.scenario is None else args.scenario
    try:
        config = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scenario {path}: {exc}") from None
    if not isinstance(config, dict):
        raise UsageError(f"scenario {path} must hold a JSON object")
    try:
        if args.horizon is not None:
            config.setdefault("sim", {})["T"] = args.horizon
        if args.stop_radius is not None:
            config.setdefault("sim", {})["stop_radius"] = args.stop_radius
        if args.s_correction:
            config.setdefault("planner", {})["s_correction"] = True
        sc = build_scenario(config)
        goal = sc.goal(args.goal, args.goal_xy)
    except (ContractError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    resolved = {"scenario": sc.config, "goal": list(goal.qd)}
    digest = hashlib.sha256(json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]
    return sc, goal, digest


def parse_emit(text):
    items = [e.strip() for e in text.split(",") if e.strip()]
    bad = [e for e in items if e not in EMIT_CHOICES]
    if bad:
        raise UsageError(f"unknown --emit value(s): {', '.join(bad)}")
    return set(items)


def validate(sc, samples=100, seed=0) -> list:
    """Start-state membership and gradient checks; returns a list of problems."""
    problems = []
    inside, casc, h = safe_set_membership(sc.cbf, sc.start)
    if not inside:
        problems.append(f"start state outside the safe set (h={h:.4g}, min cascade={casc:.4g})")
    for i, g in enumerate(sc.goals):
        if not safe_set_membership(sc.cbf, np.array([*g.qd, 0.0, 0.0]))[0]:
            problems.append(f"goal {i} at rest is outside the safe set")
    rng = np.random.default_rng(seed)
    w = sc.wall
    found = 0
    for _ in range(50 * samples):
        if found >= samples:
            break
        x = np.array([
            rng.uniform(-w.c / w.ax, w.c / w.ax), rng.uniform(-w.c / w.ay, w.c / w.ay),
            rng.uniform(-1.0, 9.0), rng.uniform(-np.pi, np.pi),
        ])
        if not safe_set_membership(sc.cbf, x)[0]:
            continue
        found += 1
        _, grad = sc.cbf.value_and_gradient(x)
        fd = finite_difference_gradient(lambda y: softmin(sc.cbf.evaluate(y).terminal, sc.cbf.rho), x)
        err = np.max(np.abs(grad - fd)) / max(1.0, np.max(np.abs(fd)))
        if err > 1e-5:
            problems.append(f"composite gradient mismatch {err:.2e} at {x}")
    if found < samples:
        problems.append(f"only {found} safe states found for gradient checks")
    return problems


def _snapshot_ticks(text, sc):
    if not text:
        return ()
    try:
        times = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad --snapshot list {text!r}") from None
    return tuple(int(round(t / sc.sim.Ts)) for t in times)


def write_outputs(out_dir: Path, emit, sc, goal, lg, meta):
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in emit:
        written.append(write_trajectory_csv(out_dir / "trajectory.csv", lg, meta))
        written.append(write_planner_csv(out_dir / "planner.csv", lg, meta))
    if "svg" in emit:
        write_arena_svg(out_dir / "arena.svg", sc, lg, goal, meta)
        write_signals_svg(out_dir / "signals.svg", lg, meta)
        written += [out_dir / "arena.svg", out_dir / "signals.svg"]
    if "rollout-audit" in emit:
        summary = write_audit(out_dir / "audit.json", lg, meta)
        written.append(out_dir / "audit.json")
        level = logging.WARNING if summary["violations"] else logging.INFO
        log.log(level, "rollout audit: %d of %d states violate (min h %.3g, min cascade %.3g)",
                summary["violations"], summary["states"], summary["min_h"], summary["min_cascade"])
    return written


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")

    try:
        emit = parse_emit(args.emit)
        sc, goal, digest = resolve(args)
        snaps = _snapshot_ticks(args.snapshot, sc)
        if args.workers is not None and args.workers < 1:
            raise UsageError("--workers must be >= 1")
    except UsageError as exc:
        print(f"gsmppi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.validate:
        problems = validate(sc)
        for msg in problems:
            print(f"gsmppi: validate: {msg}", file=sys.stderr)
        if problems:
            return EXIT_USAGE
        print(f"ok config_hash={digest}")
        return EXIT_OK

    meta = {"config_hash": digest, "seed": args.seed}
    t0 = time.perf_counter()
    try:
        lg = run(
            sc.problem(goal), sc.start, sc.planner, sc.sim, seed=args.seed, workers=args.workers,
            backend=args.backend, audit="rollout-audit" in emit, snapshot_ticks=snaps,
        )
    except ContractError as exc:
        print(f"gsmppi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateFilter, PlanningFailed) as exc:
        print(f"gsmppi: aborted: {exc}", file=sys.stderr)
        partial = getattr(exc, "partial_log", None)
        if partial is not None and partial.steps:
            partial.final_state = np.array(partial.steps[-1][1:5])
            write_outputs(args.out, emit, sc, goal, partial, {**meta, "aborted": 1})
        return EXIT_RUNTIME
    write_outputs(args.out, emit, sc, goal, lg, meta)
    log.info("run finished in %.2f s, final distance %.3f m", time.perf_counter() - t0, goal.distance(lg.final_state))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
