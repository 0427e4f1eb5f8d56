"""Command-line driver for mixed-hierarchy trajectory game experiments.

Subcommands::

    mhgame solve     one open-loop solve from the nominal initial states
    mhgame receding  receding-horizon execution for ``run.steps`` steps
    mhgame sweep     one solve per hierarchy structure
    mhgame converge  ``run.runs`` solves from perturbed initial states
    mhgame validate  print the resolved configuration or the list of errors

Artifacts written to ``--out``:

``trajectory.csv``
    ``run_id, step, robot, t`` followed by the state and control columns of
    the dynamics model.
``distances.csv``
    ``run_id, step, t, robot_a, robot_b, distance``.
``convergence.csv``
    ``run_id, solve, iter, residual_norm, step_size, consensus_gap, min_pivot``.
``convergence_summary.csv`` (converge only)
    ``iter, runs, mean_residual_norm, std_residual_norm``.
``metadata.json``
    resolved configuration, hierarchy edges, per-run status and timings.
``errors.json``
    machine-readable failure records, written only when something failed.

Exit status is 0 when every solve converged, 2 for configuration errors,
3 for solver failures and 4 for singular systems.  The worker count for
sweeps and convergence studies comes from the ``MHG_WORKERS`` environment
variable (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_to_dict, dump_config, load_config, resolve_config
from .kkt import DIAGNOSTIC_COLUMNS
from .solver import SolverOptions, Status, solve
from .trajgames import (
    RecedingHorizonFailure,
    build_scenario,
    pairwise_distances,
    perturb_initial_states,
    receding_horizon,
)
from .trajgames.scenarios import ScenarioConfig, resolve_edges

__all__ = ["main", "run", "RunOutcome", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_SINGULAR"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SINGULAR = 4

STATE_COLUMNS = {"merging": ("px", "py", "heading", "speed"), "target_guarding": ("px", "py", "vx", "vy")}
CONTROL_COLUMNS = {"merging": ("acceleration", "turn_rate"), "target_guarding": ("ax", "ay")}
CONVERGENCE_COLUMNS = ("run_id", "solve") + DIAGNOSTIC_COLUMNS


@dataclass
class RunOutcome:
    """Everything one member run produces."""

    run_id: str
    hierarchy: object
    edges: tuple
    initial_states: list
    status: str
    message: str
    failed_step: int | None
    states: np.ndarray
    controls: np.ndarray
    diagnostics: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == Status.CONVERGED.value


def _execute(job: tuple) -> RunOutcome:
    """One member run.  Top level so a process pool can pickle it."""
    run_id, scenario_cfg, options, steps, receding = job
    scenario = build_scenario(scenario_cfg)
    states0 = [list(map(float, s)) for s in scenario_cfg.initial_states]
    if receding:
        try:
            log = receding_horizon(scenario, steps, options)
            failed_step, last = None, log.last_result
        except RecedingHorizonFailure as exc:
            log, failed_step, last = exc.log, exc.step, exc.result
        diagnostics = [(rec.step, rec.diagnostics()) for rec in log.solves]
        return RunOutcome(
            run_id,
            scenario_cfg.hierarchy,
            scenario_cfg.edges,
            states0,
            last.status.value,
            last.message,
            failed_step,
            log.trajectory(),
            log.trajectory_controls(),
            diagnostics,
            [rec.iterations for rec in log.solves],
            [rec.wall_time for rec in log.solves],
        )
    result = solve(scenario.game, scenario.w0, options)
    plans = scenario.plans(result.w)
    return RunOutcome(
        run_id,
        scenario_cfg.hierarchy,
        scenario_cfg.edges,
        states0,
        result.status.value,
        result.message,
        None if result.converged else 0,
        np.stack([p.states for p in plans], axis=1),
        np.stack([p.controls for p in plans], axis=1),
        [(0, result.diagnostics())],
        [result.iterations],
        [result.wall_time],
    )


def _hierarchy_label(h) -> str:
    if isinstance(h, str):
        return h
    return ",".join(f"{a}->{b}" for a, b in h) or "nash"


def _jobs(cfg: RunConfig, mode: str) -> list[tuple]:
    sc, opts = cfg.scenario, cfg.solver
    if mode == "solve":
        return [("0", sc, opts, 0, False)]
    if mode == "receding":
        return [("0", sc, opts, cfg.run.steps, True)]
    if mode == "sweep":
        return [(_hierarchy_label(h), sc.replace(hierarchy=h), opts, 0, False) for h in cfg.sweep_hierarchies()]
    if mode == "converge":
        rng = np.random.default_rng(cfg.run.seed)
        jobs = []
        for k in range(cfg.run.runs):
            states = perturb_initial_states(sc.initial_states, rng, cfg.run.perturbation)
            perturbed = sc.replace(initial_states=tuple(tuple(float(v) for v in s) for s in states))
            jobs.append((str(k), perturbed, opts, 0, False))
        return jobs
    raise ValueError(f"unknown mode {mode!r}")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MHG_WORKERS", "1")))
    except ValueError:
        return 1


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _trajectory_rows(outcomes, kind: str, dt: float):
    for o in outcomes:
        T, N = o.states.shape[:2]
        for t in range(T):
            for i in range(N):
                u = o.controls[t, i] if t < o.controls.shape[0] else np.full(o.controls.shape[-1], np.nan)
                yield [o.run_id, t, i + 1, t * dt, *o.states[t, i], *u]


def _distance_rows(outcomes, dt: float):
    for o in outcomes:
        dists = pairwise_distances(o.states)
        for t in range(o.states.shape[0]):
            for (a, b), d in dists.items():
                yield [o.run_id, t, t * dt, a, b, d[t]]


def _convergence_rows(outcomes):
    for o in outcomes:
        for solve_index, diag in o.diagnostics:
            for row in diag:
                yield [o.run_id, solve_index] + [row[c] for c in DIAGNOSTIC_COLUMNS]


def convergence_summary(outcomes) -> list[list]:
    """Mean and standard deviation of ``||F||`` per iteration over runs.

    Each run contributes its residuals up to its final iteration; ``runs``
    counts how many runs reached each iteration.
    """
    traces = [[row["residual_norm"] for row in o.diagnostics[0][1]] for o in outcomes if o.diagnostics]
    length = max((len(t) for t in traces), default=0)
    rows = []
    for k in range(length):
        vals = np.array([t[k] for t in traces if len(t) > k], dtype=float)
        rows.append([k, vals.size, float(vals.mean()), float(vals.std())])
    return rows


def _error_kind(status: str) -> str:
    return "singular" if status == Status.SINGULAR_SYSTEM.value else "solver"


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def run(cfg: RunConfig, out: str | Path, mode: str | None = None) -> int:
    """Run an experiment and write its artifacts; return the exit status."""
    mode = mode or cfg.run.mode
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.scenario.kind
    dt = cfg.scenario.dt
    jobs = _jobs(cfg, mode)
    start = time.perf_counter()
    workers = _workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_execute, jobs))
    else:
        outcomes = [_execute(j) for j in jobs]
    wall = time.perf_counter() - start

    _write_csv(
        out / "trajectory.csv",
        ("run_id", "step", "robot", "t") + STATE_COLUMNS[kind] + CONTROL_COLUMNS[kind],
        _trajectory_rows(outcomes, kind, dt),
    )
    _write_csv(out / "distances.csv", ("run_id", "step", "t", "robot_a", "robot_b", "distance"), _distance_rows(outcomes, dt))
    _write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, _convergence_rows(outcomes))
    if mode == "converge":
        _write_csv(
            out / "convergence_summary.csv",
            ("iter", "runs", "mean_residual_norm", "std_residual_norm"),
            convergence_summary(outcomes),
        )

    errors = [
        {
            "run_id": o.run_id,
            "kind": _error_kind(o.status),
            "status": o.status,
            "step": o.failed_step,
            "message": o.message,
        }
        for o in outcomes
        if not o.converged
    ]
    metadata = {
        "version": __version__,
        "mode": mode,
        "seed": cfg.run.seed,
        "workers": workers,
        "wall_time": wall,
        "config": config_to_dict(cfg),
        "runs": [
            {
                "run_id": o.run_id,
                "hierarchy": _hierarchy_label(o.hierarchy),
                "edges": [list(e) for e in o.edges],
                "initial_states": o.initial_states,
                "status": o.status,
                "iterations": o.iterations,
                "solve_times": o.solve_times,
            }
            for o in outcomes
        ],
        "all_converged": not errors,
    }
    _write_json(out / "metadata.json", metadata)
    err_path = out / "errors.json"
    if errors:
        _write_json(err_path, {"errors": errors})
    elif err_path.exists():
        err_path.unlink()
    if not errors:
        return EXIT_OK
    return EXIT_SINGULAR if any(e["kind"] == "singular" for e in errors) else EXIT_SOLVER


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mhgame", description="Solve mixed-hierarchy trajectory games.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "one open-loop solve"),
        ("receding", "receding-horizon execution"),
        ("sweep", "one solve per hierarchy structure"),
        ("converge", "solves from perturbed initial states"),
        ("validate", "print the resolved configuration"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, help="YAML configuration file (defaults when omitted)")
        s.add_argument("--scenario", choices=("merging", "target_guarding"), help="scenario kind when no config is given")
        s.add_argument("--hierarchy", help="hierarchy name or edge list such as '1->3,1->2'")
        if name != "validate":
            s.add_argument("--out", type=Path, required=True, help="output directory")
            s.add_argument("--seed", type=int, help="random seed for perturbed initial states")
            s.add_argument("--tol", type=float, help="convergence threshold on ||F||^2")
            s.add_argument("--max-iters", type=int, help="Newton iteration limit")
    return p


def _load(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
        if args.scenario and args.scenario != cfg.scenario.kind:
            raise ConfigError([f"--scenario {args.scenario} conflicts with scenario.kind {cfg.scenario.kind}"])
    else:
        cfg = resolve_config({"scenario": {"kind": args.scenario or "merging"}})
    errors = []
    scenario: ScenarioConfig = cfg.scenario
    if args.hierarchy is not None:
        try:
            resolve_edges(scenario.kind, args.hierarchy)
            scenario = scenario.replace(hierarchy=args.hierarchy)
            errors.extend(f"--hierarchy: {m}" for m in scenario.validate() if m.startswith("hierarchy"))
        except (TypeError, ValueError) as exc:
            errors.append(f"--hierarchy: {exc}")
    solver_changes, run_changes = {}, {}
    if getattr(args, "tol", None) is not None:
        solver_changes["tol"] = args.tol
    if getattr(args, "max_iters", None) is not None:
        solver_changes["max_iters"] = args.max_iters
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            errors.append("--seed: must be nonnegative")
        run_changes["seed"] = args.seed
    try:
        solver = SolverOptions(**{**config_to_dict(cfg)["solver"], **solver_changes})
    except ValueError as exc:
        errors.append(f"solver: {exc}")
        solver = cfg.solver
    if errors:
        raise ConfigError(errors)
    return cfg.replace(scenario=scenario, solver=solver, run=cfg.run.__class__(**{**cfg.run.__dict__, **run_changes}))


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        if args.command != "validate" and getattr(args, "out", None) is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            _write_json(args.out / "errors.json", {"errors": [{"kind": "config", "message": m} for m in exc.errors]})
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    status = run(cfg, args.out, args.command)
    if status != EXIT_OK:
        print(f"some solves failed; see {args.out / 'errors.json'}", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
