"""Receding-horizon execution of a trajectory game."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..solver import SolverOptions, SolverResult, Status, solve, time_shift, warm_start
from .scenarios import Scenario, ScenarioConfig, build_scenario

__all__ = [
    "SolveRecord",
    "RecedingLog",
    "RecedingHorizonFailure",
    "receding_horizon",
    "shift_solution",
    "pairwise_distances",
]


@dataclass
class SolveRecord:
    """Statistics of one solve inside the loop."""

    step: int
    status: Status
    iterations: int
    residual: float
    wall_time: float
    residuals: list = field(repr=False, default_factory=list)
    steps: list = field(repr=False, default_factory=list)
    consensus_gaps: list = field(repr=False, default_factory=list)
    min_pivots: list = field(repr=False, default_factory=list)

    @classmethod
    def from_result(cls, step: int, result: SolverResult) -> "SolveRecord":
        return cls(
            step,
            result.status,
            result.iterations,
            float(result.residuals[-1]),
            result.wall_time,
            list(result.residuals),
            list(result.steps),
            list(result.consensus_gaps),
            list(result.min_pivots),
        )

    def diagnostics(self) -> list[dict]:
        rows = []
        for k, r in enumerate(self.residuals):
            rows.append(
                {
                    "iter": k,
                    "residual_norm": r,
                    "step_size": self.steps[k - 1] if k > 0 else 0.0,
                    "consensus_gap": self.consensus_gaps[k],
                    "min_pivot": self.min_pivots[k - 1] if k > 0 else "",
                }
            )
        return rows


@dataclass
class RecedingLog:
    """Executed states and controls plus per-solve records.

    ``states`` has shape ``(steps + 1, N, nx)`` and ``controls`` has shape
    ``(steps, N, nu)``.  ``open_loop`` holds the plans of the first solve and
    ``last_result`` the final solver result.
    """

    scenario: Scenario
    states: np.ndarray
    controls: np.ndarray
    solves: list
    open_loop: list
    last_result: SolverResult | None = field(repr=False, default=None)

    @property
    def num_steps(self) -> int:
        return self.controls.shape[0]

    @property
    def dt(self) -> float:
        return self.scenario.model.dt

    def solve_times(self) -> np.ndarray:
        return np.array([s.wall_time for s in self.solves])

    def trajectory(self) -> np.ndarray:
        """Executed states, or the first open-loop plan when no step was executed."""
        if self.num_steps:
            return self.states
        return np.stack([p.states for p in self.open_loop], axis=1)

    def trajectory_controls(self) -> np.ndarray:
        if self.num_steps:
            return self.controls
        return np.stack([p.controls for p in self.open_loop], axis=1)


class RecedingHorizonFailure(RuntimeError):
    """A solve inside the loop did not converge."""

    def __init__(self, step: int, result: SolverResult, log: RecedingLog):
        super().__init__(f"solve at step {step} ended with {result.status.value}: {result.message}".rstrip(": "))
        self.step = step
        self.result = result
        self.log = log


def shift_solution(scenario: Scenario, w: np.ndarray) -> np.ndarray:
    """Advance a solution by one step.

    Strategy-shaped blocks (primals, predicted copies, policy duals) drop
    their first stage and repeat the last; constraint duals drop their first
    state-sized chunk.  Predicted copies are then reset to the primals.
    """
    model = scenario.model
    stage, nx = model.stage_dim, model.state_dim
    lay = scenario.game.layout
    out = warm_start(
        scenario.game,
        w,
        shift=lambda v, _i: time_shift(v, stage),
        dual_shift=lambda v, _i: time_shift(v, nx),
    )
    for (i, j), s in lay.pred.items():
        out[s] = out[lay.x[j]]
    return out


def receding_horizon(
    config: ScenarioConfig | Scenario,
    steps: int,
    options: SolverOptions | None = None,
    replan: Callable[[int, list, SolverResult], Sequence | None] | None = None,
    raise_on_failure: bool = True,
) -> RecedingLog:
    """Solve, apply every robot's first control, advance, and repeat ``steps`` times.

    With ``steps == 0`` a single open-loop solve is performed and nothing is
    executed.  ``replan(step, states, result)`` is called after each solve;
    it may return replacement current states (for example a disturbed
    measurement) used before the next solve.  Solver failures raise
    :class:`RecedingHorizonFailure` carrying the step index unless
    ``raise_on_failure`` is false, in which case the loop stops and the
    partial log is returned.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    scenario = config if isinstance(config, Scenario) else build_scenario(config)
    options = options or SolverOptions()
    model = scenario.model
    N = scenario.game.graph.num_robots
    current = [np.asarray(x, dtype=float) for x in scenario.initial_states()]
    states = [np.stack(current)]
    controls = []
    records = []
    open_loop = []
    w_guess = scenario.w0
    last = None
    log = RecedingLog(scenario, np.stack(states), np.zeros((0, N, model.control_dim)), records, open_loop)
    for k in range(max(steps, 1)):
        if k > 0:
            scenario = scenario.with_initial_states(current)
        result = solve(scenario.game, w_guess if k > 0 else scenario.w0, options)
        last = result
        records.append(SolveRecord.from_result(k, result))
        plans = scenario.plans(result.w)
        if k == 0:
            open_loop.extend(plans)
        if not result.converged:
            log.states, log.last_result = np.stack(states), result
            log.controls = np.stack(controls) if controls else log.controls
            if raise_on_failure:
                raise RecedingHorizonFailure(k, result, log)
            return log
        if steps == 0:
            break
        u = [p.controls[0] for p in plans]
        current = [model.step(x, ui) for x, ui in zip(current, u)]
        if replan is not None:
            replaced = replan(k, current, result)
            if replaced is not None:
                current = [np.asarray(x, dtype=float) for x in replaced]
        controls.append(np.stack(u))
        states.append(np.stack(current))
        w_guess = shift_solution(scenario, result.w)
    log.states = np.stack(states)
    log.controls = np.stack(controls) if controls else log.controls
    log.last_result = last
    return log


def pairwise_distances(positions: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Planar distances between every robot pair over time.

    ``positions`` has shape ``(T, N, >=2)``; the first two state entries are
    taken as the position.  Keys are 1-based robot pairs ``(j, k)`` with
    ``j < k``.
    """
    P = np.asarray(positions, dtype=float)[..., :2]
    N = P.shape[1]
    return {
        (j + 1, k + 1): np.linalg.norm(P[:, j] - P[:, k], axis=-1) for j in range(N) for k in range(j + 1, N)
    }
