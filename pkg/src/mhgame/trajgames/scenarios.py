"""Scenario library: convoy merging and target guarding.

Both scenarios keep each robot's initial state in a parameter block
``x_init<i>``, so perturbed starts and receding-horizon replans reuse the
compiled game through :meth:`MixedHierarchyGame.with_params`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..expr import ParamBlock, add, mul, softplus, sq_norm
from ..game import MixedHierarchyGame, RobotProblem, build_game, strategy_blocks
from ..hierarchy import HierarchyGraph, HierarchyError, parse_edges
from ..solver import default_initialization
from .dynamics import DynamicsModel, TrajectoryPlan, double_integrator, rollout, unicycle, unpack
from .transcription import stage_views, transcribe_constraints

__all__ = [
    "UnknownHierarchy",
    "MERGING_HIERARCHIES",
    "GUARDING_HIERARCHIES",
    "ScenarioConfig",
    "merging_config",
    "target_guarding_config",
    "default_config",
    "resolve_edges",
    "merging_cost",
    "target_guarding_costs",
    "collision_penalty",
    "Scenario",
    "build_scenario",
    "initial_guess",
    "perturb_initial_states",
]


class UnknownHierarchy(ValueError):
    pass


MERGING_HIERARCHIES = {
    "nash": (),
    "chain": ((1, 3), (3, 2), (2, 4)),
    "mixed_a": ((1, 3), (1, 2), (2, 4)),
    "mixed_b": ((1, 2), (2, 4)),
}

GUARDING_HIERARCHIES = {
    "guard_leads_pursuer": ((2, 1),),
    "guard_leads_both": ((2, 1), (2, 3)),
    "guard_leads_target": ((2, 3),),
    "nash": (),
}

SCENARIO_KINDS = ("merging", "target_guarding")


@dataclass(frozen=True)
class ScenarioConfig:
    """All numeric scenario parameters.

    Fields that a scenario kind does not use are ignored by it.  Merging
    states are ``(px, py, heading, speed)``; target-guarding states are
    ``(px, py, vx, vy)``.
    """

    kind: str = "merging"
    hierarchy: object = "mixed_a"
    horizon: int = 10
    dt: float = 0.5
    initial_states: tuple = ()
    weights: tuple = ()
    collision_distance: float = 2.0
    collision_sensitivity: float = 5.0
    reference_speeds: tuple = ()
    spacing: float = 4.0
    spacing_weight: float = 1.0
    ramp_radius: float = 10.0
    ramp_center: tuple = (0.0, -10.0)
    ramp_weight: float = 1.0
    merging_vehicle: int = 3
    spacing_vehicle: int = 1
    goal: tuple = (0.0, 0.0, 0.0, 0.0)

    @property
    def num_robots(self) -> int:
        return len(self.initial_states)

    @property
    def edges(self) -> tuple:
        return resolve_edges(self.kind, self.hierarchy)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> list[str]:
        """Every problem with the configuration, as messages."""
        errors = []
        if self.kind not in SCENARIO_KINDS:
            errors.append(f"kind: unknown scenario kind {self.kind!r} (expected one of {', '.join(SCENARIO_KINDS)})")
            return errors
        if not isinstance(self.horizon, int) or self.horizon < 1:
            errors.append("horizon: must be a positive integer")
        if not self.dt > 0:
            errors.append("dt: must be positive")
        N = self.num_robots
        if N < 1:
            errors.append("initial_states: at least one robot is required")
        for i, x in enumerate(self.initial_states, start=1):
            if len(x) != 4:
                errors.append(f"initial_states[{i}]: expected 4 values, got {len(x)}")
            elif not all(math.isfinite(v) for v in x):
                errors.append(f"initial_states[{i}]: values must be finite")
        if len(self.weights) != N:
            errors.append(f"weights: expected {N} weight vectors, got {len(self.weights)}")
        expected = 5 if self.kind == "merging" else 3
        for i, wv in enumerate(self.weights, start=1):
            if len(wv) != expected:
                errors.append(f"weights[{i}]: expected {expected} values, got {len(wv)}")
            elif not all(v > 0 for v in wv):
                errors.append(f"weights[{i}]: all weights must be positive")
        if self.kind == "merging":
            if not self.collision_distance > 0:
                errors.append("collision_distance: must be positive")
            if not self.collision_sensitivity > 0:
                errors.append("collision_sensitivity: must be positive")
            if len(self.reference_speeds) != N:
                errors.append(f"reference_speeds: expected {N} values, got {len(self.reference_speeds)}")
            if not self.ramp_radius > 0:
                errors.append("ramp_radius: must be positive")
            if len(self.ramp_center) != 2:
                errors.append("ramp_center: expected 2 values")
            if not self.ramp_weight > 0:
                errors.append("ramp_weight: must be positive")
            if not self.spacing_weight > 0:
                errors.append("spacing_weight: must be positive")
            for name in ("merging_vehicle", "spacing_vehicle"):
                v = getattr(self, name)
                if not (isinstance(v, int) and 1 <= v <= N):
                    errors.append(f"{name}: must be a robot index in 1..{N}")
        else:
            if N != 3:
                errors.append("initial_states: target guarding needs exactly 3 robots")
            if len(self.goal) != 4:
                errors.append("goal: expected 4 values")
        try:
            edges = self.edges
            HierarchyGraph(max(N, 1), edges)
        except UnknownHierarchy as exc:
            errors.append(f"hierarchy: {exc}")
        except HierarchyError as exc:
            errors.append(f"hierarchy: {exc}")
        except (TypeError, ValueError) as exc:
            errors.append(f"hierarchy: cannot parse edges ({exc})")
        return errors


def resolve_edges(kind: str, hierarchy) -> tuple:
    """Edge tuple from a named hierarchy or an explicit edge list."""
    table = MERGING_HIERARCHIES if kind == "merging" else GUARDING_HIERARCHIES
    if isinstance(hierarchy, str):
        key = hierarchy.strip().lower()
        if key in table:
            return tuple(table[key])
        if "->" in key or key in ("", "none"):
            return tuple(parse_edges(key)) if "->" in key else ()
        raise UnknownHierarchy(f"unknown hierarchy {hierarchy!r} (known: {', '.join(sorted(table))})")
    return tuple(parse_edges(hierarchy))


def merging_config(**overrides) -> ScenarioConfig:
    """Four-vehicle merge: vehicles 1, 2 and 4 drive along ``y = 0``, vehicle 3 joins from a ramp.

    The ramp is a circle of radius ``R`` centred at ``(0, -R)``, tangent to
    the lane at the origin.  Vehicle 3 starts on it 30 degrees of arc
    behind the tangent point.  Vehicle 1 starts 4.5 m further from the
    tangent point (along the lane) than vehicle 3 (along the arc), so at
    equal speeds the two reach the merge point almost together and their
    interaction is strong.  Vehicles 2 and 4 trail vehicle 1 by 6 m and 10 m.
    """
    R = float(overrides.get("ramp_radius", 10.0))
    theta = math.radians(120.0)
    x3 = (R * math.cos(theta), -R + R * math.sin(theta), theta - math.pi / 2, 1.0)
    x1 = -R * (theta - math.pi / 2) - 4.5
    base = dict(
        kind="merging",
        hierarchy="mixed_a",
        horizon=10,
        dt=0.5,
        initial_states=((x1, 0.0, 0.0, 1.0), (x1 - 6.0, 0.0, 0.0, 1.0), x3, (x1 - 10.0, 0.0, 0.0, 1.0)),
        weights=tuple((10.0, 1.0, 1.0, 1.0, 0.1) for _ in range(4)),
        reference_speeds=(1.0, 1.0, 1.0, 1.0),
        ramp_center=(0.0, -R),
    )
    base.update(overrides)
    return _normalize(ScenarioConfig(**base))


def target_guarding_config(**overrides) -> ScenarioConfig:
    """Pursuer (1), guard (2) and target (3) with double-integrator dynamics."""
    base = dict(
        kind="target_guarding",
        hierarchy="guard_leads_pursuer",
        horizon=10,
        dt=0.1,
        initial_states=((-2.0, 2.0, 0.0, 0.0), (1.0, 1.0, 0.0, 0.0), (2.0, 2.5, 0.0, 0.0)),
        weights=((2.0, 1.0, 1.25), (0.5, 1.0, 0.25), (10.0, 1.25, 0.1)),
        goal=(0.0, 0.0, 0.0, 0.0),
    )
    base.update(overrides)
    return _normalize(ScenarioConfig(**base))


def default_config(kind: str, **overrides) -> ScenarioConfig:
    if kind == "merging":
        return merging_config(**overrides)
    if kind == "target_guarding":
        return target_guarding_config(**overrides)
    raise ValueError(f"unknown scenario kind {kind!r}")


def _normalize(cfg: ScenarioConfig) -> ScenarioConfig:
    def tup(v):
        return tuple(float(a) for a in v)

    hierarchy = cfg.hierarchy
    if not isinstance(hierarchy, str):
        hierarchy = tuple(tuple(int(a) for a in e) for e in parse_edges(hierarchy))
    return dataclasses.replace(
        cfg,
        horizon=int(cfg.horizon),
        dt=float(cfg.dt),
        initial_states=tuple(tup(x) for x in cfg.initial_states),
        weights=tuple(tup(w) for w in cfg.weights),
        reference_speeds=tup(cfg.reference_speeds),
        ramp_center=tup(cfg.ramp_center),
        goal=tup(cfg.goal),
        hierarchy=hierarchy,
    )


# costs -------------------------------------------------------------------


def collision_penalty(dp_sq, distance: float, sensitivity: float):
    """``[(1/c) log(1 + exp(c (d^2 - |dp|^2)))]^2``, evaluated stably."""
    s = mul(1.0 / sensitivity, softplus(mul(sensitivity, add(distance * distance, mul(-1.0, dp_sq)))))
    return mul(s, s)


def _model(config: ScenarioConfig) -> DynamicsModel:
    return unicycle(config.dt) if config.kind == "merging" else double_integrator(config.dt)


def merging_cost(i: int, config: ScenarioConfig, strategies: Sequence | None = None):
    """Cost of vehicle ``i`` in the merging game.

    Per step: control effort, lane offset ``py^2``, heading ``psi^2``, speed
    error and the pairwise collision penalty summed over all vehicle pairs,
    weighted by ``w_i``.  The merging vehicle adds the squared ramp-circle
    error and the spacing vehicle adds ``(px_i - px_merge - d)^2``.
    """
    model = _model(config)
    T = config.horizon
    N = config.num_robots
    if strategies is None:
        strategies = strategy_blocks([T * model.stage_dim] * N)
    steps = [stage_views(z, model, T) for z in strategies]
    w = config.weights[i - 1]
    vbar = config.reference_speeds[i - 1]
    cx, cy = config.ramp_center
    R2 = config.ramp_radius**2
    terms = []
    for t in range(T):
        x, u = steps[i - 1][t]
        px, py, psi, v = x
        terms.append(mul(w[0], sq_norm(u)))
        terms.append(mul(w[1], mul(py, py)))
        terms.append(mul(w[2], mul(psi, psi)))
        dv = add(v, -vbar)
        terms.append(mul(w[3], mul(dv, dv)))
        pairs = []
        for j in range(N):
            for k in range(j + 1, N):
                pj, pk = steps[j][t][0][:2], steps[k][t][0][:2]
                d2 = sq_norm([add(a, mul(-1.0, b)) for a, b in zip(pj, pk)])
                pairs.append(collision_penalty(d2, config.collision_distance, config.collision_sensitivity))
        terms.append(mul(w[4], add(*pairs)))
        if i == config.merging_vehicle:
            r = add(sq_norm([add(px, -cx), add(py, -cy)]), -R2)
            terms.append(mul(config.ramp_weight, mul(r, r)))
        if i == config.spacing_vehicle and config.merging_vehicle != i:
            other = steps[config.merging_vehicle - 1][t][0][0]
            gap = add(px, mul(-1.0, other), -config.spacing)
            terms.append(mul(config.spacing_weight, mul(gap, gap)))
    return add(*terms)


def _diff_sq(a, b):
    return sq_norm([add(x, mul(-1.0, y)) for x, y in zip(a, b)])


def target_guarding_costs(config: ScenarioConfig, strategies: Sequence | None = None) -> list:
    """Costs of the pursuer, guard and target.

    Distances use the full state.  The target's goal term
    ``(1/T) |x3_T - x_g|^2`` is added at every step, as displayed in the
    original cost, which amounts to one terminal penalty.
    """
    model = _model(config)
    T = config.horizon
    if strategies is None:
        strategies = strategy_blocks([T * model.stage_dim] * 3)
    steps = [stage_views(z, model, T) for z in strategies]
    w1, w2, w3 = config.weights
    goal = config.goal
    xT3 = steps[2][T - 1][0]
    goal_term = mul(1.0 / T, _diff_sq(xT3, goal))
    f1, f2, f3 = [], [], []
    for t in range(T):
        (x1, u1), (x2, u2), (x3, u3) = steps[0][t], steps[1][t], steps[2][t]
        f1 += [mul(w1[0], _diff_sq(x3, x1)), mul(-w1[1], _diff_sq(x2, x1)), mul(w1[2], sq_norm(u1))]
        f2 += [mul(w2[0], _diff_sq(x3, x2)), mul(-w2[1], _diff_sq(x3, x1)), mul(w2[2], sq_norm(u2))]
        f3 += [mul(w3[0], goal_term), mul(w3[1], _diff_sq(x3, x2)), mul(w3[2], sq_norm(u3))]
    return [add(*f1), add(*f2), add(*f3)]


# scenario assembly -------------------------------------------------------


@dataclass
class Scenario:
    """A built scenario: compiled game, dynamics and the initial guess."""

    config: ScenarioConfig
    game: MixedHierarchyGame
    model: DynamicsModel
    w0: np.ndarray
    init_params: list = field(repr=False, default_factory=list)

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def with_initial_states(self, states) -> "Scenario":
        """Same compiled game started from other initial states, with a fresh rollout guess."""
        states = [np.asarray(s, dtype=float) for s in states]
        game = self.game.with_params({p: s for p, s in zip(self.init_params, states)})
        w0 = initial_guess(game, self.model, self.config.horizon, states)
        cfg = self.config.replace(initial_states=tuple(tuple(float(v) for v in s) for s in states))
        return Scenario(cfg, game, self.model, w0, self.init_params)

    def initial_states(self) -> list[np.ndarray]:
        return [self.game.param(p.name) for p in self.init_params]

    def plans(self, w: np.ndarray) -> list[TrajectoryPlan]:
        lay = self.game.layout
        return [unpack(w[lay.x[i]], self.model.state_dim, self.model.control_dim) for i in self.game.graph.robots]


def initial_guess(game: MixedHierarchyGame, model: DynamicsModel, horizon: int, states) -> np.ndarray:
    """Zero-control rollouts from each initial state; copies equal primals; duals zero."""
    guesses = {}
    for i, x0 in enumerate(states, start=1):
        plan = rollout(model, x0, np.zeros((horizon, model.control_dim)))
        guesses[i] = plan.pack()
    return default_initialization(game, guesses)


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Compile the game described by ``config`` and its default initial guess."""
    errors = config.validate()
    if errors:
        raise ValueError("invalid scenario configuration: " + "; ".join(errors))
    model = _model(config)
    T = config.horizon
    N = config.num_robots
    n = T * model.stage_dim
    blocks = strategy_blocks([n] * N)
    params = [ParamBlock(f"x_init{i}", model.state_dim) for i in range(1, N + 1)]
    if config.kind == "merging":
        costs = [merging_cost(i, config, blocks) for i in range(1, N + 1)]
    else:
        costs = target_guarding_costs(config, blocks)
    problems = [
        RobotProblem(n, costs[i], tuple(transcribe_constraints(model, T, list(params[i]), blocks[i])))
        for i in range(N)
    ]
    graph = HierarchyGraph(N, config.edges)
    game = build_game(graph, problems, {p: np.asarray(x, dtype=float) for p, x in zip(params, config.initial_states)})
    w0 = initial_guess(game, model, T, config.initial_states)
    return Scenario(config, game, model, w0, params)


def perturb_initial_states(states, rng: np.random.Generator, magnitude: float = 0.1) -> list[np.ndarray]:
    """Scale each position coordinate by an independent factor in ``[1 - m, 1 + m]``.

    Headings, speeds and velocities are left unchanged.
    """
    out = []
    for x in states:
        x = np.array(x, dtype=float, copy=True)
        x[:2] = x[:2] * (1.0 + rng.uniform(-magnitude, magnitude, size=2))
        out.append(x)
    return out
