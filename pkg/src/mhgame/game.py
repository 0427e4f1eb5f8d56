"""Mixed-hierarchy game definition and the joint unknown layout.

Every robot ``i`` owns a contiguous block of the joint vector ``w``::

    [ x_i | x_{i->j}, psi_{i,j} for j in all_followers(i) (ascending) | lam_i ]

``x_{i->j}`` is leader ``i``'s own copy of follower ``j``'s strategy and
``psi_{i,j}`` the multiplier of the constraint tying that copy to ``j``'s
policy.  The residual rows of robot ``i`` use the same block order, so each
robot's diagonal block is square.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import CompiledFunction, DimensionMismatch, Expr, ParamBlock, UndeclaredVariable, VarBlock
from .expr import add, as_expr, gradient, mul
from .hierarchy import HierarchyGraph, RobotSets, compute_sets, reverse_topological_order

__all__ = [
    "RobotProblem",
    "VariableLayout",
    "MixedHierarchyGame",
    "strategy_blocks",
    "build_game",
    "make_layout",
    "gather_cost_arguments",
]


def strategy_blocks(dims: Sequence[int]) -> list[VarBlock]:
    """Variable blocks ``x1..xN`` used to write costs and constraints."""
    return [VarBlock(f"x{i + 1}", int(n)) for i, n in enumerate(dims)]


@dataclass(frozen=True)
class RobotProblem:
    """One robot's objective over the joint strategy and equality constraints on its own.

    ``cost`` and ``constraints`` are expressions in the blocks returned by
    :func:`strategy_blocks` (and optionally in declared parameter blocks).
    """

    dim: int
    cost: Expr
    constraints: tuple = ()

    def __post_init__(self):
        if self.dim <= 0:
            raise DimensionMismatch("strategy dimension must be positive")
        object.__setattr__(self, "cost", as_expr(self.cost))
        object.__setattr__(self, "constraints", tuple(as_expr(c) for c in self.constraints))

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)


class VariableLayout:
    """Index map from (robot, block kind) to slices of the joint vector."""

    def __init__(self, sets: RobotSets, dims: Sequence[int], num_constraints: Sequence[int]):
        N = sets.num_robots
        if len(dims) != N or len(num_constraints) != N:
            raise DimensionMismatch("need one strategy and constraint dimension per robot")
        self.num_robots = N
        self.sets = sets
        self.dims = {i: int(dims[i - 1]) for i in range(1, N + 1)}
        self.num_constraints = {i: int(num_constraints[i - 1]) for i in range(1, N + 1)}
        self.followers = {i: tuple(sorted(sets.all_followers[i])) for i in range(1, N + 1)}
        self.leaders = {i: tuple(sorted(sets.all_leaders[i])) for i in range(1, N + 1)}
        self.x: dict[int, slice] = {}
        self.lam: dict[int, slice] = {}
        self.pred: dict[tuple[int, int], slice] = {}
        self.psi: dict[tuple[int, int], slice] = {}
        self.robot: dict[int, slice] = {}
        self._blocks: list[tuple[int, int, str, int, int | None]] = []
        off = 0

        def take(size, kind, i, j=None):
            nonlocal off
            s = slice(off, off + size)
            self._blocks.append((off, off + size, kind, i, j))
            off += size
            return s

        for i in range(1, N + 1):
            start = off
            self.x[i] = take(self.dims[i], "x", i)
            for j in self.followers[i]:
                self.pred[(i, j)] = take(self.dims[j], "pred", i, j)
                self.psi[(i, j)] = take(self.dims[j], "psi", i, j)
            self.lam[i] = take(self.num_constraints[i], "lam", i)
            self.robot[i] = slice(start, off)
        self.size = off

        self.joint_offsets = {}
        pos = 0
        for i in range(1, N + 1):
            self.joint_offsets[i] = pos
            pos += self.dims[i]
        self.joint_size = pos
        self._views = {i: self._view(i) for i in range(1, N + 1)}

    def _view(self, i: int) -> np.ndarray:
        parts = []
        for k in range(1, self.num_robots + 1):
            s = self.pred[(i, k)] if k in self.sets.all_followers[i] else self.x[k]
            parts.append(np.arange(s.start, s.stop))
        return np.concatenate(parts)

    def view_indices(self, i: int) -> np.ndarray:
        """Positions in ``w`` of the joint strategy as seen by robot ``i``."""
        return self._views[i]

    def gather(self, i: int, w: np.ndarray) -> np.ndarray:
        return np.asarray(w)[self._views[i]]

    def scatter(self, i: int, w: np.ndarray, view: np.ndarray) -> np.ndarray:
        out = np.array(w, dtype=float, copy=True)
        out[self._views[i]] = view
        return out

    def joint_block(self, k: int) -> slice:
        o = self.joint_offsets[k]
        return slice(o, o + self.dims[k])

    def robot_size(self, i: int) -> int:
        s = self.robot[i]
        return s.stop - s.start

    def expected_size(self) -> int:
        return sum(
            self.dims[i] + self.num_constraints[i] + 2 * sum(self.dims[j] for j in self.followers[i])
            for i in range(1, self.num_robots + 1)
        )

    def describe(self, index: int) -> str:
        """Human-readable block name for a row or column index."""
        for lo, hi, kind, i, j in self._blocks:
            if lo <= index < hi:
                if kind == "x":
                    return f"robot {i} strategy[{index - lo}]"
                if kind == "lam":
                    return f"robot {i} constraint[{index - lo}]"
                if kind == "pred":
                    return f"robot {i} prediction of robot {j}[{index - lo}]"
                return f"robot {i} policy constraint on robot {j}[{index - lo}]"
        raise IndexError(index)

    def strategies(self, w: np.ndarray) -> dict[int, np.ndarray]:
        return {i: np.asarray(w)[self.x[i]].copy() for i in range(1, self.num_robots + 1)}


def make_layout(game: "MixedHierarchyGame") -> VariableLayout:
    return VariableLayout(game.sets, [p.dim for p in game.problems], [p.num_constraints for p in game.problems])


def gather_cost_arguments(layout: VariableLayout, i: int, w: np.ndarray) -> np.ndarray:
    """Joint strategy vector robot ``i`` evaluates its cost at.

    Leaders and Nash-related robots contribute their actual blocks, followers
    contribute ``i``'s predicted copies.
    """
    return layout.gather(i, w)


@dataclass
class _RobotFunctions:
    cost_gradient: CompiledFunction  # d f_i / d (own, followers), jacobian over the joint vector
    lagrangian_gradient: CompiledFunction  # grad_x (lam^T g), jacobian over (x_i, lam_i)
    constraint: CompiledFunction  # g_i(x_i)
    cost: CompiledFunction | None = None


@dataclass
class MixedHierarchyGame:
    """Hierarchy graph plus per-robot problems, compiled for evaluation."""

    graph: HierarchyGraph
    problems: tuple
    sets: RobotSets
    layout: VariableLayout
    blocks: list
    param_blocks: list
    param_values: np.ndarray
    order: list
    functions: dict = field(repr=False)

    @property
    def num_robots(self) -> int:
        return self.graph.num_robots

    @property
    def size(self) -> int:
        return self.layout.size

    def with_params(self, updates: Mapping) -> "MixedHierarchyGame":
        """Copy sharing compiled functions, with some parameter blocks replaced."""
        values = self.param_values.copy()
        names = {}
        off = 0
        for block in self.param_blocks:
            names[block.name] = slice(off, off + block.size)
            off += block.size
        for key, val in updates.items():
            name = key.name if isinstance(key, ParamBlock) else key
            s = names[name]
            val = np.asarray(val, dtype=float).ravel()
            if val.size != s.stop - s.start:
                raise DimensionMismatch(f"parameter {name!r} expects {s.stop - s.start} values")
            values[s] = val
        out = copy.copy(self)
        out.param_values = values
        return out

    def param(self, name: str) -> np.ndarray:
        off = 0
        for block in self.param_blocks:
            if block.name == name:
                return self.param_values[off: off + block.size].copy()
            off += block.size
        raise KeyError(name)

    def cost_value(self, i: int, joint: np.ndarray) -> float:
        fn = self.functions[i]
        if fn.cost is None:
            fn.cost = CompiledFunction([self.problems[i - 1].cost], self.blocks, self.param_blocks, jacobian=False)
        return float(fn.cost.value(joint, self.param_values)[0])

    def constraint_value(self, i: int, xi: np.ndarray) -> np.ndarray:
        return self.functions[i].constraint.value(xi, self.param_values)

    def cost_gradient(self, i: int, joint: np.ndarray) -> np.ndarray:
        """Gradient of ``f_i`` with respect to robot ``i``'s own and followers' blocks."""
        return self.functions[i].cost_gradient.value(joint, self.param_values)


def build_game(
    graph: HierarchyGraph,
    problems: Sequence[RobotProblem],
    params: Mapping | Sequence | None = None,
) -> MixedHierarchyGame:
    """Validate dimensions, derive robot sets and compile every robot's functions.

    ``params`` maps :class:`ParamBlock` objects to their numeric values.
    """
    problems = tuple(problems)
    N = graph.num_robots
    if len(problems) != N:
        raise DimensionMismatch(f"graph has {N} robots but {len(problems)} problems were given")
    sets = compute_sets(graph)
    dims = [p.dim for p in problems]
    blocks = strategy_blocks(dims)
    if params is None:
        params = {}
    items = list(params.items()) if isinstance(params, Mapping) else list(params)
    param_blocks = [b for b, _ in items]
    values = []
    for b, v in items:
        v = np.asarray(v, dtype=float).ravel()
        if v.size != b.size:
            raise DimensionMismatch(f"parameter {b.name!r} expects {b.size} values, got {v.size}")
        values.append(v)
    param_values = np.concatenate(values) if values else np.zeros(0)

    layout = VariableLayout(sets, dims, [p.num_constraints for p in problems])
    functions = {}
    for i in graph.robots:
        prob = problems[i - 1]
        own = blocks[i - 1]
        wrt_blocks = [own] + [blocks[j - 1] for j in layout.followers[i]]
        wrt = [v for b in wrt_blocks for v in b]
        try:
            cost_grad = CompiledFunction(gradient(prob.cost, wrt), blocks, param_blocks, name=f"gradf{i}")
        except UndeclaredVariable as exc:
            raise DimensionMismatch(f"cost of robot {i}: {exc}") from exc
        lam = VarBlock(f"lam{i}", prob.num_constraints)
        lag = add(*[mul(l, g) for l, g in zip(lam, prob.constraints)])
        try:
            lag_grad = CompiledFunction(gradient(lag, list(own)), [own, lam], param_blocks, name=f"gradlg{i}")
            cons = CompiledFunction(list(prob.constraints), [own], param_blocks, name=f"g{i}")
        except UndeclaredVariable as exc:
            raise DimensionMismatch(f"constraints of robot {i} must depend only on its own strategy: {exc}") from exc
        functions[i] = _RobotFunctions(cost_grad, lag_grad, cons)

    game = MixedHierarchyGame(
        graph=graph,
        problems=problems,
        sets=sets,
        layout=layout,
        blocks=blocks,
        param_blocks=param_blocks,
        param_values=param_values,
        order=reverse_topological_order(graph),
        functions=functions,
    )
    if layout.size != layout.expected_size():
        raise AssertionError("layout size does not match the row count")
    return game
