"""Inexact Newton iteration with a backtracking line search on ``||F||_2``."""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .expr import DimensionMismatch, NonDifferentiablePoint
from .game import MixedHierarchyGame
from .kkt import KKTSystem, NonFiniteResidual, SingularPolicySystem, consensus_gap

__all__ = [
    "Status",
    "SolverOptions",
    "SolverResult",
    "SingularSystem",
    "solve",
    "solve_linear",
    "default_initialization",
    "warm_start",
    "time_shift",
    "ConvergenceReport",
    "convergence_report",
]

DENSE_LIMIT = 200


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILED = "LineSearchFailed"
    SINGULAR_SYSTEM = "SingularSystem"


class SingularSystem(np.linalg.LinAlgError):
    """The joint Newton matrix could not be factorized."""


@dataclass(frozen=True)
class SolverOptions:
    """Newton and line-search settings.

    ``tol`` is compared against ``||F||_2^2``.  ``linear_solver`` is one of
    ``"auto"`` (dense up to 200 unknowns, sparse LU above), ``"dense"`` or
    ``"sparse"``.
    """

    tol: float = 1e-6
    max_iters: int = 100
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    min_step: float = 1e-6
    line_search: bool = True
    regularize: bool = False
    linear_solver: str = "auto"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        for name in ("shrink", "sufficient_decrease", "min_step"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 < self.initial_step <= 1:
            raise ValueError("initial_step must lie in (0, 1]")
        if self.linear_solver not in ("auto", "dense", "sparse"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolverResult:
    """Final iterate, status and per-iteration traces.

    ``residuals`` and ``consensus_gaps`` have ``iterations + 1`` entries;
    ``steps`` and ``min_pivots`` have one entry per accepted iteration.
    """

    w: np.ndarray
    status: Status
    iterations: int
    residuals: list
    steps: list
    consensus_gaps: list
    min_pivots: list
    wall_time: float
    message: str = ""
    game: MixedHierarchyGame | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == Status.CONVERGED

    def strategies(self) -> dict[int, np.ndarray]:
        return self.game.layout.strategies(self.w)

    def diagnostics(self) -> list[dict]:
        """Rows for the per-iteration diagnostic CSV."""
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


def solve_linear(J, rhs: np.ndarray, method: str = "auto") -> np.ndarray:
    """Solve ``J x = rhs`` with a direct factorization and one refinement step if needed."""
    n = rhs.shape[0]
    use_dense = method == "dense" or (method == "auto" and n <= DENSE_LIMIT)
    if use_dense:
        A = J.toarray() if sp.issparse(J) else np.asarray(J)
        with warnings.catch_warnings():
            warnings.simplefilter("error", la.LinAlgWarning)
            try:
                lu = la.lu_factor(A, check_finite=False)
            except (la.LinAlgWarning, ValueError) as exc:
                raise SingularSystem(str(exc)) from exc
        if np.min(np.abs(np.diag(lu[0]))) == 0.0:
            raise SingularSystem("exactly singular Newton matrix")
        solve_ = lambda b: la.lu_solve(lu, b, check_finite=False)  # noqa: E731
        matvec = A.dot
    else:
        A = sp.csc_matrix(J)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                factor = spla.splu(A)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise SingularSystem(str(exc)) from exc
        solve_ = factor.solve
        matvec = A.dot
    x = solve_(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("non-finite Newton step")
    scale = max(np.linalg.norm(rhs), 1e-300)
    r = rhs - matvec(x)
    if np.linalg.norm(r) > 1e-10 * scale:
        x = x + solve_(r)
    return x


def solve(
    game: MixedHierarchyGame,
    w0: np.ndarray | None = None,
    options: SolverOptions | None = None,
    callback: Callable[[int, np.ndarray, float], None] | None = None,
) -> SolverResult:
    """Find ``w`` with ``F(w) = 0`` by Newton steps on the quasi-policy Jacobian.

    Each iteration rebuilds the follower policies at the current iterate,
    solves ``dF * d = -F`` and backtracks ``alpha`` until
    ``||F(w + alpha d)|| <= (1 - c alpha) ||F(w)||``.  Trial points with
    non-finite residuals or singular policy systems count as rejections.
    """
    options = options or SolverOptions()
    system = KKTSystem(game, regularize=options.regularize)
    w = default_initialization(game) if w0 is None else np.array(w0, dtype=float, copy=True)
    if w.shape != (game.size,):
        raise DimensionMismatch(f"initial guess has shape {w.shape}, expected ({game.size},)")
    start = time.perf_counter()
    residuals, steps, gaps, pivots = [], [], [], []

    def finish(status, message=""):
        return SolverResult(
            w, status, len(steps), residuals, steps, gaps, pivots, time.perf_counter() - start, message, game
        )

    try:
        ev = system.evaluate(w)
    except SingularPolicySystem as exc:
        residuals.append(np.nan)
        gaps.append(consensus_gap(game.layout, w))
        return finish(Status.SINGULAR_SYSTEM, str(exc))
    norm = ev.norm
    residuals.append(norm)
    gaps.append(consensus_gap(game.layout, w))
    for k in range(options.max_iters + 1):
        if norm * norm <= options.tol:
            return finish(Status.CONVERGED)
        if k == options.max_iters:
            break
        try:
            direction = solve_linear(ev.jacobian, -ev.residual, options.linear_solver)
        except SingularSystem as exc:
            return finish(Status.SINGULAR_SYSTEM, str(exc))
        alpha = options.initial_step
        accepted = None
        while True:
            trial = w + alpha * direction
            try:
                ev_t = system.evaluate(trial)
                ok = not options.line_search or ev_t.norm <= (1.0 - options.sufficient_decrease * alpha) * norm
            except (SingularPolicySystem, NonFiniteResidual, NonDifferentiablePoint):
                if not options.line_search:
                    return finish(Status.SINGULAR_SYSTEM, "full step reached an invalid point")
                ok = False
            if ok:
                accepted = ev_t
                break
            alpha *= options.shrink
            if alpha < options.min_step:
                break
        if accepted is None:
            return finish(Status.LINE_SEARCH_FAILED, f"no sufficient decrease at iteration {k}")
        w = trial
        ev = accepted
        norm = ev.norm
        residuals.append(norm)
        steps.append(alpha)
        gaps.append(consensus_gap(game.layout, w))
        pivots.append(ev.min_pivot)
        if callback is not None:
            callback(k + 1, w, norm)
    return finish(Status.MAX_ITERATIONS)


def default_initialization(
    game: MixedHierarchyGame,
    strategies: Mapping[int, np.ndarray] | Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """Primal blocks from guesses (zeros if absent), copies equal to primals, duals zero."""
    lay = game.layout
    w = np.zeros(lay.size)
    if strategies is not None:
        items = strategies.items() if isinstance(strategies, Mapping) else enumerate(strategies, start=1)
        for i, x in items:
            x = np.asarray(x, dtype=float).ravel()
            if x.size != lay.dims[i]:
                raise DimensionMismatch(f"guess for robot {i} has {x.size} entries, expected {lay.dims[i]}")
            w[lay.x[i]] = x
    for (i, j), s in lay.pred.items():
        w[s] = w[lay.x[j]]
    return w


def warm_start(
    game: MixedHierarchyGame,
    previous: np.ndarray,
    shift: Callable[[np.ndarray, int], np.ndarray] | None = None,
    dual_shift: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> np.ndarray:
    """Initial guess from a previous solution.

    ``shift(values, robot)`` maps a strategy-shaped vector of ``robot`` to its
    time-shifted version.  It is applied to primal blocks, predicted copies
    and policy duals.  ``dual_shift`` does the same for constraint duals,
    which are carried over unchanged when it is omitted.
    """
    lay = game.layout
    w = np.array(previous, dtype=float, copy=True)
    if w.shape != (lay.size,):
        raise DimensionMismatch(f"previous solution has shape {w.shape}, expected ({lay.size},)")
    if shift is not None:
        for i in game.graph.robots:
            w[lay.x[i]] = shift(w[lay.x[i]], i)
        for (i, j), s in lay.pred.items():
            w[s] = shift(w[s], j)
            w[lay.psi[(i, j)]] = shift(w[lay.psi[(i, j)]], j)
    if dual_shift is not None:
        for i in game.graph.robots:
            w[lay.lam[i]] = dual_shift(w[lay.lam[i]], i)
    return w


def time_shift(values: np.ndarray, stride: int) -> np.ndarray:
    """Drop the first ``stride`` entries and repeat the final ``stride`` entries."""
    values = np.asarray(values, dtype=float)
    if stride <= 0 or values.size < stride or values.size % stride:
        raise DimensionMismatch("stride must divide the vector length")
    return np.concatenate([values[stride:], values[-stride:]])


@dataclass
class ConvergenceReport:
    monotone: bool
    early_decrease: float
    terminal_slope: float
    num_points: int


def convergence_report(result: SolverResult | Sequence[float], window: int = 5) -> ConvergenceReport:
    """Monotonicity, early-regime decrease and terminal slope of ``log10 ||F||``.

    ``early_decrease`` is the smallest drop ``||F_k|| - ||F_{k+1}||`` over the
    iterations whose residual exceeds the final one by a factor of 10 or more
    (the damped regime).  ``terminal_slope`` is the least-squares slope of
    ``log10 ||F_k||`` against ``k`` over the last ``window`` points.
    """
    trace = np.asarray(result.residuals if isinstance(result, SolverResult) else result, dtype=float)
    diffs = np.diff(trace)
    monotone = bool(np.all(diffs <= 0.0))
    final = trace[-1] if trace.size else np.nan
    early = [trace[k] - trace[k + 1] for k in range(trace.size - 1) if trace[k] >= 10.0 * final]
    early_decrease = float(min(early)) if early else 0.0
    tail = trace[-window:]
    tail = np.maximum(tail, np.finfo(float).tiny)
    if tail.size >= 2:
        ks = np.arange(tail.size, dtype=float)
        slope = float(np.polyfit(ks, np.log10(tail), 1)[0])
    else:
        slope = float("nan")
    return ConvergenceReport(monotone, early_decrease, slope, int(trace.size))
