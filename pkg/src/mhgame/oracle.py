"""Independent reference computations used to check the main solver.

Nothing here calls into the KKT assembly or the Newton solver: closed-form
solutions of linear-quadratic games, a per-robot equality-constrained Newton
check for leaf robots, and central finite differences.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .expr import CompiledFunction, ParamBlock, add, gradient, mul
from .game import MixedHierarchyGame, RobotProblem, build_game, strategy_blocks
from .hierarchy import HierarchyGraph, compute_sets

__all__ = [
    "LQGame",
    "random_lq_game",
    "lq_problems",
    "lq_to_game",
    "lq_nash_solve",
    "lq_stackelberg_2p",
    "LeafCheck",
    "leaf_local_optimality_check",
    "fd_jacobian",
]


@dataclass
class LQGame:
    """Quadratic costs ``0.5 z^T Q_i z + q_i^T z`` with constraints ``A_i z_i = b_i``.

    ``z`` is the joint strategy (robot blocks in index order).
    """

    graph: HierarchyGraph
    dims: list
    Q: list
    q: list
    A: list
    b: list

    @property
    def num_robots(self) -> int:
        return len(self.dims)

    def offsets(self) -> list[int]:
        return [0] + list(np.cumsum(self.dims))

    def block(self, i: int) -> slice:
        o = self.offsets()
        return slice(o[i - 1], o[i])


def random_lq_game(
    graph: HierarchyGraph,
    dims: Sequence[int],
    num_constraints: Sequence[int],
    rng: np.random.Generator,
    coupling: float = 0.1,
) -> LQGame:
    """Random well-conditioned instance.

    Each ``Q_i`` is ``coupling`` times a random symmetric matrix over the joint
    strategy, plus ``B^T B + I`` on the robot's own block.  An identity is
    also added on the blocks of the robot's followers so that a leader's
    composed problem stays strongly convex.
    """
    dims = [int(d) for d in dims]
    n = sum(dims)
    sets = compute_sets(graph)
    offs = [0] + list(np.cumsum(dims))
    Q, q, A, b = [], [], [], []
    for i in graph.robots:
        C = rng.standard_normal((n, n))
        Qi = coupling * 0.5 * (C + C.T)
        own = slice(offs[i - 1], offs[i])
        B = rng.standard_normal((dims[i - 1], dims[i - 1]))
        Qi[own, own] += B.T @ B + np.eye(dims[i - 1])
        for j in sets.all_followers[i]:
            s = slice(offs[j - 1], offs[j])
            Qi[s, s] += np.eye(dims[j - 1])
        Q.append(Qi)
        q.append(rng.standard_normal(n))
        m = int(num_constraints[i - 1])
        A.append(rng.standard_normal((m, dims[i - 1])))
        b.append(rng.standard_normal(m))
    return LQGame(graph, dims, Q, q, A, b)


def lq_problems(lq: LQGame) -> list[RobotProblem]:
    """The same game written as expressions for :func:`build_game`."""
    blocks = strategy_blocks(lq.dims)
    z = [v for blk in blocks for v in blk]
    n = len(z)
    problems = []
    for i in range(1, lq.num_robots + 1):
        Qi, qi = lq.Q[i - 1], lq.q[i - 1]
        terms = []
        for a in range(n):
            terms.append(mul(qi[a], z[a]))
            terms.append(mul(0.5 * Qi[a, a], mul(z[a], z[a])))
            for c in range(a + 1, n):
                coef = 0.5 * (Qi[a, c] + Qi[c, a])
                if coef != 0.0:
                    terms.append(mul(coef, mul(z[a], z[c])))
        cost = add(*terms)
        own = blocks[i - 1]
        Ai, bi = lq.A[i - 1], lq.b[i - 1]
        cons = [add(*[mul(Ai[r, k], own[k]) for k in range(own.size)], -bi[r]) for r in range(Ai.shape[0])]
        problems.append(RobotProblem(lq.dims[i - 1], cost, tuple(cons)))
    return problems


def lq_to_game(lq: LQGame) -> MixedHierarchyGame:
    return build_game(lq.graph, lq_problems(lq))


def lq_nash_solve(lq: LQGame) -> np.ndarray:
    """Joint strategy of the pure Nash game from its stacked linear KKT system."""
    if lq.graph.edges:
        raise ValueError("lq_nash_solve needs a graph without edges")
    n = sum(lq.dims)
    ms = [a.shape[0] for a in lq.A]
    size = n + sum(ms)
    K = np.zeros((size, size))
    r = np.zeros(size)
    moff = n
    for i in range(1, lq.num_robots + 1):
        s = lq.block(i)
        K[s, :n] = lq.Q[i - 1][s, :]
        r[s] = -lq.q[i - 1][s]
        m = ms[i - 1]
        rows = slice(moff, moff + m)
        K[s, rows] = -lq.A[i - 1].T
        K[rows, s] = lq.A[i - 1]
        r[rows] = lq.b[i - 1]
        moff += m
    return la.solve(K, r)[:n]


def _eq_qp(H: np.ndarray, h: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimizer of ``0.5 x^T H x + h^T x`` subject to ``A x = b``."""
    n, m = H.shape[0], A.shape[0]
    K = np.block([[H, -A.T], [A, np.zeros((m, m))]])
    return la.solve(K, np.concatenate([-h, b]))[:n]


def lq_stackelberg_2p(lq: LQGame) -> np.ndarray:
    """Joint strategy of a two-robot Stackelberg game with robot 1 leading.

    The follower's exact affine best response ``z2 = K z1 + k`` comes from its
    KKT system.  It is substituted into the leader's cost, the resulting
    equality-constrained QP is solved for ``z1``, and ``z2`` follows.
    """
    if lq.num_robots != 2 or set(lq.graph.edges) != {(1, 2)}:
        raise ValueError("lq_stackelberg_2p needs exactly the edge 1 -> 2")
    s1, s2 = lq.block(1), lq.block(2)
    n1, n2 = lq.dims
    Q2, q2, A2, b2 = lq.Q[1], lq.q[1], lq.A[1], lq.b[1]
    m2 = A2.shape[0]
    KKT = np.block([[Q2[s2, s2], -A2.T], [A2, np.zeros((m2, m2))]])
    rhs_z1 = np.vstack([-Q2[s2, s1], np.zeros((m2, n1))])
    rhs_c = np.concatenate([-q2[s2], b2])
    lu = la.lu_factor(KKT)
    K = la.lu_solve(lu, rhs_z1)[:n2]
    k = la.lu_solve(lu, rhs_c)[:n2]
    T = np.vstack([np.eye(n1), K])
    t = np.concatenate([np.zeros(n1), k])
    Q1, q1 = lq.Q[0], lq.q[0]
    H = T.T @ Q1 @ T
    h = T.T @ (Q1 @ t + q1)
    z1 = _eq_qp(0.5 * (H + H.T), h, lq.A[0], lq.b[0])
    return np.concatenate([z1, K @ z1 + k])


# leaf optimality -----------------------------------------------------------

_LEAF_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _leaf_functions(game: MixedHierarchyGame, i: int):
    prob = game.problems[i - 1]
    key = prob.cost
    per_cost = _LEAF_CACHE.setdefault(key, {})
    tag = (i, tuple(b.name for b in game.param_blocks), prob.constraints)
    if tag not in per_cost:
        blocks = game.blocks
        own = blocks[i - 1]
        grad = CompiledFunction(gradient(prob.cost, list(own)), blocks, game.param_blocks, jacobian_wrt=[own])
        cost = CompiledFunction([prob.cost], blocks, game.param_blocks, jacobian=False)
        lam = ParamBlock(f"__leaf_lam{i}", prob.num_constraints)
        lag = add(*[mul(l, g) for l, g in zip(lam, prob.constraints)])
        cons = CompiledFunction(list(prob.constraints), [own], game.param_blocks)
        lag_grad = CompiledFunction(gradient(lag, list(own)), [own], list(game.param_blocks) + [lam])
        per_cost[tag] = (grad, cost, cons, lag_grad)
    return per_cost[tag]


@dataclass
class LeafCheck:
    robot: int
    passed: bool
    step_norm: float
    worst_decrease: float
    threshold: float
    stationarity: float


def leaf_local_optimality_check(
    game: MixedHierarchyGame,
    w: np.ndarray,
    i: int,
    rng: np.random.Generator | None = None,
    num_samples: int = 100,
    eps: float = 1e-3,
    step_tol: float = 1e-6,
) -> LeafCheck:
    """Check that a leaf robot's block of ``w`` is a local solution of its own problem.

    All other strategies are frozen at ``w``.  One full Newton step of the
    robot's equality-constrained problem is taken from ``(x_i, lam_i)``; its
    norm must be at most ``step_tol``.  Then ``num_samples`` random
    perturbations of length ``eps`` in the null space of the constraint
    Jacobian must not lower the cost by more than ``5 eps^2``.
    """
    if game.layout.followers[i]:
        raise ValueError(f"robot {i} is not a leaf")
    rng = np.random.default_rng(0) if rng is None else rng
    lay = game.layout
    w = np.asarray(w, dtype=float)
    joint = np.concatenate([w[lay.x[k]] for k in game.graph.robots])
    own = lay.joint_block(i)
    lam = w[lay.lam[i]]
    grad_f, cost_f, cons_f, lag_grad = _leaf_functions(game, i)
    p = game.param_values
    gf, Hf_vals = grad_f.value_and_jacobian_values(joint, p)
    Hf = grad_f.assemble_jacobian(Hf_vals, dense=True)[:, own]
    n = lay.dims[i]
    m = lam.size
    if m:
        xi = joint[own]
        g, Jg = cons_f.value(xi, p), cons_f.jacobian(xi, p, dense=True)
        pl = np.concatenate([p, lam])
        lg, Hg_vals = lag_grad.value_and_jacobian_values(xi, pl)
        Hg = lag_grad.assemble_jacobian(Hg_vals, dense=True)
    else:
        g, Jg, lg, Hg = np.zeros(0), np.zeros((0, n)), np.zeros(n), np.zeros((n, n))
    H = Hf - Hg
    K = np.block([[H, -Jg.T], [Jg, np.zeros((m, m))]])
    rhs = -np.concatenate([gf - lg, g])
    step = np.linalg.lstsq(K, rhs, rcond=None)[0]
    step_norm = float(np.linalg.norm(step))

    N = la.null_space(Jg) if m else np.eye(n)
    f0 = float(cost_f.value(joint, p)[0])
    worst = np.inf
    if N.shape[1]:
        for _ in range(num_samples):
            d = N @ rng.standard_normal(N.shape[1])
            d *= eps / np.linalg.norm(d)
            trial = joint.copy()
            trial[own] += d
            worst = min(worst, float(cost_f.value(trial, p)[0]) - f0)
    threshold = -5.0 * eps**2
    passed = step_norm <= step_tol and worst >= threshold
    return LeafCheck(i, bool(passed), step_norm, worst, threshold, float(np.linalg.norm(gf - lg)))


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x``."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        J[:, k] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2.0 * step)
    return J
