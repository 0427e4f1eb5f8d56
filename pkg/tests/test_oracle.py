import numpy as np
import pytest

from mhgame.hierarchy import HierarchyGraph
from mhgame.oracle import (
    fd_jacobian,
    leaf_local_optimality_check,
    lq_nash_solve,
    lq_stackelberg_2p,
    lq_to_game,
    random_lq_game,
)
from mhgame.solver import SolverOptions, solve


def make(edges, n, seed, m=1):
    return random_lq_game(HierarchyGraph(n, edges), [3] * n, [m] * n, np.random.default_rng(seed))


def joint(game, w):
    return np.concatenate([w[game.layout.x[i]] for i in game.graph.robots])


def test_random_instances_are_well_posed():
    lq = make([(1, 2), (2, 3)], 3, seed=0)
    for i in (1, 2, 3):
        Q = lq.Q[i - 1]
        assert np.allclose(Q, Q.T)
        s = lq.block(i)
        assert np.linalg.eigvalsh(Q[s, s]).min() > 0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_nash_oracle_matches_solver(n):
    lq = make((), n, seed=n)
    game = lq_to_game(lq)
    res = solve(game, options=SolverOptions(line_search=False, max_iters=1, tol=1e-30))
    assert np.max(np.abs(joint(game, res.w) - lq_nash_solve(lq))) <= 1e-8


def test_stackelberg_oracle_matches_solver():
    lq = make([(1, 2)], 2, seed=10)
    game = lq_to_game(lq)
    res = solve(game, options=SolverOptions(line_search=False, max_iters=1, tol=1e-30))
    assert np.max(np.abs(joint(game, res.w) - lq_stackelberg_2p(lq))) <= 1e-8


def test_stackelberg_differs_from_nash():
    lq = make([(1, 2)], 2, seed=11)
    nash = make((), 2, seed=11)
    assert np.max(np.abs(lq_stackelberg_2p(lq) - lq_nash_solve(nash))) > 1e-6


def test_oracle_argument_checks():
    with pytest.raises(ValueError):
        lq_nash_solve(make([(1, 2)], 2, seed=0))
    with pytest.raises(ValueError):
        lq_stackelberg_2p(make((), 2, seed=0))


def test_leaf_check_passes_at_solution_and_fails_off_it():
    lq = make([(1, 2), (1, 3)], 3, seed=12)
    game = lq_to_game(lq)
    res = solve(game, options=SolverOptions(tol=1e-20))
    for i in (2, 3):
        chk = leaf_local_optimality_check(game, res.w, i)
        assert chk.passed, chk
    moved = res.w.copy()
    moved[game.layout.x[2]] += 0.1
    assert not leaf_local_optimality_check(game, moved, 2).passed
    with pytest.raises(ValueError):
        leaf_local_optimality_check(game, res.w, 1)


def test_leaf_check_detects_a_saddle():
    from mhgame.expr import mul
    from mhgame.game import RobotProblem, build_game, strategy_blocks

    (x,) = strategy_blocks([2])
    game = build_game(HierarchyGraph(1), [RobotProblem(2, mul(x[0], x[0]) - mul(10.0, mul(x[1], x[1])))])
    chk = leaf_local_optimality_check(game, np.zeros(2), 1, eps=1e-2)
    assert chk.step_norm == 0.0
    assert not chk.passed


def test_fd_jacobian_exactness():
    A = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]])
    assert np.allclose(fd_jacobian(lambda x: A @ x, np.array([0.3, 0.7])), A, atol=1e-10)
    g = fd_jacobian(lambda x: np.array([x[0] ** 2 + 3 * x[0] * x[1]]), np.array([1.0, 2.0]))
    assert np.allclose(g, [[8.0, 3.0]], atol=1e-10)
    with pytest.raises(ValueError):
        fd_jacobian(lambda x: x, np.zeros(2), step=0.0)
