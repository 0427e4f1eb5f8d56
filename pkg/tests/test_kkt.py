import itertools

import numpy as np
import pytest
import scipy.optimize as so

from mhgame.expr import add, exp, mul, sin, sq_norm
from mhgame.game import RobotProblem, build_game, strategy_blocks
from mhgame.hierarchy import CycleDetected, HierarchyGraph, validate_forest
from mhgame.kkt import (
    KKTSystem,
    NonFiniteResidual,
    SingularPolicySystem,
    assemble,
    build_leaf_kkt,
    build_nonleaf_kkt,
    consensus_gap,
    frozen_residual,
    linearize_policy,
    write_diagnostic_csv,
)
from mhgame.oracle import fd_jacobian, lq_stackelberg_2p, lq_to_game, random_lq_game
from mhgame.solver import SolverOptions, solve


def lq(edges, n, dims=3, m=1, seed=0):
    rng = np.random.default_rng(seed)
    return random_lq_game(HierarchyGraph(n, edges), [dims] * n, [m] * n, rng)


def test_leaf_rows_at_analytic_stationary_point():
    (x,) = strategy_blocks([2])
    game = build_game(HierarchyGraph(1), [RobotProblem(2, mul(0.5, sq_norm(list(x))), (add(x[0], -1.0),))])
    w = np.array([1.0, 0.0, 1.0])
    assert np.allclose(build_leaf_kkt(game, 1, w), 0.0)
    assert build_leaf_kkt(game, 1, np.array([2.0, 1.0, 0.0])).tolist() == [2.0, 1.0, 1.0]


def test_pure_nash_residual_equals_stacked_nash_kkt():
    g = lq((), 3, dims=2, m=1, seed=4)
    game = lq_to_game(g)
    lay = game.layout
    rng = np.random.default_rng(5)
    for _ in range(3):
        w = rng.standard_normal(game.size)
        z = np.concatenate([w[lay.x[i]] for i in (1, 2, 3)])
        expected = []
        for i in (1, 2, 3):
            s = g.block(i)
            lam = w[lay.lam[i]]
            expected.append(g.Q[i - 1][s] @ z + g.q[i - 1][s] - g.A[i - 1].T @ lam)
            expected.append(g.A[i - 1] @ z[s] - g.b[i - 1])
        ev = assemble(game, w)
        assert not ev.policies
        assert np.allclose(ev.residual, np.concatenate(expected), atol=1e-12, rtol=0)


def test_tracking_follower_policy_is_identity():
    x1, x2 = strategy_blocks([2, 2])
    diff = [add(a, mul(-1.0, b)) for a, b in zip(x2, x1)]
    game = build_game(
        HierarchyGraph(2, [(1, 2)]),
        [RobotProblem(2, sq_norm(list(x1))), RobotProblem(2, mul(0.5, sq_norm(diff)))],
    )
    w = np.random.default_rng(0).standard_normal(game.size)
    pol = linearize_policy(game, 2, w)
    assert np.allclose(pol.blocks[1], np.eye(2), atol=1e-12)
    probe = np.array([0.3, -1.2])
    assert np.allclose(pol({1: probe}), probe, atol=1e-12)


def test_lq_policy_independent_of_base_point():
    game = lq_to_game(lq([(1, 2), (2, 3)], 3, seed=1))
    rng = np.random.default_rng(2)
    a = linearize_policy(game, 3, rng.standard_normal(game.size))
    b = linearize_policy(game, 3, rng.standard_normal(game.size))
    ca, Pa = a.affine_form()
    cb, Pb = b.affine_form()
    assert np.max(np.abs(ca - cb)) <= 1e-10
    for l in Pa:
        assert np.max(np.abs(Pa[l] - Pb[l])) <= 1e-10


def _nonlinear_chain():
    x1, x2 = strategy_blocks([2, 2])
    f1 = add(mul(0.5, sq_norm(list(x1))), mul(0.5, sq_norm([add(v, -1.0) for v in x2])))
    f2 = add(
        mul(0.5, sq_norm([add(x2[k], mul(-1.0, sin(x1[k]))) for k in range(2)])),
        mul(0.1, mul(mul(x2[0], x2[0]), mul(x2[0], x2[0]))),
    )
    g2 = (add(x2[0], x2[1], mul(0.2, mul(x2[1], x2[1])), -1.0),)
    return build_game(HierarchyGraph(2, [(1, 2)]), [RobotProblem(2, f1), RobotProblem(2, f2, g2)])


def _best_response(x1, guess):
    """Follower KKT of the nonlinear chain, written directly in numpy."""

    def kkt(y):
        a, b, lam = y
        return [
            a - np.sin(x1[0]) + 0.4 * a**3 - lam,
            b - np.sin(x1[1]) - lam * (1 + 0.4 * b),
            a + b + 0.2 * b**2 - 1.0,
        ]

    sol = so.root(kkt, guess, tol=1e-13)
    assert sol.success
    return sol.x


def test_nonlinear_policy_matches_best_response_fd():
    game = _nonlinear_chain()
    lay = game.layout
    x1 = np.array([0.3, -0.2])
    y = _best_response(x1, [0.5, 0.5, 0.0])
    w = np.zeros(game.size)
    w[lay.x[1]] = x1
    w[lay.x[2]] = y[:2]
    w[lay.lam[2]] = y[2:]
    w[lay.pred[(1, 2)]] = y[:2]
    pol = linearize_policy(game, 2, w)
    P_fd = fd_jacobian(lambda v: _best_response(v, y)[:2], x1, 1e-6)
    assert np.max(np.abs(pol.blocks[1] - P_fd)) <= 1e-3 * max(1.0, np.max(np.abs(P_fd)))
    assert np.allclose(pol.offset, 0.0, atol=1e-10)


def test_stackelberg_rows_vanish_at_bilevel_solution():
    g = lq([(1, 2)], 2, seed=7)
    game = lq_to_game(g)
    res = solve(game, options=SolverOptions(line_search=False, max_iters=1, tol=1e-30))
    z = np.concatenate([res.w[game.layout.x[i]] for i in (1, 2)])
    assert np.max(np.abs(z - lq_stackelberg_2p(g))) <= 1e-8
    assert np.linalg.norm(build_nonleaf_kkt(game, 1, res.w)) <= 1e-8
    assert consensus_gap(game.layout, res.w) <= 1e-12


def test_decoupled_follower_gives_copy_gradient_dual():
    x1, x2 = strategy_blocks([2, 2])
    f1 = add(sq_norm(list(x1)), mul(x1[0], x2[1]), mul(0.5, sq_norm(list(x2))))
    f2 = mul(0.5, sq_norm([add(v, -2.0) for v in x2]))
    game = build_game(HierarchyGraph(2, [(1, 2)]), [RobotProblem(2, f1), RobotProblem(2, f2)])
    res = solve(game)
    assert res.converged
    lay = game.layout
    ev = assemble(game, res.w)
    assert np.allclose(ev.policies[2].blocks[1], 0.0)
    x1v, pred = res.w[lay.x[1]], res.w[lay.pred[(1, 2)]]
    grad_copy = np.array([pred[0], x1v[0] + pred[1]])
    assert np.allclose(res.w[lay.psi[(1, 2)]], grad_copy, atol=1e-6)
    # own stationarity is the plain NLP condition 2 x1 + (x2_2, 0) = 0
    assert np.allclose(2 * x1v + np.array([pred[1], 0.0]), 0.0, atol=1e-6)


def test_grandchild_policy_uses_predicted_intermediate():
    x = strategy_blocks([1, 1, 1, 1])
    allv = [b[0] for b in x]
    probs = [RobotProblem(1, add(mul(0.5, sq_norm(allv)), mul(0.3, mul(allv[k], add(*allv))))) for k in range(4)]
    game = build_game(HierarchyGraph(4, [(1, 2), (1, 3), (2, 4)]), probs)
    lay = game.layout
    assert set(lay.followers[1]) == {2, 3, 4}
    ev = assemble(game, np.random.default_rng(0).standard_normal(game.size))
    J = ev.jacobian.toarray()
    # row (c) of robot 1 for follower 4 depends on robot 1's copy of robot 2
    rows_c4 = [k for k in range(lay.robot[1].stop) if lay.describe(k).startswith("robot 1 policy constraint on robot 4")]
    assert len(rows_c4) == 1
    pred12 = range(lay.pred[(1, 2)].start, lay.pred[(1, 2)].stop)
    assert np.any(J[np.ix_(rows_c4, list(pred12))] != 0)


def test_frozen_jacobian_matches_fd():
    for game in (lq_to_game(lq([(1, 2), (1, 3), (2, 4)], 4, dims=2, seed=3)), _nonlinear_chain()):
        rng = np.random.default_rng(11)
        system = KKTSystem(game)
        for _ in range(3):
            w = rng.standard_normal(game.size) * 0.5
            ev = system.evaluate(w)
            pol = ev.policies
            J = system.evaluate_frozen(w, pol).jacobian.toarray()
            v = rng.standard_normal(game.size)
            v /= np.linalg.norm(v)
            h = 1e-6
            fd = (system.frozen_residual(w + h * v, pol) - system.frozen_residual(w - h * v, pol)) / (2 * h)
            assert np.linalg.norm(J @ v - fd) <= 1e-4 * (1 + ev.norm)
            Jfd = fd_jacobian(lambda z: frozen_residual(game, z, pol), w)
            assert np.allclose(J, Jfd, atol=1e-6, rtol=1e-4)


def test_lq_jacobian_constant_across_iterates():
    game = lq_to_game(lq([(1, 3), (3, 2)], 3, seed=9))
    rng = np.random.default_rng(0)
    J1 = assemble(game, rng.standard_normal(game.size)).jacobian.toarray()
    J2 = assemble(game, rng.standard_normal(game.size)).jacobian.toarray()
    assert np.max(np.abs(J1 - J2)) <= 1e-9


def test_consensus_gap_cases():
    game = lq_to_game(lq([(1, 2)], 2, seed=0))
    lay = game.layout
    w = np.zeros(game.size)
    w[lay.x[2]] = [1.0, 2.0, 3.0]
    w[lay.pred[(1, 2)]] = w[lay.x[2]]
    assert consensus_gap(lay, w) == 0.0
    w[lay.pred[(1, 2)].start + 1] += 0.25
    assert consensus_gap(lay, w) == 0.25
    assert consensus_gap(lq_to_game(lq((), 2)).layout, np.ones(8)) == 0.0


def test_singular_policy_and_regularized_fallback():
    x1, x2 = strategy_blocks([1, 2])
    f2 = mul(0.5, mul(add(x2[0], mul(-1.0, x1[0])), add(x2[0], mul(-1.0, x1[0]))))
    game = build_game(HierarchyGraph(2, [(1, 2)]), [RobotProblem(1, sq_norm(list(x1))), RobotProblem(2, f2)])
    w = np.zeros(game.size)
    with pytest.raises(SingularPolicySystem) as info:
        assemble(game, w)
    assert info.value.robot == 2
    ev = assemble(game, w, regularize=True)
    assert ev.policies[2].regularized


def test_non_finite_residual_reports_rows():
    (x,) = strategy_blocks([2])
    game = build_game(HierarchyGraph(1), [RobotProblem(2, exp(mul(x[0], x[0])))])
    with pytest.raises(NonFiniteResidual) as info:
        assemble(game, np.array([40.0, 0.0]))
    assert 0 in info.value.rows


def test_square_system_on_all_small_forests():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3, 4):
        for parents in itertools.product(range(n + 1), repeat=n):
            edges = [(p, c + 1) for c, p in enumerate(parents) if p]
            if any(p == c for p, c in edges):
                continue
            try:
                validate_forest(n, edges)
            except CycleDetected:
                continue
            dims = rng.integers(1, 4, n).tolist()
            blocks = strategy_blocks(dims)
            allv = [v for b in blocks for v in b]
            probs = [RobotProblem(d, add(sq_norm(list(b)), mul(0.05, sq_norm(allv)))) for d, b in zip(dims, blocks)]
            game = build_game(HierarchyGraph(n, edges), probs)
            ev = assemble(game, np.zeros(game.size))
            assert ev.residual.shape == (game.size,)
            assert ev.jacobian.shape == (game.size, game.size)


def test_diagnostic_csv(tmp_path):
    path = tmp_path / "diag.csv"
    write_diagnostic_csv(path, [{"iter": 0, "residual_norm": 0.1, "step_size": 1.0, "consensus_gap": 0.0, "min_pivot": ""}])
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,residual_norm,step_size,consensus_gap,min_pivot"
    assert lines[1] == "0,0.1,1.0,0.0,"
