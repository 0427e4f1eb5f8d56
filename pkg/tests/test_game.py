import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhgame.expr import DimensionMismatch, add, mul, sq_norm
from mhgame.game import RobotProblem, build_game, gather_cost_arguments, make_layout, strategy_blocks
from mhgame.hierarchy import HierarchyGraph, MultipleLeaders, compute_sets
from mhgame.kkt import KKTSystem


def simple_game(n, edges, dims, m):
    """Quadratic costs coupling every robot, ``m[i]`` linear constraints each."""
    blocks = strategy_blocks(dims)
    everything = [v for b in blocks for v in b]
    problems = []
    for i, blk in enumerate(blocks):
        cost = add(sq_norm(list(blk)), mul(0.1, sq_norm(everything)))
        cons = tuple(add(blk[k % blk.size], -float(k)) for k in range(m[i]))
        problems.append(RobotProblem(dims[i], cost, cons))
    return build_game(HierarchyGraph(n, edges), problems)


def test_layout_sizes_from_formula():
    assert simple_game(2, [(1, 2)], [2, 3], [1, 1]).size == 13
    assert simple_game(2, [], [2, 2], [1, 1]).size == 6
    assert simple_game(4, [(1, 2), (1, 3), (2, 4)], [4] * 4, [2] * 4).size == 56
    forest4 = simple_game(4, [(1, 2), (1, 3), (2, 4)], [2] * 4, [1, 1, 1, 1])
    assert forest4.size == sum(2 + 1 for _ in range(4)) + 2 * (2 + 2 + 2) + 2 * 2


def test_nash_has_no_copies_and_single_robot_is_an_nlp():
    g = simple_game(3, [], [2, 2, 2], [1, 1, 1])
    assert not g.layout.pred and not g.layout.psi
    one = simple_game(1, [], [3], [2])
    assert one.size == 5
    assert one.layout.x[1] == slice(0, 3)
    assert one.layout.lam[1] == slice(3, 5)


def test_slices_disjoint_and_covering():
    g = simple_game(4, [(1, 2), (1, 3), (2, 4)], [2, 3, 1, 2], [1, 2, 0, 1])
    lay = g.layout
    hit = np.zeros(lay.size, dtype=int)
    for d in (lay.x, lay.lam, lay.pred, lay.psi):
        for s in d.values():
            hit[s] += 1
    assert (hit == 1).all()
    # per-robot blocks are contiguous and in robot order
    assert lay.robot[1].start == 0
    for i in (2, 3, 4):
        assert lay.robot[i].start == lay.robot[i - 1].stop


def test_residual_rows_match_unknowns():
    g = simple_game(4, [(1, 3), (3, 2), (2, 4)], [2, 2, 2, 2], [1, 1, 1, 1])
    ev = KKTSystem(g).evaluate(np.zeros(g.size))
    assert ev.residual.shape == (g.size,)
    assert ev.jacobian.shape == (g.size, g.size)


def test_gather_views():
    g = simple_game(2, [(1, 2)], [2, 3], [1, 1])
    lay = g.layout
    w = np.arange(g.size, dtype=float)
    view1 = gather_cost_arguments(lay, 1, w)
    assert np.array_equal(view1[:2], w[lay.x[1]])
    assert np.array_equal(view1[2:], w[lay.pred[(1, 2)]])
    view2 = gather_cost_arguments(lay, 2, w)
    assert np.array_equal(view2, np.concatenate([w[lay.x[1]], w[lay.x[2]]]))

    nash = simple_game(2, [], [2, 2], [1, 1])
    w = np.arange(nash.size, dtype=float)
    assert np.array_equal(gather_cost_arguments(nash.layout, 1, w), np.concatenate([w[0:2], w[3:5]]))


def test_describe_names_every_entry():
    g = simple_game(2, [(1, 2)], [2, 3], [1, 1])
    names = [g.layout.describe(k) for k in range(g.size)]
    assert any("x1" in s or "robot 1" in s for s in names)
    assert len(names) == 13


def test_bad_inputs():
    blocks = strategy_blocks([2, 2])
    good = RobotProblem(2, sq_norm(list(blocks[0])))
    with pytest.raises(MultipleLeaders):
        build_game(HierarchyGraph(3, [(1, 3), (2, 3)]), [good] * 3)
    coupled = RobotProblem(2, sq_norm(list(blocks[0])), (add(blocks[0][0], blocks[1][0]),))
    with pytest.raises(DimensionMismatch):
        build_game(HierarchyGraph(2), [coupled, RobotProblem(2, sq_norm(list(blocks[1])))])
    with pytest.raises(DimensionMismatch):
        build_game(HierarchyGraph(2), [good])


@st.composite
def games(draw):
    n = draw(st.integers(1, 5))
    edges = []
    for k in range(2, n + 1):
        if draw(st.booleans()):
            edges.append((draw(st.integers(1, k - 1)), k))
    dims = draw(st.lists(st.integers(1, 3), min_size=n, max_size=n))
    m = [draw(st.integers(0, d)) for d in dims]
    return n, edges, dims, m


@settings(max_examples=30, deadline=None)
@given(games())
def test_layout_formula_and_round_trip(data):
    n, edges, dims, m = data
    g = simple_game(n, edges, dims, m)
    sets = compute_sets(g.graph)
    expected = sum(dims[i - 1] + m[i - 1] + 2 * sum(dims[j - 1] for j in sets.all_followers[i]) for i in g.graph.robots)
    assert g.size == expected
    lay = make_layout(g)
    w = np.random.default_rng(0).standard_normal(g.size)
    for i in g.graph.robots:
        assert np.array_equal(lay.scatter(i, w, lay.gather(i, w)), w)
