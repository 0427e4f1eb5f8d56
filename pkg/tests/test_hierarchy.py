import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhgame.hierarchy import (
    BadIndex,
    CycleDetected,
    DuplicateEdge,
    HierarchyGraph,
    MultipleLeaders,
    compute_sets,
    nash_groups,
    parse_edges,
    reverse_topological_order,
    subtree,
    validate_forest,
)

FOREST4 = HierarchyGraph(4, [(1, 2), (1, 3), (2, 4)])


def all_forests(n):
    """Every forest on robots 1..n, from parent assignments without cycles."""
    for parents in itertools.product(range(n + 1), repeat=n):
        edges = [(p, c + 1) for c, p in enumerate(parents) if p != 0]
        if any(p == c for p, c in edges):
            continue
        try:
            validate_forest(n, edges)
        except CycleDetected:
            continue
        yield edges


def closure_oracle(n, edges):
    """Transitive leader relation by repeated boolean squaring of the adjacency."""
    A = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        A[a - 1, b - 1] = True
    R = A.copy()
    while True:
        nxt = R | (R.astype(int) @ R.astype(int) > 0)
        if (nxt == R).all():
            return R
        R = nxt


@st.composite
def forests(draw, max_n=7):
    n = draw(st.integers(1, max_n))
    perm = draw(st.permutations(range(1, n + 1)))
    edges = []
    for k in range(1, n):
        if draw(st.booleans()):
            parent = perm[draw(st.integers(0, k - 1))]
            edges.append((parent, perm[k]))
    return n, edges


def test_four_robot_forest_set_table():
    s = compute_sets(FOREST4)
    assert s.direct_leaders == {1: set(), 2: {1}, 3: {1}, 4: {2}}
    assert s.all_leaders == {1: set(), 2: {1}, 3: {1}, 4: {1, 2}}
    assert s.direct_followers == {1: {2, 3}, 2: {4}, 3: set(), 4: set()}
    assert s.all_followers == {1: {2, 3, 4}, 2: {4}, 3: set(), 4: set()}
    assert s.nash_set == {1: set(), 2: {3}, 3: {2, 4}, 4: {3}}


def test_invalid_graphs_rejected_with_kind():
    with pytest.raises(CycleDetected):
        validate_forest(3, [(1, 2), (2, 3), (3, 1)])
    with pytest.raises(MultipleLeaders) as info:
        validate_forest(3, [(1, 3), (2, 3)])
    assert info.value.node == 3
    with pytest.raises(BadIndex):
        validate_forest(3, [(1, 4)])
    with pytest.raises(CycleDetected):
        validate_forest(2, [(1, 1)])
    with pytest.raises(DuplicateEdge):
        validate_forest(3, [(1, 2), (1, 2)])


def test_pure_nash_and_chain_sets():
    s = compute_sets(HierarchyGraph(3))
    for i in (1, 2, 3):
        assert s.nash_set[i] == {1, 2, 3} - {i}
        assert not s.all_leaders[i] and not s.all_followers[i]
    c = compute_sets(HierarchyGraph(3, [(1, 2), (2, 3)]))
    assert c.all_leaders[3] == {1, 2}
    assert all(not c.nash_set[i] for i in (1, 2, 3))


def test_topological_order_examples():
    assert reverse_topological_order(FOREST4) == [3, 4, 2, 1]
    assert reverse_topological_order(HierarchyGraph(3)) == [1, 2, 3]
    assert reverse_topological_order(HierarchyGraph(3, [(1, 2), (2, 3)])) == [3, 2, 1]
    chain = HierarchyGraph(4, [(1, 3), (3, 2), (2, 4)])
    assert reverse_topological_order(chain) == [4, 2, 3, 1]


def test_forest_order_is_a_valid_topological_sort():
    valid = [
        list(p)
        for p in itertools.permutations(range(1, 5))
        if all(p.index(b) < p.index(a) for a, b in FOREST4.edges)
    ]
    assert reverse_topological_order(FOREST4) in valid


def test_subtree_and_groups():
    assert subtree(FOREST4, 2) == ({2, 4}, {(2, 4)})
    assert subtree(FOREST4, 3) == ({3}, set())
    assert subtree(HierarchyGraph(3, [(1, 2), (2, 3)]), 1)[0] == {1, 2, 3}
    assert nash_groups(FOREST4) == [(1, {1, 2, 3, 4})]
    assert nash_groups(HierarchyGraph(3)) == [(1, {1}), (2, {2}), (3, {3})]
    two = HierarchyGraph(4, [(1, 2), (3, 4)])
    assert [r for r, _ in nash_groups(two)] == [1, 3]


def test_parse_edges_forms():
    assert parse_edges("1->3, 1->2") == [(1, 3), (1, 2)]
    assert parse_edges([[2, 1]]) == [(2, 1)]
    assert parse_edges("") == []
    with pytest.raises(ValueError):
        parse_edges("1-3")


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_exhaustive_forests_match_closure_oracle(n):
    count = 0
    for edges in all_forests(n):
        g = HierarchyGraph(n, edges)
        s = compute_sets(g)
        R = closure_oracle(n, edges)
        for i in range(1, n + 1):
            assert s.all_followers[i] == {j + 1 for j in np.flatnonzero(R[i - 1])}
            assert s.all_leaders[i] == {j + 1 for j in np.flatnonzero(R[:, i - 1])}
            assert len(s.all_leaders[i]) + len(s.all_followers[i]) + len(s.nash_set[i]) + 1 == n
        order = reverse_topological_order(g)
        assert all(order.index(b) < order.index(a) for a, b in edges)
        count += 1
    # rooted labeled forests on n nodes: (n + 1)^(n - 1)
    assert count == (n + 1) ** (n - 1)


@settings(max_examples=200, deadline=None)
@given(forests())
def test_partition_and_order_properties(data):
    n, edges = data
    g = HierarchyGraph(n, edges)
    s = compute_sets(g)
    for i in g.robots:
        parts = [s.all_leaders[i], s.all_followers[i], s.nash_set[i], {i}]
        assert sum(len(p) for p in parts) == n
        assert set().union(*parts) == set(g.robots)
    order = reverse_topological_order(g)
    assert sorted(order) == list(g.robots)
    for i in g.robots:
        assert all(order.index(j) < order.index(i) for j in s.all_followers[i])


@settings(max_examples=100, deadline=None)
@given(forests(), st.data())
def test_adding_a_second_leader_is_rejected(data, draw):
    n, edges = data
    led = [b for _, b in edges]
    if not led:
        return
    j = draw.draw(st.sampled_from(led))
    current = next(a for a, b in edges if b == j)
    others = [k for k in range(1, n + 1) if k not in (j, current)]
    if not others:
        return
    extra = draw.draw(st.sampled_from(others))
    with pytest.raises((MultipleLeaders, CycleDetected)):
        validate_forest(n, edges + [(extra, j)])
