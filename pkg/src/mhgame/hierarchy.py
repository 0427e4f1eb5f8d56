"""Information-structure graphs for mixed-hierarchy games.

Robots are labelled ``1..N``.  An edge ``(i, j)`` means robot ``i`` is the
direct leader of robot ``j``.  Only forests are accepted: every robot has at
most one direct leader and there are no directed cycles.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable

__all__ = [
    "HierarchyError",
    "CycleDetected",
    "MultipleLeaders",
    "BadIndex",
    "DuplicateEdge",
    "HierarchyGraph",
    "RobotSets",
    "validate_forest",
    "compute_sets",
    "reverse_topological_order",
    "subtree",
    "nash_groups",
    "parse_edges",
]


class HierarchyError(ValueError):
    """Base class for rejected information structures."""


class CycleDetected(HierarchyError):
    def __init__(self, path):
        self.path = tuple(path)
        super().__init__("directed cycle " + " -> ".join(str(p) for p in self.path))


class MultipleLeaders(HierarchyError):
    def __init__(self, node, leaders):
        self.node = node
        self.leaders = tuple(sorted(leaders))
        super().__init__(f"robot {node} has more than one direct leader: {list(self.leaders)}")


class BadIndex(HierarchyError):
    def __init__(self, edge, num_robots):
        self.edge = tuple(edge)
        super().__init__(f"edge {self.edge} references a robot outside 1..{num_robots}")


class DuplicateEdge(HierarchyError):
    def __init__(self, edge):
        self.edge = tuple(edge)
        super().__init__(f"edge {self.edge} listed more than once")


def validate_forest(num_robots: int, edges: Iterable[tuple[int, int]]) -> None:
    """Raise a :class:`HierarchyError` unless ``edges`` form a forest on ``1..num_robots``.

    Checks run in the order: index range, duplicates, multiple leaders, cycles
    (self-loops are reported as cycles of length one).
    """
    if num_robots < 1:
        raise HierarchyError(f"num_robots must be positive, got {num_robots}")
    edges = [tuple(e) for e in edges]
    for e in edges:
        if len(e) != 2 or not all(isinstance(v, int) and 1 <= v <= num_robots for v in e):
            raise BadIndex(e, num_robots)
    seen = set()
    for e in edges:
        if e in seen:
            raise DuplicateEdge(e)
        seen.add(e)
    leaders: dict[int, list[int]] = {}
    for i, j in edges:
        leaders.setdefault(j, []).append(i)
    for node in sorted(leaders):
        if len(leaders[node]) > 1:
            raise MultipleLeaders(node, leaders[node])
    # With at most one parent per node, a cycle is found by walking up parents.
    parent = {j: ls[0] for j, ls in leaders.items()}
    state: dict[int, int] = {}
    for start in range(1, num_robots + 1):
        path = []
        node = start
        while node is not None and state.get(node) is None:
            state[node] = 1
            path.append(node)
            node = parent.get(node)
        if node is not None and state[node] == 1 and node in path:
            cycle = path[path.index(node):]
            # report in leader -> follower direction
            cycle = list(reversed(cycle))
            raise CycleDetected(cycle + [cycle[0]])
        for p in path:
            state[p] = 2


@dataclass(frozen=True)
class HierarchyGraph:
    """Directed forest of leader -> follower edges over robots ``1..num_robots``."""

    num_robots: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        edges = [tuple(int(v) for v in e) for e in self.edges]
        validate_forest(self.num_robots, edges)
        object.__setattr__(self, "edges", tuple(sorted(edges)))

    @property
    def robots(self) -> range:
        return range(1, self.num_robots + 1)

    def leader_of(self, j: int) -> int | None:
        for a, b in self.edges:
            if b == j:
                return a
        return None

    def followers_of(self, i: int) -> tuple[int, ...]:
        return tuple(b for a, b in self.edges if a == i)


@dataclass(frozen=True)
class RobotSets:
    """Leader, follower and Nash sets of every robot (1-based keys)."""

    direct_leaders: dict[int, frozenset[int]]
    direct_followers: dict[int, frozenset[int]]
    all_leaders: dict[int, frozenset[int]]
    all_followers: dict[int, frozenset[int]]
    nash_set: dict[int, frozenset[int]]
    num_robots: int = field(default=0)

    def is_leaf(self, i: int) -> bool:
        return not self.all_followers[i]

    def has_leader(self, i: int) -> bool:
        return bool(self.direct_leaders[i])


def compute_sets(graph: HierarchyGraph) -> RobotSets:
    """Direct and transitive leader/follower sets plus the Nash set of each robot."""
    robots = list(graph.robots)
    dl = {i: frozenset(a for a, b in graph.edges if b == i) for i in robots}
    df = {i: frozenset(b for a, b in graph.edges if a == i) for i in robots}

    all_leaders: dict[int, frozenset[int]] = {}

    def leaders_of(i):
        if i not in all_leaders:
            acc = set()
            for ld in dl[i]:
                acc.add(ld)
                acc |= leaders_of(ld)
            all_leaders[i] = frozenset(acc)
        return all_leaders[i]

    for i in robots:
        leaders_of(i)
    all_followers = {i: frozenset(j for j in robots if i in all_leaders[j]) for i in robots}
    everyone = frozenset(robots)
    nash = {i: everyone - all_leaders[i] - all_followers[i] - {i} for i in robots}
    return RobotSets(dl, df, all_leaders, all_followers, nash, graph.num_robots)


def reverse_topological_order(graph: HierarchyGraph) -> list[int]:
    """Followers before leaders; ties broken by ascending robot index."""
    remaining = {i: len(graph.followers_of(i)) for i in graph.robots}
    heap = [i for i, c in remaining.items() if c == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        node = heapq.heappop(heap)
        order.append(node)
        parent = graph.leader_of(node)
        if parent is not None:
            remaining[parent] -= 1
            if remaining[parent] == 0:
                heapq.heappush(heap, parent)
    return order


def subtree(graph: HierarchyGraph, i: int) -> tuple[frozenset[int], frozenset[tuple[int, int]]]:
    """Nodes and induced edges of the subtree rooted at robot ``i``."""
    sets = compute_sets(graph)
    nodes = frozenset({i}) | sets.all_followers[i]
    edges = frozenset(e for e in graph.edges if e[0] in nodes and e[1] in nodes)
    return nodes, edges


def nash_groups(graph: HierarchyGraph) -> list[tuple[int, frozenset[int]]]:
    """The forest's trees as ``(root, members)`` pairs, ordered by root."""
    sets = compute_sets(graph)
    roots = [i for i in graph.robots if not sets.direct_leaders[i]]
    return [(r, frozenset({r}) | sets.all_followers[r]) for r in roots]


def parse_edges(spec) -> list[tuple[int, int]]:
    """Parse ``"1->2, 2->4"`` strings or sequences of pairs / ``"a -> b"`` items."""
    if spec is None:
        return []
    if isinstance(spec, str):
        items = [s for s in spec.replace(";", ",").split(",") if s.strip()]
    else:
        items = list(spec)
    edges = []
    for item in items:
        if isinstance(item, str):
            if "->" not in item:
                raise ValueError(f"cannot parse edge {item!r}; expected 'leader -> follower'")
            a, b = item.split("->")
            edges.append((int(a.strip()), int(b.strip())))
        else:
            a, b = item
            edges.append((int(a), int(b)))
    return edges
