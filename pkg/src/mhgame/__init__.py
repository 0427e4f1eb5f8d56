"""Mixed-hierarchy games: Nash and Stackelberg interactions on a leadership forest.

Robots connected by leader-follower edges are solved jointly by Newton's
method on a stacked first-order system in which every leader anticipates its
followers through linearized (quasi-)policies.
"""

__version__ = "0.1.0"

from .game import MixedHierarchyGame, RobotProblem, VariableLayout, build_game, make_layout, strategy_blocks
from .hierarchy import HierarchyGraph, RobotSets, compute_sets, validate_forest
from .kkt import KKTSystem, assemble, consensus_gap
from .solver import SolverOptions, SolverResult, Status, convergence_report, solve

__all__ = [
    "__version__",
    "HierarchyGraph",
    "RobotSets",
    "compute_sets",
    "validate_forest",
    "RobotProblem",
    "MixedHierarchyGame",
    "VariableLayout",
    "build_game",
    "make_layout",
    "strategy_blocks",
    "KKTSystem",
    "assemble",
    "consensus_gap",
    "SolverOptions",
    "SolverResult",
    "Status",
    "solve",
    "convergence_report",
]
