"""Finite-horizon trajectory games: dynamics, transcription and scenarios."""

from .dynamics import (
    DynamicsModel,
    TrajectoryPlan,
    double_integrator,
    double_integrator_step,
    pack,
    rollout,
    unicycle,
    unicycle_step,
    unpack,
)
from .scenarios import (
    GUARDING_HIERARCHIES,
    MERGING_HIERARCHIES,
    Scenario,
    ScenarioConfig,
    UnknownHierarchy,
    build_scenario,
    collision_penalty,
    default_config,
    initial_guess,
    merging_config,
    merging_cost,
    perturb_initial_states,
    resolve_edges,
    target_guarding_config,
    target_guarding_costs,
)
from .transcription import stage_views, transcribe_constraints
from .receding import (
    RecedingHorizonFailure,
    RecedingLog,
    SolveRecord,
    pairwise_distances,
    receding_horizon,
    shift_solution,
)
