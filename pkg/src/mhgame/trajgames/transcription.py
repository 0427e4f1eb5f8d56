"""Trajectory strategies as expression blocks and their dynamics constraints."""

from __future__ import annotations

from typing import Sequence

from ..expr import DimensionMismatch, Expr, VarBlock, add, mul
from .dynamics import DynamicsModel

__all__ = ["stage_views", "transcribe_constraints"]


def stage_views(z: VarBlock | Sequence[Expr], model: DynamicsModel, horizon: int):
    """Per-step ``(state, control)`` expression lists of a packed strategy block."""
    stage = model.stage_dim
    if len(z) != horizon * stage:
        raise DimensionMismatch(f"strategy of length {len(z)} does not hold {horizon} steps of size {stage}")
    items = list(z)
    out = []
    for t in range(horizon):
        s = items[t * stage: (t + 1) * stage]
        out.append((s[: model.state_dim], s[model.state_dim:]))
    return out


def transcribe_constraints(model: DynamicsModel, horizon: int, x_init, z) -> list[Expr]:
    """Rows ``[x_init - x_1; x_2 - f(x_1, u_1); ...; x_T - f(x_{T-1}, u_{T-1})]``.

    ``x_init`` may be numbers or parameter expressions; ``z`` is the robot's
    packed strategy block.
    """
    if horizon < 1:
        raise DimensionMismatch("horizon must be at least 1")
    if len(x_init) != model.state_dim:
        raise DimensionMismatch(f"initial state has {len(x_init)} entries, expected {model.state_dim}")
    steps = stage_views(z, model, horizon)
    rows = [add(x0, mul(-1.0, s)) for x0, s in zip(x_init, steps[0][0])]
    for t in range(horizon - 1):
        x, u = steps[t]
        nxt = model.step(x, u)
        rows.extend(add(a, mul(-1.0, b)) for a, b in zip(steps[t + 1][0], nxt))
    return rows
