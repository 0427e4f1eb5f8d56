"""Discrete-time robot dynamics and trajectory packing.

Step functions accept plain numbers or expressions, so the same code builds
constraint expressions and simulates states numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..expr import DimensionMismatch, Expr, cos, sin

__all__ = [
    "DynamicsModel",
    "unicycle_step",
    "double_integrator_step",
    "unicycle",
    "double_integrator",
    "TrajectoryPlan",
    "pack",
    "unpack",
    "rollout",
]


def _out(values):
    if any(isinstance(v, Expr) for v in values):
        return list(values)
    return np.array(values, dtype=float)


def unicycle_step(x, u, dt: float):
    """State ``(px, py, heading, speed)`` under controls ``(acceleration, turn rate)``."""
    px, py, psi, v = x
    a, omega = u
    return _out([px + dt * v * cos(psi), py + dt * v * sin(psi), psi + dt * omega, v + dt * a])


def double_integrator_step(x, u, dt: float):
    """State ``(px, py, vx, vy)`` under planar acceleration ``(ax, ay)``."""
    px, py, vx, vy = x
    ax, ay = u
    h = 0.5 * dt * dt
    return _out([px + dt * vx + h * ax, py + dt * vy + h * ay, vx + dt * ax, vy + dt * ay])


@dataclass(frozen=True)
class DynamicsModel:
    """Discrete map ``x' = f(x, u)`` with a fixed time step."""

    name: str
    state_dim: int
    control_dim: int
    dt: float
    step_fn: Callable

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    def step(self, x, u):
        if len(x) != self.state_dim or len(u) != self.control_dim:
            raise DimensionMismatch(
                f"{self.name} expects state {self.state_dim} and control {self.control_dim}, got {len(x)} and {len(u)}"
            )
        return self.step_fn(x, u, self.dt)

    @property
    def stage_dim(self) -> int:
        return self.state_dim + self.control_dim


def unicycle(dt: float) -> DynamicsModel:
    return DynamicsModel("unicycle", 4, 2, dt, unicycle_step)


def double_integrator(dt: float) -> DynamicsModel:
    return DynamicsModel("double_integrator", 4, 2, dt, double_integrator_step)


@dataclass
class TrajectoryPlan:
    """States ``(T, nx)`` and controls ``(T, nu)`` of one robot."""

    states: np.ndarray
    controls: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def pack(self) -> np.ndarray:
        return pack(self.states, self.controls)


def pack(states, controls) -> np.ndarray:
    """Interleave per-step states and controls into ``(x1, u1, ..., xT, uT)``."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if states.shape[0] != controls.shape[0]:
        raise DimensionMismatch("states and controls must have the same number of steps")
    return np.hstack([states, controls]).ravel()


def unpack(z, state_dim: int, control_dim: int) -> TrajectoryPlan:
    z = np.asarray(z, dtype=float)
    stage = state_dim + control_dim
    if z.size % stage:
        raise DimensionMismatch(f"strategy length {z.size} is not a multiple of {stage}")
    M = z.reshape(-1, stage)
    return TrajectoryPlan(M[:, :state_dim].copy(), M[:, state_dim:].copy())


def rollout(model: DynamicsModel, x_init: Sequence[float], controls) -> TrajectoryPlan:
    """Dynamically feasible plan starting at ``x_init`` under the given controls."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    T = controls.shape[0]
    states = np.zeros((T, model.state_dim))
    states[0] = x_init
    for t in range(T - 1):
        states[t + 1] = model.step(states[t], controls[t])
    return TrajectoryPlan(states, controls)
