"""Trajectory rollouts for the full and reduced closed loops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    Gains,
    LoopState,
    OutflowModel,
    ReducedState,
    Scenario,
    closed_loop_map,
    reduced_map,
)
from .errors import DomainError

SATURATION_ATOL = 1e-12


@dataclass(frozen=True)
class DisturbanceSequence:
    """Member indices and uncontrolled inflows, repeated cyclically past their length."""

    d_seq: np.ndarray
    v_seq: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d_seq, dtype=int))
        v = np.atleast_1d(np.asarray(self.v_seq, dtype=float))
        if d.size == 0 or v.size == 0:
            raise ValueError("disturbance sequences must be non-empty")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("uncontrolled inflow must be finite and non-negative")
        if np.any(d < 0):
            raise DomainError("member indices must be non-negative")
        object.__setattr__(self, "d_seq", d)
        object.__setattr__(self, "v_seq", v)

    @classmethod
    def constant(cls, v: float, d: int = 0) -> "DisturbanceSequence":
        return cls(np.array([d]), np.array([v]))

    def window(self, horizon: int):
        """The first ``horizon`` entries of both sequences, cyclically extended."""
        idx = np.arange(horizon)
        return self.d_seq[idx % self.d_seq.size], self.v_seq[idx % self.v_seq.size]


@dataclass
class Trajectory:
    """``states`` has shape ``(T + 1, 3)`` for the full loop and ``(T + 1, 2)`` for the reduced one."""

    states: np.ndarray
    applied_u: np.ndarray
    kind: str

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    def final_window(self) -> slice:
        n = self.states.shape[0]
        return slice(n - max(1, math.ceil(0.1 * n)), n)


def rollout_full(
    scenario: Scenario,
    model: OutflowModel,
    gains: Gains,
    initial: LoopState,
    dist: DisturbanceSequence,
    T: int,
) -> Trajectory:
    if T < 1:
        raise ValueError("horizon must be at least 1")
    initial = LoopState(*initial)
    if not (0 <= initial.x <= scenario.a and 0 <= initial.y <= scenario.a):
        raise DomainError(f"initial storage outside [0, {scenario.a}]")
    d_seq, v_seq = dist.window(T)
    if np.any(d_seq >= len(model)):
        raise DomainError("disturbance refers to a member outside the model")
    states = np.empty((T + 1, 3))
    applied = np.empty(T)
    x, y, w = map(float, initial)
    states[0] = x, y, w
    for t in range(T):
        x, y, w = closed_loop_map(scenario, model, gains, x, y, w, int(d_seq[t]), float(v_seq[t]))
        states[t + 1] = x, y, w
        applied[t] = w
    return Trajectory(states, applied, "full")


def rollout_full_batch(scenario, model, gains, x0, y0, w0, v, d=None):
    """Roll out many initial states at once.

    ``v`` (and optionally ``d``) have shape ``(n, T)``; row ``i`` drives
    rollout ``i``.  Returns an array of shape ``(n, T + 1, 3)``.
    """
    v = np.asarray(v, dtype=float)
    n, T = v.shape
    d = np.zeros((n, T), dtype=int) if d is None else np.asarray(d, dtype=int)
    out = np.empty((n, T + 1, 3))
    x, y, w = (np.asarray(c, dtype=float).copy() for c in (x0, y0, w0))
    out[:, 0] = np.stack([x, y, w], axis=1)
    single = len(model) == 1
    for t in range(T):
        dt = 0 if single else d[:, t]
        x, y, w = closed_loop_map(scenario, model, gains, x, y, w, dt, v[:, t])
        out[:, t + 1, 0] = x
        out[:, t + 1, 1] = y
        out[:, t + 1, 2] = w
    return out


def rollout_reduced(
    scenario: Scenario,
    model: OutflowModel,
    gains: Gains,
    initial: ReducedState,
    T: int,
) -> Trajectory:
    if T < 1:
        raise ValueError("horizon must be at least 1")
    member = model.single()
    initial = ReducedState(*initial)
    if not 0 <= initial.x <= scenario.a:
        raise DomainError(f"initial storage outside [0, {scenario.a}]")
    states = np.empty((T + 1, 2))
    x, w = float(initial.x), float(initial.w)
    states[0] = x, w
    for t in range(T):
        x, w = reduced_map(scenario, member, gains, x, w)
        states[t + 1] = x, w
    return Trajectory(states, states[1:, 1].copy(), "reduced")


def detect_saturation(traj: Trajectory, a: float) -> bool:
    """Whether ``x = a`` is hit within the final 10% of the horizon.

    A finite run can only witness recurrence, so this is a proxy for the
    "hit capacity infinitely often" definition.
    """
    window = traj.x[traj.final_window()]
    return bool(np.any(np.abs(window - a) <= SATURATION_ATOL))


def convergence_metric(traj: Trajectory, x_star: float) -> float:
    """Largest ``|x(t) - x*|`` over the final 10% of the horizon."""
    return float(np.max(np.abs(traj.x[traj.final_window()] - x_star)))
