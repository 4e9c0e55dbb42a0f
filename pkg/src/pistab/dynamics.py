"""Plant, PI regulator and closed-loop step maps.

The storage model is the single-reservoir balance

    x+ = x - f(d, x) + min(u + v, a - x)

driven by a PI law whose output is clamped to ``[b_min, b_max]``.  Every
map here is pure and deterministic.  Scalar arguments give scalar results;
numpy arrays are evaluated elementwise so batches of states can be advanced
in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AmbiguityError, DomainError, InvalidBoundsError

# tolerance on the equilibrium balance f(d, x*) = u* + v*, relative to max(1, u* + v*)
EQUILIBRIUM_RTOL = 1e-9


@dataclass(frozen=True)
class ExpPowerOutflow:
    """Outflow ``f(x) = p * x * exp(-c * x**delta)``."""

    p: float
    c: float
    delta: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def value(self, x):
        return self.p * x * np.exp(-self.c * np.power(x, self.delta))

    def slope(self, x):
        xd = np.power(x, self.delta)
        return self.p * np.exp(-self.c * xd) * (1.0 - self.c * self.delta * xd)


@dataclass(frozen=True)
class LinearOutflow:
    """Outflow ``f(x) = kappa * x``; a test stub with constant slope."""

    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")

    def value(self, x):
        return self.kappa * np.asarray(x, dtype=float) if np.ndim(x) else self.kappa * x

    def slope(self, x):
        if np.ndim(x):
            return np.full(np.shape(x), float(self.kappa))
        return float(self.kappa)


@dataclass(frozen=True)
class OutflowModel:
    """Finite uncertainty set ``D``: member ``d`` is ``members[d]``."""

    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("an outflow model needs at least one member")

    @classmethod
    def exp_power(cls, *triples: Sequence[float]) -> "OutflowModel":
        return cls(tuple(ExpPowerOutflow(*t) for t in triples))

    def __len__(self):
        return len(self.members)

    def single(self):
        if len(self.members) != 1:
            raise AmbiguityError(
                f"operation needs a disturbance-free model, got {len(self.members)} members"
            )
        return self.members[0]

    def _check_index(self, d):
        d_arr = np.asarray(d)
        if d_arr.dtype.kind not in "iu" or np.any(d_arr < 0) or np.any(d_arr >= len(self.members)):
            raise DomainError(f"member index {d!r} outside 0..{len(self.members) - 1}")

    def _apply(self, method, d, x):
        self._check_index(d)
        if np.ndim(d) == 0:
            return getattr(self.members[int(d)], method)(x)
        d = np.asarray(d)
        x = np.broadcast_to(np.asarray(x, dtype=float), d.shape)
        out = np.empty(d.shape)
        for i, member in enumerate(self.members):
            mask = d == i
            if mask.any():
                out[mask] = getattr(member, method)(x[mask])
        return out

    def value(self, d, x):
        return self._apply("value", d, x)

    def slope(self, d, x):
        return self._apply("slope", d, x)


@dataclass(frozen=True)
class Scenario:
    """Plant limits and equilibrium data.

    Only structural constraints are enforced here.  Interiority of the
    equilibrium and the outflow conditions depend on the outflow model and
    are reported by :func:`check_conditions`.
    """

    a: float
    b_min: float
    b_max: float
    x_star: float
    u_star: float
    v_star: float

    def __post_init__(self):
        for name in ("a", "b_min", "b_max", "x_star", "u_star", "v_star"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not 0 <= self.b_min < self.b_max:
            raise ValueError(f"need 0 <= b_min < b_max, got [{self.b_min}, {self.b_max}]")
        if self.v_star < 0:
            raise ValueError(f"v_star must be non-negative, got {self.v_star}")

    @property
    def capacity_condition(self) -> bool:
        """``x* + v* + b_max < a``: required by the global analyses."""
        return self.x_star + self.v_star + self.b_max < self.a


@dataclass(frozen=True)
class Gains:
    k1: float
    k2: float

    @property
    def sigma(self) -> float:
        return self.k1 + self.k2


class LoopState(NamedTuple):
    """State ``(x, y, w)`` of the full closed loop: storage, previous storage, previous input."""

    x: float
    y: float
    w: float


class ReducedState(NamedTuple):
    x: float
    w: float


@dataclass
class ConditionReport:
    outflow_bound_ok: bool
    equilibrium_ok: bool
    capacity_ok: bool
    problems: list

    @property
    def ok(self) -> bool:
        return self.outflow_bound_ok and self.equilibrium_ok


def check_conditions(scenario: Scenario, model: OutflowModel, n_grid: int = 10_001) -> ConditionReport:
    """Check the outflow bound, the equilibrium assumption and the capacity condition.

    The outflow bound ``0 <= f(d, x) <= x`` is asserted on ``n_grid`` points of
    ``[0, a]`` for every member.
    """
    problems = []
    xs = np.linspace(0.0, scenario.a, n_grid)
    bound_ok = True
    for d in range(len(model)):
        fx = model.value(d, xs)
        bad = (fx < 0) | (fx > xs) | ~np.isfinite(fx)
        if bad.any():
            bound_ok = False
            i = int(np.argmax(bad))
            problems.append(
                f"outflow bound violated: need 0 <= f(d,x) <= x, member {d} gives f({xs[i]:.6g}) = {fx[i]:.6g}"
            )

    s = scenario
    eq_ok = True
    if not 0 < s.x_star < s.a:
        eq_ok = False
        problems.append(f"equilibrium interiority violated: x_star={s.x_star} not in (0, a={s.a})")
    if not s.b_min < s.u_star < s.b_max:
        eq_ok = False
        problems.append(
            f"equilibrium interiority violated: u_star={s.u_star} not in (b_min={s.b_min}, b_max={s.b_max})"
        )
    total = s.u_star + s.v_star
    if not total < s.a - s.x_star:
        eq_ok = False
        problems.append(f"equilibrium inflow violated: u_star + v_star = {total} not below a - x_star")
    if 0 <= s.x_star <= s.a:
        tol = EQUILIBRIUM_RTOL * max(1.0, total)
        for d in range(len(model)):
            resid = abs(model.value(d, s.x_star) - total)
            if not resid <= tol:
                eq_ok = False
                problems.append(
                    f"equilibrium balance violated: |f({d}, x_star) - u_star - v_star| = {resid:.3e} > {tol:.1e}"
                )

    cap_ok = s.capacity_condition
    if not cap_ok:
        problems.append("capacity condition x_star + v_star + b_max < a does not hold (global analyses unavailable)")
    return ConditionReport(bound_ok, eq_ok, cap_ok, problems)


def saturate(v, lo, hi):
    """Clamp ``v`` to ``[lo, hi]``."""
    if lo > hi:
        raise InvalidBoundsError(f"lower bound {lo} exceeds upper bound {hi}")
    if np.ndim(v) == 0:
        return max(lo, min(v, hi))
    return np.maximum(lo, np.minimum(v, hi))


def _check_range(name, v, lo, hi):
    if np.any(np.asarray(v) < lo) or np.any(np.asarray(v) > hi):
        raise DomainError(f"{name} outside [{lo}, {hi}]")


def outflow(model: OutflowModel, d, x, a: float | None = None):
    if np.any(np.asarray(x) < 0) or (a is not None and np.any(np.asarray(x) > a)):
        raise DomainError(f"storage {x!r} outside [0, {a}]")
    return model.value(d, x)


def outflow_derivative(model: OutflowModel, d, x, a: float | None = None):
    if np.any(np.asarray(x) < 0) or (a is not None and np.any(np.asarray(x) > a)):
        raise DomainError(f"storage {x!r} outside [0, {a}]")
    return model.slope(d, x)


def _plant(a, fx, x, inflow):
    # When the free capacity binds, x - f + (a - x) is written as a - f so that
    # rounding cannot push the result past a; with 0 <= f <= x both branches
    # then stay in [0, a] in floating point without any clipping.
    full = inflow >= a - x
    if np.ndim(full) == 0:
        return float(a - fx) if full else float(x - fx + inflow)
    return np.where(full, a - fx, x - fx + inflow)


def plant_step(scenario: Scenario, model: OutflowModel, x, u, d, v):
    """Advance the storage by one step."""
    s = scenario
    _check_range("storage", x, 0.0, s.a)
    _check_range("controlled inflow", u, s.b_min, s.b_max)
    if np.any(np.asarray(v) < 0):
        raise DomainError("uncontrolled inflow must be non-negative")
    return _plant(s.a, model.value(d, x), x, u + v)


def pi_control(gains: Gains, scenario: Scenario, x, y, w):
    """Saturated PI law ``P(w - k1 (x - y) - k2 (x - x*))``."""
    raw = w - gains.k1 * (x - y) - gains.k2 * (x - scenario.x_star)
    return saturate(raw, scenario.b_min, scenario.b_max)


def closed_loop_map(scenario, model, gains, x, y, w, d, v):
    """Unchecked closed-loop update on arrays; returns ``(x+, y+, w+)``."""
    u = pi_control(gains, scenario, x, y, w)
    return _plant(scenario.a, model.value(d, x), x, u + v), x, u


def closed_loop_step(scenario: Scenario, model: OutflowModel, gains: Gains, state: LoopState, d, v) -> LoopState:
    s = scenario
    _check_range("storage x", state.x, 0.0, s.a)
    _check_range("storage y", state.y, 0.0, s.a)
    if np.any(np.asarray(v) < 0):
        raise DomainError("uncontrolled inflow must be non-negative")
    return LoopState(*closed_loop_map(s, model, gains, state.x, state.y, state.w, d, v))


def reduced_presaturation(scenario, member, gains, x, w, v=None):
    """Integrator update before clamping and the inflow actually admitted.

    Returns ``(raw, admitted)`` with ``admitted = min(w + v, a - x)``.
    """
    s = scenario
    v = s.v_star if v is None else v
    fx = member.value(x)
    admitted = np.minimum(w + v, s.a - x)
    raw = w + gains.sigma * fx - gains.sigma * admitted - gains.k2 * (x - s.x_star)
    return raw, admitted


def reduced_map(scenario, member, gains, x, w, v=None):
    """Unchecked reduced update on arrays; returns ``(x+, w+)``."""
    s = scenario
    v = s.v_star if v is None else v
    fx = member.value(x)
    admitted = np.minimum(w + v, s.a - x)
    w_next = saturate(w + gains.sigma * fx - gains.sigma * admitted - gains.k2 * (x - s.x_star), s.b_min, s.b_max)
    return _plant(s.a, fx, x, w + v), w_next


def reduced_step(scenario: Scenario, model: OutflowModel, gains: Gains, state: ReducedState, v=None) -> ReducedState:
    """One step of the two-dimensional system followed by ``(y, w)`` after the first step.

    Defined for the disturbance-free case only, so ``model`` must have exactly
    one member.  ``v`` defaults to ``v*``.
    """
    member = model.single()
    _check_range("storage x", state.x, 0.0, scenario.a)
    return ReducedState(*reduced_map(scenario, member, gains, state.x, state.w, v))
