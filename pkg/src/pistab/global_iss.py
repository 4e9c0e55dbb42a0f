"""Global input-to-state stability: sector conditions, ISS certificate, necessary conditions.

The sector conditions bound the outflow on three overlapping bands of storage:

* ``below``: ``x`` in ``[0, x*]``;
* ``above``: ``x`` in ``[x*, a - v* - b_min]``;
* ``congested``: ``x`` in ``[a - v* - b_max, a]`` where the inflow may be
  throttled by the free capacity ``a - x``.

When they hold on every member of the uncertainty set, the Lyapunov function

    V(y, w) = g(y - x*) + M |w - P(u* + r (y - x*))|,  g(t) = t if t >= 0 else -q t

satisfies ``V+ <= lam V + gamma |v - v*|`` along the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Gains, LoopState, OutflowModel, Scenario, closed_loop_map, saturate
from .errors import RefusalError
from .roots import scan_roots

MIN_GRID = 100
NEAR_ZERO = 1e-4
ROOT_TOL = 1e-10
ROOT_SCAN_INTERVALS = 10_000
WITNESS_TOL = 1e-9


@dataclass(frozen=True)
class H2Params:
    """Parameters of the sector conditions.

    ``r`` is the feedforward slope of the reference input ``P(u* + r (x - x*))``,
    ``q`` weighs storage deficits against surpluses, ``L`` is the decay factor
    in the congested band, ``M`` the Lyapunov weight on the input error and
    ``(lambda_i, gamma_i)`` the decay/gain pairs above (1) and below (2) the
    set-point.
    """

    r: float
    q: float
    L: float
    M: float
    lambda1: float
    gamma1: float
    lambda2: float
    gamma2: float

    def beta(self, gains: Gains) -> float:
        return gains.k1 + gains.k2 + self.r

    def violations(self, scenario: Scenario, gains: Gains) -> list:
        s, out = scenario, []
        r_max = (s.b_min - s.u_star) / (s.a - s.v_star - s.x_star - s.b_max)
        if not self.r <= r_max:
            out.append(f"r={self.r} exceeds its bound {r_max}")
        beta = self.beta(gains)
        if not 0 < beta < 2:
            out.append(f"beta=k1+k2+r={beta} not in (0, 2)")
        if not 0 < self.q <= 1:
            out.append(f"q={self.q} not in (0, 1]")
        if not 0 <= self.L < 1:
            out.append(f"L={self.L} not in [0, 1)")
        if not self.M > 1:
            out.append(f"M={self.M} not above 1")
        for i, (lam, gam) in enumerate(((self.lambda1, self.gamma1), (self.lambda2, self.gamma2)), start=1):
            if not 0 <= lam < 1:
                out.append(f"lambda{i}={lam} not in [0, 1)")
            if not 0 < gam < 1 - lam:
                out.append(f"gamma{i}={gam} not in (0, 1 - lambda{i})")
        return out


def g_weight(t, q: float):
    """``t`` for ``t >= 0`` and ``-q t`` otherwise."""
    return np.where(np.asarray(t) >= 0, t, -q * np.asarray(t)) if np.ndim(t) else (t if t >= 0 else -q * t)


def iss_lyapunov(scenario: Scenario, params: H2Params, y, w):
    s = scenario
    ref = saturate(s.u_star + params.r * (y - s.x_star), s.b_min, s.b_max)
    return g_weight(y - s.x_star, params.q) + params.M * np.abs(w - ref)


# --- sector margins -------------------------------------------------------
#
# Each margin is ``>= 0`` exactly when its inequality holds.  The band
# conditions are written in deviations from the equilibrium so that they
# vanish exactly at x = x* instead of up to rounding.

def _deviations(model, scenario, params, d, x):
    s = scenario
    t = x - s.x_star
    f_star = model.value(d, s.x_star)
    dP = saturate(s.u_star + params.r * t, s.b_min, s.b_max) - s.u_star
    df = model.value(d, x) - f_star
    res = s.u_star + s.v_star - f_star
    return t, dP, df, res


def _band_margins(model, scenario, gains, params, d, x):
    t, dP, df, res = _deviations(model, scenario, params, d, x)
    beta = params.beta(gains)
    e = dP - df + res  # P(u* + r t) - f + v*
    K = (1 - beta) * dP + beta * df - beta * res - (beta - gains.k1) * t
    q = params.q
    return {
        "above_lower": e + (params.lambda1 / q + 1) * t,
        "above_upper": (params.lambda1 - 1) * t - e,
        "above_gain": params.gamma1 * t - np.abs(K),
        "below_lower": e - (params.lambda2 - 1) * t,
        "below_upper": -(params.lambda2 * q + 1) * t - e,
        "below_gain": params.gamma2 * q * np.abs(t) - np.abs(K),
    }


def _congested_margins(model, scenario, gains, params, d, x):
    s = scenario
    beta, L, M, k1 = params.beta(gains), params.L, params.M, gains.k1
    fx = model.value(d, x)
    t = x - s.x_star
    tp = np.maximum(t, 0.0)
    z = fx + s.x_star - s.a
    room = np.maximum(s.b_min, s.a - s.v_star - x)
    floor = (-(k1 + L / M) * tp + L * s.b_min + s.u_star - (1 + L) * room) / (beta + 1 / M)
    return {
        "congested_cap": -z,
        "congested_floor": z - floor,
        "congested_slope": (L / M - k1) * tp + s.u_star - L * s.b_min - (1 - L) * s.b_max - z * (beta - 1 / M),
        # the same two constraints before dividing through, as they arise in the decrease argument
        "congested_upper_expanded": (beta - k1 + L / M) * t - L * s.b_min + z / M
        - ((1 - L) * s.b_max + beta * (z + t) - s.u_star),
        "congested_lower_expanded": (1 + L) * room + beta * (z + t) - s.u_star
        - ((beta - k1 - L / M) * t + L * s.b_min - z / M),
    }


BAND_NAMES = ("above_lower", "above_upper", "above_gain", "below_lower", "below_upper", "below_gain")
CONGESTED_NAMES = ("congested_cap", "congested_floor", "congested_slope")
EXPANDED_NAMES = ("congested_upper_expanded", "congested_lower_expanded")
# printed form -> expanded form expressing the same constraint
EXPANDED_PAIRS = {"congested_slope": "congested_upper_expanded", "congested_floor": "congested_lower_expanded"}


def h2_intervals(scenario: Scenario):
    s = scenario
    return {
        "above": (s.x_star, s.a - s.v_star - s.b_min),
        "below": (0.0, s.x_star),
        "congested": (s.a - s.v_star - s.b_max, s.a),
    }


def _margin_fn(name):
    if name.startswith("congested"):
        return lambda m, s, g, p, d, x: _congested_margins(m, s, g, p, d, x)[name]
    return lambda m, s, g, p, d, x: _band_margins(m, s, g, p, d, x)[name]


def _interval_of(name, scenario):
    iv = h2_intervals(scenario)
    return iv[name.split("_")[0]]


@dataclass
class InequalityMargin:
    worst: float
    d: int
    x: float
    refined_worst: float

    @property
    def passed(self) -> bool:
        return self.worst >= 0 and self.refined_worst >= 0


@dataclass
class H2Report:
    margins: dict
    grid_n: int
    disagreements: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.margins.values())


def h2_verify(model: OutflowModel, scenario: Scenario, gains: Gains, params: H2Params,
              grid_n: int = 10_000, near_zero: float = NEAR_ZERO) -> H2Report:
    """Evaluate every sector condition on ``grid_n`` points of its band for every member.

    Grid points whose margin is a local minimum below ``near_zero`` are
    re-examined on a 4x finer local grid, so a pass cannot hinge on the grid
    stepping over a thin violation.
    """
    if not scenario.capacity_condition:
        raise RefusalError("capacity condition x* + v* + b_max < a does not hold")
    if grid_n < MIN_GRID:
        raise RefusalError(f"grid_n={grid_n} is under-resolved (need >= {MIN_GRID})")
    bad = params.violations(scenario, gains)
    if bad:
        raise RefusalError("invalid sector parameters: " + "; ".join(bad), violations=bad)

    margins = {}
    for name in BAND_NAMES + CONGESTED_NAMES + EXPANDED_NAMES:
        fn = _margin_fn(name)
        lo, hi = _interval_of(name, scenario)
        xs = np.linspace(lo, hi, grid_n)
        h = (hi - lo) / (grid_n - 1)
        worst, arg_d, arg_x, refined = np.inf, 0, lo, np.inf
        for d in range(len(model)):
            m = np.asarray(fn(model, scenario, gains, params, d, xs), dtype=float)
            i = int(np.argmin(m))
            if m[i] < worst:
                worst, arg_d, arg_x = float(m[i]), d, float(xs[i])
            candidates = {i}
            padded = np.concatenate([[np.inf], m, [np.inf]])
            local_min = (padded[1:-1] <= padded[:-2]) & (padded[1:-1] <= padded[2:])
            candidates.update(np.flatnonzero(local_min & (m < near_zero)).tolist())
            for j in candidates:
                fine = np.linspace(max(lo, xs[j] - h), min(hi, xs[j] + h), 9)
                refined = min(refined, float(np.min(fn(model, scenario, gains, params, d, fine))))
        margins[name] = InequalityMargin(worst, arg_d, arg_x, min(refined, worst))

    disagreements = [
        f"{printed} and {expanded} disagree"
        for printed, expanded in EXPANDED_PAIRS.items()
        if margins[printed].passed != margins[expanded].passed
    ]
    return H2Report(margins, grid_n, disagreements)


def h2_envelope(model: OutflowModel, scenario: Scenario, gains: Gains, params: H2Params, n: int = 2001):
    """Allowable outflow band on ``[0, a]`` against the outflow of each member.

    Returns a dict of arrays: ``x``, ``lower``, ``upper``, and per member
    ``f{d}`` and ``margin{d}``, the smallest sector margin active at each x.
    """
    s = scenario
    beta, q = params.beta(gains), params.q
    x = np.linspace(0.0, s.a, n)
    t = x - s.x_star
    ref = saturate(s.u_star + params.r * t, s.b_min, s.b_max)
    lower, upper = np.zeros(n), x.copy()
    iv = h2_intervals(s)

    def clamp(mask, lo_b=None, hi_b=None):
        if lo_b is not None:
            lower[mask] = np.maximum(lower[mask], lo_b[mask])
        if hi_b is not None:
            upper[mask] = np.minimum(upper[mask], hi_b[mask])

    C = (1 - beta) * ref - beta * s.v_star - (beta - gains.k1) * t - s.u_star
    above = (x >= iv["above"][0]) & (x <= iv["above"][1])
    clamp(above, ref + s.v_star - (params.lambda1 - 1) * t, ref + s.v_star + (params.lambda1 / q + 1) * t)
    below = (x >= iv["below"][0]) & (x <= iv["below"][1])
    clamp(below, ref + s.v_star + (params.lambda2 * q + 1) * t, ref + s.v_star - (params.lambda2 - 1) * t)
    if beta > 0:
        clamp(above, (-params.gamma1 * t - C) / beta, (params.gamma1 * t - C) / beta)
        band = params.gamma2 * q * np.abs(t)
        clamp(below, (-band - C) / beta, (band - C) / beta)

    L, M, k1 = params.L, params.M, gains.k1
    cong = (x >= iv["congested"][0]) & (x <= iv["congested"][1])
    tp = np.maximum(t, 0.0)
    room = np.maximum(s.b_min, s.a - s.v_star - x)
    floor = (-(k1 + L / M) * tp + L * s.b_min + s.u_star - (1 + L) * room) / (beta + 1 / M)
    clamp(cong, s.a - s.x_star + floor, np.full(n, s.a - s.x_star))
    R = (L / M - k1) * tp + s.u_star - L * s.b_min - (1 - L) * s.b_max
    slope = beta - 1 / M
    if slope > 0:
        clamp(cong, None, s.a - s.x_star + R / slope)
    elif slope < 0:
        clamp(cong, s.a - s.x_star + R / slope, None)

    out = {"x": x, "lower": lower, "upper": upper}
    for d in range(len(model)):
        fx = model.value(d, x)
        margin = np.minimum(fx, x - fx)
        for names, mask in ((BAND_NAMES[:3], above), (BAND_NAMES[3:], below), (CONGESTED_NAMES, cong)):
            if mask.any():
                part = _band_margins(model, s, gains, params, d, x[mask]) if names != CONGESTED_NAMES \
                    else _congested_margins(model, s, gains, params, d, x[mask])
                worst = np.min(np.stack([part[k] for k in names]), axis=0)
                margin[mask] = np.minimum(margin[mask], worst)
        out[f"f{d}"] = fx
        out[f"margin{d}"] = margin
    return out


@dataclass
class IssCertificate:
    lam: float
    gamma: float
    margin: float  # inflow deviation bound (1 - lam) a / gamma
    rate_condition: tuple  # (lhs, rhs, passed): 1 + W |1 - beta| < W, W = min_i (1 - lambda_i) / gamma_i
    weight_condition: tuple  # (lower, M, upper, passed): 1 / (1 - |1 - beta|) < M < W
    violations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.lam < 1 and self.rate_condition[2] and self.weight_condition[3] and not self.violations


def iss_certificate(gains: Gains, params: H2Params, scenario: Scenario | None = None) -> IssCertificate:
    """Decay factor ``lam``, input gain ``gamma`` and the saturation margin.

    ``scenario`` is needed for the margin and the parameter range checks;
    without it the margin is NaN.
    """
    p, beta = params, params.beta(gains)
    lam = max(1 / p.M + abs(1 - beta), p.L, p.lambda1 + p.M * p.gamma1, p.lambda2 + p.M * p.gamma2)
    gamma = 1 + p.M * abs(gains.k1 + gains.k2) + p.M * abs(p.r)
    W = min((1 - p.lambda1) / p.gamma1, (1 - p.lambda2) / p.gamma2)
    rate = (1 + W * abs(1 - beta), W, 1 + W * abs(1 - beta) < W)
    denom = 1 - abs(1 - beta)
    lower = 1 / denom if denom > 0 else float("inf")
    weight = (lower, p.M, W, lower < p.M < W)
    margin = float("nan")
    violations = []
    if scenario is not None:
        margin = (1 - lam) * scenario.a / gamma
        violations = p.violations(scenario, gains)
    notes = ["decay factor maximised over the above/below decay-gain pairs only"]
    return IssCertificate(lam, gamma, margin, rate, weight, violations, notes)


def iss_transient_scale(scenario: Scenario, gains: Gains, params: H2Params, initial: LoopState) -> float:
    s = scenario
    x0, y0, w0 = initial
    spread = abs(x0 - s.x_star) + abs(y0 - s.x_star) + abs(w0 - s.u_star)
    return params.M * (1 + abs(params.r) + abs(gains.k1) + abs(gains.k2)) * spread


def iss_bound(cert: IssCertificate, scenario: Scenario, gains: Gains, params: H2Params,
              initial: LoopState, v_history) -> float:
    """Right-hand side of the ISS estimate at ``t = len(v_history)``."""
    v = np.asarray(v_history, dtype=float)
    t = v.size
    if t < 1:
        raise ValueError("need at least one input sample")
    transient = cert.lam ** t * iss_transient_scale(scenario, gains, params, initial)
    return transient + cert.gamma / (1 - cert.lam) * float(np.max(np.abs(v - scenario.v_star)))


def iss_bound_series(cert, scenario, gains, params, initial, v):
    """The bound for every ``t = 1..T`` given inputs ``v[0..T-1]``."""
    v = np.asarray(v, dtype=float)
    t = np.arange(1, v.size + 1)
    running = np.maximum.accumulate(np.abs(v - scenario.v_star))
    return cert.lam ** t * iss_transient_scale(scenario, gains, params, initial) + cert.gamma / (1 - cert.lam) * running


def iss_deviation(scenario: Scenario, params: H2Params, x):
    """Left-hand side of the ISS estimate: ``max(q (x* - x), x - x*)``."""
    return np.maximum(params.q * (scenario.x_star - x), x - scenario.x_star)


# --- necessary conditions --------------------------------------------------

@dataclass
class RootReport:
    d: int
    root: float
    bracket: tuple
    residual: float


@dataclass
class NecessaryReport:
    k2_positive: bool
    upper_roots: list  # roots of f(d, y) = min(b_max + v*, a - y)
    lower_roots: list  # roots of f(d, y) = min(b_min + v*, a - y)
    upper_verdict: str  # all upper roots in (x*, a]
    lower_verdict: str  # all lower roots in [0, x*]; "boundary" if one sits at x*
    tangencies: list = field(default_factory=list)

    @property
    def global_iss_possible(self) -> bool:
        return self.k2_positive and self.upper_verdict == "pass" and self.lower_verdict == "pass"

    def spurious_roots(self, x_star: float) -> list:
        return [r for r in self.lower_roots if r.root > x_star + ROOT_TOL]


def _equation(model, scenario, d, bound):
    s = scenario
    return lambda y: model.value(d, y) - np.minimum(bound + s.v_star, s.a - y)


def necessary_conditions(model: OutflowModel, scenario: Scenario, gains: Gains,
                         n_intervals: int = ROOT_SCAN_INTERVALS, tol: float = ROOT_TOL) -> NecessaryReport:
    """Locate the storage levels at which the clamped regulator would sit still.

    A root ``y > x*`` of the lower-bound equation is an equilibrium
    ``(y, y, b_min)`` of the loop that no choice of gains removes.
    """
    s = scenario
    if not s.capacity_condition:
        raise RefusalError("capacity condition x* + v* + b_max < a does not hold")
    upper, lower, tangencies = [], [], []
    for d in range(len(model)):
        for bound, bucket in ((s.b_max, upper), (s.b_min, lower)):
            scan = scan_roots(_equation(model, s, d, bound), 0.0, s.a, n_intervals, tol)
            bucket.extend(RootReport(d, r.root, r.bracket, r.residual) for r in scan.roots)
            tangencies.extend(
                f"member {d}: possible double root near y={y:.10g} (inflow bound {bound})" for y in scan.tangencies
            )

    upper_ok = all(r.root > s.x_star + tol for r in upper)
    above = [r for r in lower if r.root > s.x_star + tol]
    at = [r for r in lower if abs(r.root - s.x_star) <= tol]
    lower_verdict = "fail" if above else ("boundary" if at else "pass")
    return NecessaryReport(gains.k2 > 0, upper, lower, "pass" if upper_ok else "fail", lower_verdict, tangencies)


def spurious_equilibrium_residual(scenario: Scenario, model: OutflowModel, gains: Gains, root: RootReport) -> float:
    """Max-norm residual of ``(y, y, b_min)`` as a fixed point of the closed loop under ``v*``."""
    s = scenario
    state = np.array([root.root, root.root, s.b_min])
    nxt = np.array(closed_loop_map(s, model, gains, *state, root.d, s.v_star), dtype=float)
    return float(np.max(np.abs(nxt - state)))
