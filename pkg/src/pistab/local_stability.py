"""Local stability of the set-point and Lyapunov estimates of its region of attraction.

The reduced loop linearizes at ``(x*, u*)`` to the characteristic polynomial

    s**2 - (2 - f'(x*) - sigma) s + (1 - f'(x*) - sigma + k2)

With ``s = 1 - f'(x*) - sigma`` the stable set in the ``(s, k2)`` plane is the
open triangle ``k2 > 0``, ``2 + 2s + k2 > 0``, ``s + k2 < 1``.

Region-of-attraction estimates use

    V(x, w) = |x - x*| + M |w + v* - f(x) + (1 - g)(x - x*)|

with two prescribed choices of ``(F, g, M)``:

* ``linearized``: ``F = f'(x*)``, ``g = 1 - q`` with ``q = (sigma + f'(x*)) / 2``;
* ``gain_matched``: ``F = 1 - k1``, ``g = 1 - k2``.

``F`` is the slope the outflow is compared against and ``L`` bounds the
deviation ``|f'(x) - F|`` on a neighbourhood of radius ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Gains, OutflowModel, Scenario
from .errors import CertificateInconsistencyError, NonContractionError, RefusalError
from .roots import bisect

ETA_SCAN_POINTS = 10_000
ETA_TOL = 1e-10
PROFILE_POINTS = 20_001
BRANCHES = ("complex", "real", "unstable")


@dataclass(frozen=True)
class LocalVerdict:
    """Stability of ``s**2 + b s + c`` and the signed edges of the gain triangle."""

    b: float
    c: float
    s: float
    stable: bool
    branch: str
    triangle: tuple  # (k2, 2 + 2s + k2, 1 - s - k2); stable iff all > 0

    @property
    def triangle_stable(self) -> bool:
        return all(m > 0 for m in self.triangle)


def local_verdict(fprime_at_xstar: float, gains: Gains) -> LocalVerdict:
    # With s = 1 - f' - sigma the polynomial is z**2 - (1 + s) z + (s + k2).  The
    # edge tests below are written in (s, k2) so that points on an edge of the
    # triangle are classified the same way as by the triangle margins.
    fp, k2 = float(fprime_at_xstar), gains.k2
    s = 1.0 - fp - gains.sigma
    B = 1.0 + s
    c = s + k2
    triangle = (k2, 2 + 2 * s + k2, 1 - s - k2)
    lower_edge = triangle[0] > 0 if B >= 0 else triangle[1] > 0
    if B * B < 4 * c and triangle[2] > 0:
        branch = "complex"
    elif abs(B) < 2 and lower_edge and c <= B * B / 4:
        branch = "real"
    else:
        branch = "unstable"
    return LocalVerdict(-B, c, s, branch != "unstable", branch, triangle)


def _linearized_condition(q: float, k2: float):
    """``(lhs, rhs)`` of ``|k2 - q**2| < (|1 - q| - 1)**2``."""
    return abs(k2 - q * q), (abs(1 - q) - 1) ** 2


@dataclass
class TriangleMap:
    s: np.ndarray
    k2: np.ndarray
    k1: np.ndarray  # implied proportional gain at each (s, k2)
    stable: np.ndarray
    branch: np.ndarray
    linearized_applicable: np.ndarray


def gain_triangle_map(fprime_at_xstar: float, s_range, k2_range, resolution) -> TriangleMap:
    """Classify a grid over the ``(s, k2)`` plane.

    ``resolution`` is an int or a pair ``(n_s, n_k2)``.  Each point also
    records whether the linearized certificate applies there.
    """
    n_s, n_k = (resolution, resolution) if np.ndim(resolution) == 0 else resolution
    if n_s < 2 or n_k < 2:
        raise ValueError("resolution must be at least 2 per axis")
    fp = float(fprime_at_xstar)
    S, K2 = np.meshgrid(np.linspace(*s_range, n_s), np.linspace(*k2_range, n_k), indexing="ij")
    K1 = 1.0 - fp - S - K2
    stable = np.zeros(S.shape, dtype=bool)
    branch = np.empty(S.shape, dtype=object)
    applicable = np.zeros(S.shape, dtype=bool)
    for idx in np.ndindex(S.shape):
        v = local_verdict(fp, Gains(K1[idx], K2[idx]))
        stable[idx] = v.stable
        branch[idx] = v.branch
        q = (1.0 - S[idx]) / 2
        lhs, rhs = _linearized_condition(q, K2[idx])
        applicable[idx] = v.stable and 0 < q < 2 and lhs < rhs
    return TriangleMap(S, K2, K1, stable, branch, applicable)


@dataclass
class Applicability:
    ok: bool
    lhs: float
    rhs: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def _require_stable(scenario, model, gains):
    fp = float(model.single().slope(scenario.x_star))
    verdict = local_verdict(fp, gains)
    if not verdict.stable:
        raise RefusalError("set-point is not locally exponentially stable", verdict=verdict)
    return fp


def linearized_applicable(model: OutflowModel, scenario: Scenario, gains: Gains) -> Applicability:
    fp = _require_stable(scenario, model, gains)
    q = (gains.sigma + fp) / 2
    lhs, rhs = _linearized_condition(q, gains.k2)
    ok = 0 < q < 2 and lhs < rhs
    return Applicability(ok, lhs, rhs, {"q": q, "fprime": fp})


def _gain_matched_bound(k2: float) -> float:
    return (1 - abs(1 - k2)) / (k2 + 1 - abs(1 - k2))


def gain_matched_applicable(model: OutflowModel, scenario: Scenario, gains: Gains) -> Applicability:
    fp = _require_stable(scenario, model, gains)
    k1, k2 = gains.k1, gains.k2
    if not 0 < k2 < 2:
        return Applicability(False, abs(fp - 1 + k1), float("nan"), {"k2": k2, "fprime": fp})
    lhs, rhs = abs(fp - 1 + k1), _gain_matched_bound(k2)
    return Applicability(lhs < rhs, lhs, rhs, {"fprime": fp})


class DeviationProfile:
    """Radial profile of ``|f'(x) - F|`` around ``x*``, restricted to ``[0, a]``.

    ``pointwise[i]`` is the larger of the deviations at ``x* - r[i]`` and
    ``x* + r[i]`` (a side outside the domain is ignored); ``envelope`` is its
    running maximum, i.e. the worst deviation over the whole ball.
    """

    def __init__(self, member, scenario: Scenario, F: float, r_max: float, n: int = PROFILE_POINTS):
        self.member, self.scenario, self.F = member, scenario, float(F)
        self.r = np.linspace(0.0, r_max, n)
        self.pointwise = self.at(self.r)
        self.envelope = np.maximum.accumulate(self.pointwise)
        # bound on how far the deviation can rise between grid radii
        self.slack = float(np.max(np.abs(np.diff(self.pointwise)))) if n > 1 else 0.0

    def at(self, r):
        s = self.scenario
        r = np.asarray(r, dtype=float)
        left, right = s.x_star - r, s.x_star + r
        dl = np.where(left >= 0, np.abs(self.member.slope(np.maximum(left, 0.0)) - self.F), -np.inf)
        dr = np.where(right <= s.a, np.abs(self.member.slope(np.minimum(right, s.a)) - self.F), -np.inf)
        return np.maximum(dl, dr)

    def upper(self, radius):
        """Upper bound on ``max |f'(x) - F|`` over ``|x - x*| <= radius``."""
        radius = np.asarray(radius, dtype=float)
        if np.any(radius > self.r[-1] * (1 + 1e-12)):
            raise ValueError(f"radius beyond the profile extent {self.r[-1]}")
        idx = np.minimum(np.searchsorted(self.r, radius, side="left"), self.r.size - 1)
        return self.envelope[idx] + self.slack


def deviation_radius(member, scenario: Scenario, F: float, bound: float,
                     n_scan: int = ETA_SCAN_POINTS, tol: float = ETA_TOL) -> float:
    """Largest radius on which ``|f'(x) - F|`` stays strictly below ``bound``.

    The radius where the bound is first attained is located by a uniform scan
    and refined by bisection.  When the bound is never attained inside the
    domain the radius is capped at ``min(x*, a - x*)``.
    """
    s = scenario
    R = max(s.x_star, s.a - s.x_star)
    profile = DeviationProfile(member, s, F, R, n_scan + 1)
    hit = np.flatnonzero(profile.pointwise >= bound)
    if hit.size == 0:
        return min(s.x_star, s.a - s.x_star)
    i = int(hit[0])
    if i == 0:
        return 0.0
    phi = lambda r: float(profile.at(r)) - bound
    return bisect(phi, profile.r[i - 1], profile.r[i], tol)


@dataclass
class Contraction:
    lam: float
    state_term: float
    integrator_term: float

    @property
    def contracting(self) -> bool:
        return self.lam < 1


@dataclass
class RoaCertificate:
    kind: str  # "linearized" or "gain_matched"
    scenario: Scenario
    model: OutflowModel
    gains: Gains
    F: float
    g: float
    M: float
    L: float
    eta: float
    rho: float
    rho_terms: tuple  # (eta, integrator-range term, capacity term)
    effective_L: float = float("nan")  # slope deviation bound over the ball of radius rho
    lambda_contraction: float = float("nan")
    M_interval: tuple = (float("nan"), float("nan"))
    _profile: DeviationProfile | None = field(default=None, repr=False)

    @property
    def member(self):
        return self.model.single()

    @property
    def profile(self) -> DeviationProfile:
        if self._profile is None:
            self._profile = DeviationProfile(self.member, self.scenario, self.F, self.rho)
        return self._profile

    def value(self, x, w):
        return lyapunov_value(self, x, w)


def _contraction_terms(cert, L):
    k2, sigma = cert.gains.k2, cert.gains.sigma
    F, g, M = cert.F, cert.g, cert.M
    first = 1 / M + abs(2 - sigma - g - F) + L
    second = abs(g) + M * abs(k2 + (1 - F - sigma - g) * (1 - g)) + M * L * abs(1 - g)
    return first, second


def contraction_factor(cert: RoaCertificate, effective_L: float) -> Contraction:
    """Per-step Lyapunov decay factor for a sublevel set whose slope deviation is ``effective_L``.

    Raises :class:`NonContractionError` (carrying the result) when the factor
    is not below one; at the full deviation bound the factor sits exactly at
    one, which still supports convergence but not a uniform rate.
    """
    first, second = _contraction_terms(cert, float(effective_L))
    result = Contraction(max(first, second), first, second)
    if not result.contracting:
        raise NonContractionError(f"contraction factor {result.lam} is not below 1", result)
    return result


def critical_deviation(cert: RoaCertificate) -> float:
    """Slope deviation at which the contraction factor reaches one."""
    a1, a2 = _contraction_terms(cert, 0.0)
    b2 = cert.M * abs(1 - cert.g)
    return min(1 - a1, (1 - a2) / b2 if b2 > 0 else float("inf"))


def admissible_weight_interval(cert: RoaCertificate, L: float):
    """Open interval of Lyapunov weights ``M`` for which the decrease estimate holds."""
    k2, sigma, F, g = cert.gains.k2, cert.gains.sigma, cert.F, cert.g
    lo_den = 1 - L - abs(2 - sigma - g - F)
    hi_den = abs(k2 + (1 - F - sigma - g) * (1 - g)) + L * abs(1 - g)
    lo = 1 / lo_den if lo_den > 0 else float("inf")
    hi = (1 - abs(g)) / hi_den if hi_den > 0 else float("inf")
    return lo, hi


def invariance_radius(scenario: Scenario, gains: Gains, F: float, g: float, M: float, L: float) -> float:
    """Sublevel radius below which the integrator stays unclamped and the inflow is fully admitted."""
    s = scenario
    sigma, k2 = gains.sigma, gains.k2
    t1 = min(s.b_max - s.u_star, s.u_star - s.b_min) / max(abs(1 - sigma) / M, L + abs(k2 + (1 - sigma) * (1 - g) - F))
    t2 = (s.a - s.v_star - s.u_star - s.x_star) / (1 + L + abs(1 - F - g))
    return min(t1, t2)


def _finish(cert: RoaCertificate) -> RoaCertificate:
    """Fill in the contraction data and validate ``M`` against the admissible interval."""
    lo, hi = admissible_weight_interval(cert, cert.L)
    scale = 1e-12 * max(1.0, abs(cert.M))
    if not (lo - scale <= cert.M <= hi + scale):
        raise CertificateInconsistencyError(
            f"weight M={cert.M} outside the admissible interval [{lo}, {hi}]", M=cert.M, interval=(lo, hi)
        )
    cert.effective_L = float(cert.profile.upper(cert.rho))
    cert.M_interval = admissible_weight_interval(cert, cert.effective_L)
    first, second = _contraction_terms(cert, cert.effective_L)
    cert.lambda_contraction = max(first, second)
    return cert


def linearized_certificate(model: OutflowModel, scenario: Scenario, gains: Gains) -> RoaCertificate:
    """Region-of-attraction certificate with the outflow linearized at the set-point."""
    app = linearized_applicable(model, scenario, gains)
    if not app.ok:
        raise RefusalError("linearized certificate not applicable", lhs=app.lhs, rhs=app.rhs, **app.diagnostics)
    s, member = scenario, model.single()
    q, fp, k2 = app.diagnostics["q"], app.diagnostics["fprime"], gains.k2
    L = ((abs(1 - q) - 1) ** 2 - abs(k2 - q * q)) / (abs(q) + 1 - abs(1 - q))
    M = (abs(q) + 1 - abs(1 - q)) / (abs(q) * (1 - abs(1 - q)) + abs(k2 - q * q))
    eta = deviation_radius(member, s, fp, L)
    terms = (
        eta,
        min(s.b_max - s.u_star, s.u_star - s.b_min)
        / max(abs(1 - 2 * q + fp) / M, L + abs(k2 + (1 - 2 * q) * q + (q - 1) * fp)),
        (s.a - s.v_star - s.u_star - s.x_star) / (1 + L + abs(q - fp)),
    )
    cert = RoaCertificate("linearized", s, model, gains, fp, 1 - q, M, L, eta, min(terms), terms)
    return _finish(cert)


def gain_matched_certificate(model: OutflowModel, scenario: Scenario, gains: Gains) -> RoaCertificate:
    """Region-of-attraction certificate comparing the outflow slope with ``1 - k1``."""
    app = gain_matched_applicable(model, scenario, gains)
    if not app.ok:
        raise RefusalError(
            "gain-matched certificate not applicable", lhs=app.lhs, rhs=app.rhs, margin=app.margin, k2=gains.k2
        )
    s, member = scenario, model.single()
    k1, k2, sigma = gains.k1, gains.k2, gains.sigma
    Lb = app.rhs
    span = k2 + 1 - abs(1 - k2)
    M = span / k2
    F = 1 - k1
    eta = deviation_radius(member, s, F, Lb)
    terms = (
        eta,
        min(s.b_max - s.u_star, s.u_star - s.b_min)
        / max(k2 * abs(1 - sigma) / span, Lb + abs((1 - sigma) * (k2 - 1))),
        (s.a - s.v_star - s.u_star - s.x_star) / (1 + Lb + abs(sigma - 1)),
    )
    cert = RoaCertificate("gain_matched", s, model, gains, F, 1 - k2, M, Lb, eta, min(terms), terms)
    return _finish(cert)


def lyapunov_value(cert: RoaCertificate, x, w):
    s = cert.scenario
    fx = cert.member.value(x)
    return np.abs(x - s.x_star) + cert.M * np.abs(w + s.v_star - fx + (1 - cert.g) * (x - s.x_star))


def in_roa(cert: RoaCertificate, x, w):
    """Membership in the open sublevel set ``V < rho``."""
    inside = lyapunov_value(cert, x, w) < cert.rho
    if np.ndim(inside) == 0:
        return bool(inside) and 0 <= x <= cert.scenario.a
    return inside & (np.asarray(x) >= 0) & (np.asarray(x) <= cert.scenario.a)


def sublevel_slice(cert: RoaCertificate, x, level: float | None = None):
    """Centre and half-width of the ``w`` interval where ``V(x, w) < level`` at storage ``x``.

    ``V`` is piecewise linear in ``w``, so the slice is an interval; the
    half-width is negative when ``x`` lies outside the set.
    """
    s = cert.scenario
    level = cert.rho if level is None else level
    x = np.asarray(x, dtype=float)
    centre = cert.member.value(x) - s.v_star - (1 - cert.g) * (x - s.x_star)
    half = (level - np.abs(x - s.x_star)) / cert.M
    return centre, half


def roa_boundary(cert: RoaCertificate, n: int = 401):
    """Closed polyline ``(x, w)`` tracing ``V = rho`` within ``0 <= x <= a``."""
    s = cert.scenario
    lo, hi = max(0.0, s.x_star - cert.rho), min(s.a, s.x_star + cert.rho)
    xs = np.linspace(lo, hi, n)
    centre, half = sublevel_slice(cert, xs)
    half = np.maximum(half, 0.0)
    px = np.concatenate([xs, xs[::-1], xs[:1]])
    pw = np.concatenate([centre + half, (centre - half)[::-1], (centre + half)[:1]])
    return px, pw
