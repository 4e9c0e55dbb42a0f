"""Brute-force validators that certificates are tested against.

Nothing here relies on the certificates' formulas: regions of attraction are
found by simulating every grid cell, derivatives by central differences and
Lyapunov decrease by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Gains, OutflowModel, Scenario, reduced_map, reduced_presaturation, saturate
from .global_iss import H2Params, IssCertificate, iss_lyapunov
from .local_stability import RoaCertificate, contraction_factor, lyapunov_value, sublevel_slice
from .roots import bisect  # noqa: F401  (part of the oracle surface)

VERDICTS = ("converged", "diverged-to-spurious", "saturated", "undecided")
CONVERGED, SPURIOUS, SATURATED, UNDECIDED = range(4)
MIN_RESOLUTION = 50
MIN_HORIZON = 1000
SATURATION_ATOL = 1e-12


@dataclass
class RoaGrid:
    """Per-cell verdicts of an exhaustive simulation; ``verdict[j, i]`` is cell ``(x[i], w[j])``."""

    x: np.ndarray
    w: np.ndarray
    verdict: np.ndarray
    steps: np.ndarray  # step at which each cell was decided (T if never)
    T: int
    tol: float

    def counts(self) -> dict:
        return {name: int(np.sum(self.verdict == code)) for code, name in enumerate(VERDICTS)}

    def mesh(self):
        return np.meshgrid(self.x, self.w)

    def label(self, i: int, j: int) -> str:
        return VERDICTS[int(self.verdict[j, i])]

    def nearest(self, x: float, w: float):
        return int(np.argmin(np.abs(self.x - x))), int(np.argmin(np.abs(self.w - w)))


def _centres(lo, hi, n, anchor=None):
    h = (hi - lo) / n
    c = lo + (np.arange(n) + 0.5) * h
    if anchor is not None:
        k = int(np.argmin(np.abs(c - anchor)))
        c = anchor + (np.arange(n) - k) * h
    return c


def brute_force_roa(scenario: Scenario, model: OutflowModel, gains: Gains, x_range, w_range,
                    nx: int = 200, nw: int = 200, T: int = 100_000, tol: float = 1e-6,
                    anchor=None, fp_tol: float = 1e-9) -> RoaGrid:
    """Classify every cell centre by rolling out the reduced system.

    A cell is *converged* once ``|x - x*| + |w - u*| < tol``; the equilibrium
    is locally exponentially stable so such a state stays within ``tol``.  A
    state that stops moving (max-norm step at most ``fp_tol``) elsewhere has
    reached another fixed point: *saturated* if it sits at ``x = a``,
    *diverged-to-spurious* otherwise.  Cells still undecided at ``T`` are
    *saturated* when ``x = a`` recurs in the last tenth of the run and
    *undecided* otherwise.

    ``anchor = (x, w)`` shifts the lattice so that one cell centre lands
    exactly on that point, e.g. a spurious equilibrium.
    """
    if nx < MIN_RESOLUTION or nw < MIN_RESOLUTION:
        raise ValueError(f"grid resolution must be at least {MIN_RESOLUTION} per axis")
    if T < MIN_HORIZON:
        raise ValueError(f"horizon must be at least {MIN_HORIZON}")
    s, member = scenario, model.single()
    ax, aw = (None, None) if anchor is None else anchor
    xc = _centres(*x_range, nx, ax)
    wc = _centres(*w_range, nw, aw)
    X, W = np.meshgrid(xc, wc)
    x, w = X.ravel().copy(), W.ravel().copy()
    idx = np.arange(x.size)
    verdict = np.full(x.size, UNDECIDED, dtype=np.int8)
    steps = np.full(x.size, T, dtype=np.int64)
    hit_cap = np.zeros(x.size, dtype=bool)
    tail_start = T - max(1, int(np.ceil(0.1 * T)))

    for t in range(T + 1):
        conv = np.abs(x - s.x_star) + np.abs(w - s.u_star) < tol
        if t == T:
            verdict[idx[conv]] = CONVERGED
            steps[idx[conv]] = T
            rest = idx[~conv]
            verdict[rest[hit_cap[rest]]] = SATURATED
            break
        xn, wn = reduced_map(s, member, gains, x, w)
        still = ~conv & (np.maximum(np.abs(xn - x), np.abs(wn - w)) <= fp_tol)
        at_cap = np.abs(x - s.a) <= SATURATION_ATOL
        if t >= tail_start:
            hit_cap[idx[at_cap]] = True
        verdict[idx[conv]] = CONVERGED
        verdict[idx[still & at_cap]] = SATURATED
        verdict[idx[still & ~at_cap]] = SPURIOUS
        done = conv | still
        steps[idx[done]] = t
        keep = ~done
        idx, x, w = idx[keep], xn[keep], wn[keep]
        if idx.size == 0:
            break

    return RoaGrid(xc, wc, verdict.reshape(nw, nx), steps.reshape(nw, nx), T, tol)


@dataclass
class FdCheck:
    worst: float
    at: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def fd_derivative_check(model: OutflowModel, d: int, samples, h: float = 1e-6, tol: float = 1e-6) -> FdCheck:
    """Largest gap between the closed-form slope and a central difference."""
    xs = np.atleast_1d(np.asarray(samples, dtype=float))
    fd = (model.value(d, xs + h) - model.value(d, xs - h)) / (2 * h)
    gap = np.abs(np.asarray(model.slope(d, xs), dtype=float) - fd)
    i = int(np.argmax(gap))
    return FdCheck(float(gap[i]), float(xs[i]), tol)


@dataclass
class DecreaseScan:
    """Outcome of a sampled Lyapunov decrease check.

    ``worst_slack`` is the largest ``V+ - lam V - gamma |v - v*|`` seen (the
    input term is absent for the local certificates), ``worst_point`` the
    sample achieving it and ``max_ratio`` the largest ``V+ / V`` over samples
    with ``V > 0``.
    """

    n: int
    worst_slack: float
    worst_point: tuple
    max_ratio: float
    max_lambda: float
    unclamped_violations: int = 0  # integrator updates that left [b_min, b_max] before clamping
    capacity_violations: int = 0  # steps where the free capacity cut the admitted inflow


def sample_sublevel(cert: RoaCertificate, n: int, rng: np.random.Generator, level: float | None = None):
    """Uniform samples from ``{V < level}`` restricted to the admissible box.

    ``V`` is piecewise linear, so the ``w`` slice at storage ``x`` is an
    interval whose width falls linearly in ``|x - x*|``: drawing ``|x - x*|``
    from that triangular density and ``w`` uniformly in the slice is exact.
    Samples outside ``[0, a] x [b_min, b_max]`` are rejected.
    """
    s = cert.scenario
    level = cert.rho if level is None else level
    xs, ws = [], []
    got = 0
    while got < n:
        m = 2 * (n - got) + 16
        r = level * (1 - np.sqrt(1 - rng.random(m)))
        x = s.x_star + np.where(rng.random(m) < 0.5, -r, r)
        centre, half = sublevel_slice(cert, x, level)
        w = centre + (2 * rng.random(m) - 1) * half
        ok = (x >= 0) & (x <= s.a) & (w >= s.b_min) & (w <= s.b_max) & (lyapunov_value(cert, x, w) < level)
        xs.append(x[ok])
        ws.append(w[ok])
        got += int(ok.sum())
    return np.concatenate(xs)[:n], np.concatenate(ws)[:n]


def lyapunov_decrease_scan(cert: RoaCertificate, n_samples: int = 10_000, seed: int = 0) -> DecreaseScan:
    """Sample the certified set and test ``V+ <= lam(V) V``.

    ``lam(V)`` is the contraction factor for the sublevel set through the
    sampled point, which never exceeds the factor for the whole set.  Also
    counts samples whose integrator update needs clamping or whose inflow
    is cut by the free capacity; inside the certified set neither should
    happen.
    """
    s, member, gains = cert.scenario, cert.member, cert.gains
    rng = np.random.default_rng(seed)
    x, w = sample_sublevel(cert, n_samples, rng)
    V = lyapunov_value(cert, x, w)
    lam = np.array([contraction_factor(cert, cert.profile.upper(v)).lam for v in V])
    xn, wn = reduced_map(s, member, gains, x, w)
    Vn = lyapunov_value(cert, xn, wn)
    slack = Vn - lam * V
    i = int(np.argmax(slack))
    pos = V > 0
    ratio = float(np.max(Vn[pos] / V[pos])) if pos.any() else 0.0
    raw, _ = reduced_presaturation(s, member, gains, x, w)
    unclamped = int(np.sum((raw < s.b_min) | (raw > s.b_max)))
    capped = int(np.sum(w + s.v_star > s.a - x))
    return DecreaseScan(n_samples, float(slack[i]), (float(x[i]), float(w[i])), ratio, float(lam.max()),
                        unclamped, capped)


def iss_decrease_scan(cert: IssCertificate, params: H2Params, scenario: Scenario, model: OutflowModel,
                      gains: Gains, n_samples: int = 10_000, seed: int = 0, v_spread: float | None = None) -> DecreaseScan:
    """Sample ``(d, v, y, w)`` and test ``V+ <= lam V + gamma |v - v*|``.

    ``y`` and ``w`` are uniform on ``[0, a] x [b_min, b_max]`` and ``d``
    uniform over the members.  Half the inflows are drawn within ``v_spread``
    of ``v*`` (default 1% of ``v*``, at least 1e-3) and half uniformly on
    ``[0, 2 v* + b_max]``.
    """
    s = scenario
    rng = np.random.default_rng(seed)
    n = n_samples
    d = rng.integers(0, len(model), n)
    y = rng.uniform(0.0, s.a, n)
    w = rng.uniform(s.b_min, s.b_max, n)
    spread = max(1e-3, 0.01 * s.v_star) if v_spread is None else v_spread
    near = np.maximum(s.v_star + rng.uniform(-spread, spread, n), 0.0)
    far = rng.uniform(0.0, 2 * s.v_star + s.b_max, n)
    v = np.where(rng.random(n) < 0.5, near, far)
    fy = model.value(d, y)
    admitted = np.minimum(w + v, s.a - y)
    yn = np.clip(y - fy + admitted, 0.0, s.a)
    wn = saturate(w + gains.sigma * (fy - admitted) - gains.k2 * (y - s.x_star), s.b_min, s.b_max)
    V = iss_lyapunov(s, params, y, w)
    Vn = iss_lyapunov(s, params, yn, wn)
    slack = Vn - cert.lam * V - cert.gamma * np.abs(v - s.v_star)
    i = int(np.argmax(slack))
    pos = V > 0
    ratio = float(np.max(Vn[pos] / V[pos])) if pos.any() else 0.0
    return DecreaseScan(n, float(slack[i]), (int(d[i]), float(v[i]), float(y[i]), float(w[i])), ratio, cert.lam)
