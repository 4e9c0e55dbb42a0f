"""Bracketing root finding for scalar equations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BracketingError


def bisect(fn, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Bisection on ``[lo, hi]`` until the bracket is no wider than ``tol``.

    ``fn(lo)`` and ``fn(hi)`` must differ in sign; an endpoint that is an
    exact zero is returned directly.  ``tol=0`` runs to machine precision.
    Of the two final bracket ends, the one with the smaller residual is
    returned.
    """
    lo, hi = float(lo), float(hi)
    f_lo, f_hi = fn(lo), fn(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if not np.sign(f_lo) * np.sign(f_hi) < 0:
        raise BracketingError(f"no sign change on [{lo}, {hi}]: f = {f_lo}, {f_hi}")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = fn(mid)
        if f_mid == 0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return lo if abs(f_lo) <= abs(f_hi) else hi


@dataclass
class ScanRoot:
    root: float
    bracket: tuple
    residual: float


@dataclass
class ScanResult:
    roots: list
    tangencies: list = field(default_factory=list)


def scan_roots(fn, lo: float, hi: float, n_intervals: int = 10_000, tol: float = 1e-10,
               tangency_tol: float = 1e-8) -> ScanResult:
    """Every sign change of ``fn`` over a uniform grid, refined by bisection.

    ``fn`` must accept numpy arrays.  Grid points where ``fn`` touches zero
    without changing sign (a local extremum of small magnitude) are reported
    as tangencies, since bisection cannot see double roots.
    """
    xs = np.linspace(lo, hi, n_intervals + 1)
    vals = np.asarray(fn(xs), dtype=float)
    signs = np.sign(vals)
    roots = []
    for i in np.flatnonzero(signs == 0):
        roots.append(ScanRoot(float(xs[i]), (float(xs[i]), float(xs[i])), 0.0))
    scalar = lambda y: float(fn(np.array([y]))[0])
    for i in np.flatnonzero(signs[:-1] * signs[1:] < 0):
        r = bisect(scalar, xs[i], xs[i + 1], tol)
        roots.append(ScanRoot(r, (float(xs[i]), float(xs[i + 1])), abs(scalar(r))))
    roots.sort(key=lambda s: s.root)

    tangencies = []
    if vals.size >= 3:
        dv = np.diff(vals)
        turning = dv[:-1] * dv[1:] < 0
        mid = vals[1:-1]
        same_side = (signs[:-2] == signs[1:-1]) & (signs[1:-1] == signs[2:])
        for j in np.flatnonzero(turning & same_side & (np.abs(mid) < tangency_tol)):
            tangencies.append(float(xs[j + 1]))
    return ScanResult(roots, tangencies)
