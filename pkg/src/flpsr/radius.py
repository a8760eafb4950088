"""Serving radii of capacitated facilities in the continuum limit.

For one facility at ``y`` the served set is the (clipped) ball of mass ``q``
around ``y``.  With two facilities the balls compete for the agents between
them, and the radii solve a small coupled system.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .distributions import Distribution
from .quadrature import bisect_increasing


class NumericalError(RuntimeError):
    """A numeric routine could not produce a trustworthy answer."""


class DegenerateDensityError(NumericalError):
    pass


class FixedPointError(NumericalError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class Regime(str, Enum):
    LEFT_CLIPPED = "left_clipped"
    INTERIOR = "interior"
    RIGHT_CLIPPED = "right_clipped"


@dataclass(frozen=True)
class RadiusResult:
    radius: float
    left: float
    right: float
    regime: Regime


def _check_capacity(q: float) -> None:
    if not (0.0 < q <= 1.0):
        raise ValueError(f"capacity must lie in (0, 1], got {q}")


def ball_mass(d: Distribution, y, h):
    return d.cdf(np.minimum(y + h, 1.0)) - d.cdf(np.maximum(y - h, 0.0))


def radii(d: Distribution, q: float, y) -> np.ndarray:
    """Vectorised radius: unique ``h`` with ``mu([y-h, y+h] & [0,1]) = q``."""
    _check_capacity(q)
    y = np.asarray(y, dtype=float)
    hi = np.maximum(y, 1.0 - y)
    r = bisect_increasing(lambda h: ball_mass(d, y, h), q, np.zeros_like(y), hi, xtol=1e-15)
    return np.where(ball_mass(d, y, hi) <= q, hi, r)


def _regime(y: float, r: float) -> Regime:
    if y - r < 0.0:
        return Regime.LEFT_CLIPPED
    if y + r > 1.0:
        return Regime.RIGHT_CLIPPED
    return Regime.INTERIOR


def radius(d: Distribution, q: float, y: float) -> RadiusResult:
    if not (0.0 <= y <= 1.0):
        raise ValueError(f"position must lie in [0, 1], got {y}")
    r = float(radii(d, q, np.array(y)))
    return RadiusResult(r, max(y - r, 0.0), min(y + r, 1.0), _regime(y, r))


def radius_derivative(d: Distribution, q: float, y: float) -> float:
    """Slope of the radius function; -1/+1 while the ball is clipped."""
    res = radius(d, q, y)
    if res.regime is Regime.LEFT_CLIPPED:
        return -1.0
    if res.regime is Regime.RIGHT_CLIPPED:
        return 1.0
    fl = d.density(y - res.radius)
    fr = d.density(y + res.radius)
    if fl + fr < 1e-12:
        raise DegenerateDensityError(f"density vanishes at both ends of the ball around y={y}")
    return (fl - fr) / (fl + fr)


# --------------------------------------------------------------------------
# two facilities


@dataclass(frozen=True)
class TwoFacilityServing:
    r1: float
    r2: float
    s1: tuple[float, float]
    s2: tuple[float, float]
    touching: bool
    iterations: int
    residuals: tuple[float, float]


def _solve_side(d, q, y, fence, toward_right):
    """Radius of a facility hemmed in by ``fence`` on one side.

    The facility serves ``[y-h, min(fence, y+h)]`` (or the mirror image),
    clipped to [0, 1].  Returns the radius and the attained mass; when the
    available territory holds less than ``q`` the whole territory is used.
    """
    if toward_right:
        hmax = np.maximum(y, fence - y)

        def mass(h):
            return d.cdf(np.minimum(fence, y + h)) - d.cdf(np.maximum(y - h, 0.0))

    else:
        hmax = np.maximum(1.0 - y, y - fence)

        def mass(h):
            return d.cdf(np.minimum(y + h, 1.0)) - d.cdf(np.maximum(fence, y - h))

    full = mass(hmax)
    h = bisect_increasing(mass, np.minimum(q, full), np.zeros_like(y), hmax, xtol=1e-15)
    return np.where(full < q, hmax, h)


def _fences(y1, y2, r1, r2):
    mid = 0.5 * (y1 + y2)
    z1 = np.minimum(np.maximum(mid, y2 - r2), y1 + r1)
    z2 = np.maximum(np.minimum(mid, y1 + r1), y2 - r2)
    return mid, z1, z2


def _served(d, y1, y2, r1, r2):
    _, z1, z2 = _fences(y1, y2, r1, r2)
    a1 = np.maximum(y1 - r1, 0.0)
    b2 = np.minimum(y2 + r2, 1.0)
    m1 = d.cdf(z1) - d.cdf(a1)
    m2 = d.cdf(b2) - d.cdf(z2)
    return a1, z1, z2, b2, m1, m2


def serve_pairs(
    d: Distribution,
    q1: float,
    q2: float,
    y1,
    y2,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 0.5,
    stall_tol: float = 1e-12,
):
    """Vectorised coupled-radius solve for placements with ``y1 <= y2``.

    Returns ``(r1, r2, ok, iterations)``; ``ok`` flags elements whose mass
    residuals both dropped below ``tol``.
    """
    _check_capacity(q1)
    _check_capacity(q2)
    y1 = np.atleast_1d(np.asarray(y1, dtype=float)).copy()
    y2 = np.atleast_1d(np.asarray(y2, dtype=float)).copy()
    y1, y2 = np.broadcast_arrays(y1, y2)
    if np.any(y1 > y2):
        raise ValueError("serve_pairs expects y1 <= y2")
    r1 = radii(d, q1, y1)
    r2 = radii(d, q2, y2)
    iters = np.zeros(y1.shape, dtype=int)
    active = np.ones(y1.shape, dtype=bool)
    res1 = np.full(y1.shape, np.inf)
    res2 = np.full(y1.shape, np.inf)
    for it in range(max_iter + 1):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        a, b, ra, rb = y1[idx], y2[idx], r1[idx], r2[idx]
        *_, m1, m2 = _served(d, a, b, ra, rb)
        res1[idx], res2[idx] = np.abs(m1 - q1), np.abs(m2 - q2)
        done = (res1[idx] <= tol) & (res2[idx] <= tol)
        active[idx[done]] = False
        iters[idx] = it
        if it == max_iter:
            break
        idx, a, b, ra, rb = idx[~done], a[~done], b[~done], ra[~done], rb[~done]
        if len(idx) == 0:
            break
        mid = 0.5 * (a + b)
        new1 = _solve_side(d, q1, a, np.maximum(mid, b - rb), toward_right=True)
        new2 = _solve_side(d, q2, b, np.minimum(mid, a + ra), toward_right=False)
        # a fixed point that misses the target mass cannot improve: the
        # facility's territory holds less than its capacity
        stalled = (np.abs(new1 - ra) < stall_tol) & (np.abs(new2 - rb) < stall_tol)
        active[idx[stalled]] = False
        r1[idx] = damping * ra + (1.0 - damping) * new1
        r2[idx] = damping * rb + (1.0 - damping) * new2
    ok = (res1 <= tol) & (res2 <= tol)
    return r1, r2, ok, iters


def two_facility_serving(
    d: Distribution,
    q: tuple[float, float],
    y1: float,
    y2: float,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> TwoFacilityServing:
    """Served intervals of two facilities at ``y1 <= y2`` with capacities ``q``."""
    q1, q2 = map(float, q)
    if q1 + q2 >= 1.0:
        raise ValueError("two-facility serving requires q1 + q2 < 1")
    r1, r2, ok, iters = serve_pairs(d, q1, q2, y1, y2, tol=tol, max_iter=max_iter)
    r1, r2 = float(r1[0]), float(r2[0])
    a1, z1, z2, b2, m1, m2 = (float(v) for v in _served(d, y1, y2, r1, r2))
    residuals = (abs(m1 - q1), abs(m2 - q2))
    if not ok[0]:
        raise FixedPointError(
            f"coupled radii did not converge for y=({y1}, {y2}); residuals {residuals}", residuals
        )
    return TwoFacilityServing(
        r1, r2, (a1, z1), (z2, b2), touching=abs(z2 - z1) <= 1e-12, iterations=int(iters[0]), residuals=residuals
    )
