"""Limit welfare functional, finite-instance social welfare and transport costs.

Social welfare is per agent throughout: ``(1/n) * sum of utilities`` with
utility ``1 - |x - y|`` for a served agent and 0 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .distributions import Distribution, Instance, capacity_count
from .quadrature import adaptive_simpson
from .radius import (
    FixedPointError,
    RadiusResult,
    TwoFacilityServing,
    radii,
    radius,
    serve_pairs,
    two_facility_serving,
)


@dataclass(frozen=True)
class WelfareEval:
    w_value: float
    limit_sw: float
    ball: Union[RadiusResult, TwoFacilityServing]


# --------------------------------------------------------------------------
# continuum


def transport_cost(d: Distribution, y, a, b):
    """Closed form of the integral of ``|x - y| f(x)`` over ``[a, b]``.

    Uses the CDF and the partial first moment, so it vectorises over
    arrays of ``y``, ``a`` and ``b``.
    """
    y, a, b = (np.asarray(v, dtype=float) for v in (y, a, b))
    c = np.clip(y, a, b)
    Fa, Fb, Fc = d.cdf(a), d.cdf(b), d.cdf(c)
    Ga, Gb, Gc = d.partial_mean(a), d.partial_mean(b), d.partial_mean(c)
    return y * (Fc - Fa) - (Gc - Ga) + (Gb - Gc) - y * (Fb - Fc)


def w_one(d: Distribution, q: float, y: float) -> WelfareEval:
    """Transport cost of serving the mass-``q`` ball around ``y``.

    The integral is taken by adaptive Simpson on the two smooth pieces
    either side of ``y``.
    """
    ball = radius(d, q, y)

    def g(x):
        return abs(x - y) * float(d.density(x))

    w = adaptive_simpson(g, ball.left, y, 5e-10) + adaptive_simpson(g, y, ball.right, 5e-10)
    if not np.isfinite(w):
        # density unbounded at a ball endpoint (Beta with a or b below 1)
        w = float(transport_cost(d, y, ball.left, ball.right))
    w = max(w, 0.0)
    return WelfareEval(w, q - w, ball)


def w_one_values(d: Distribution, q: float, y) -> np.ndarray:
    """Vectorised 𝒲 over an array of positions (closed-form moments)."""
    y = np.asarray(y, dtype=float)
    r = radii(d, q, y)
    return transport_cost(d, y, np.maximum(y - r, 0.0), np.minimum(y + r, 1.0))


def delta(d: Distribution, q: float, y):
    y = np.asarray(y, dtype=float)
    r = radii(d, q, y)
    return d.cdf(np.minimum(y + r, 1.0)) + d.cdf(np.maximum(y - r, 0.0)) - 2.0 * d.cdf(y)


def w_one_derivative(d: Distribution, q: float, y: float) -> float:
    """Slope of 𝒲 at ``y``.

    Differentiating under the integral, the boundary terms cancel because the
    ball always carries mass ``q``; only ``-Δ(y)`` survives, where
    ``Δ(y) = F(y+R) + F(y-R) - 2F(y)`` with clipped arguments.
    """
    if not (0.0 < y < 1.0):
        raise ValueError(f"derivative needs an interior position, got {y}")
    return float(-delta(d, q, y))


def w_two(d: Distribution, q: Sequence[float], y1: float, y2: float) -> WelfareEval:
    if y1 > y2:
        raise ValueError("w_two expects y1 <= y2; swap positions and capacities")
    serving = two_facility_serving(d, q, y1, y2)
    w = float(transport_cost(d, y1, *serving.s1) + transport_cost(d, y2, *serving.s2))
    w = max(w, 0.0)
    return WelfareEval(w, float(q[0]) + float(q[1]) - w, serving)


def w_two_values(d: Distribution, q1: float, q2: float, y1, y2):
    """Vectorised two-facility 𝒲; returns ``(w, ok)``, NaN where unsolved."""
    r1, r2, ok, _ = serve_pairs(d, q1, q2, y1, y2)
    y1, y2 = np.broadcast_arrays(np.atleast_1d(np.asarray(y1, float)), np.atleast_1d(np.asarray(y2, float)))
    mid = 0.5 * (y1 + y2)
    z1 = np.minimum(np.maximum(mid, y2 - r2), y1 + r1)
    z2 = np.maximum(np.minimum(mid, y1 + r1), y2 - r2)
    w = transport_cost(d, y1, np.maximum(y1 - r1, 0.0), z1) + transport_cost(d, y2, z2, np.minimum(y2 + r2, 1.0))
    return np.where(ok, w, np.nan), ok


def w_es_values(d: Distribution, q1: float, q2: float, y1, y2) -> np.ndarray:
    """𝒲 of an equilibrium-stable pair: the two balls do not interact."""
    return w_one_values(d, q1, y1) + w_one_values(d, q2, y2)


# --------------------------------------------------------------------------
# finite instances


def _as_positions(y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.ndim != 1 or len(y) not in (1, 2):
        raise ValueError("one or two facility positions are supported")
    return y


def _as_capacities(q, m: int) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if len(q) != m:
        raise ValueError(f"expected {m} capacities, got {len(q)}")
    return q


def k_nearest(x: np.ndarray, y: float, k: int) -> np.ndarray:
    """Indices of the ``k`` agents nearest ``y``; ties go to the smaller index."""
    order = np.argsort(np.abs(x - y), kind="stable")
    return order[:k]


def ne_assignment(inst: Instance, y, q) -> np.ndarray:
    """FCFS equilibrium assignment: facility index per agent, -1 if unserved.

    One facility serves its ``k`` nearest agents.  For two facilities the
    globally closest (agent, facility with spare capacity) pair is matched
    repeatedly.
    """
    y = _as_positions(y)
    q = _as_capacities(q, len(y))
    x = inst.positions
    n = len(x)
    ks = [capacity_count(qj, n) for qj in q]
    if min(ks) < 1:
        raise ValueError("every facility needs a capacity count of at least 1")
    out = np.full(n, -1, dtype=int)
    if len(y) == 1:
        out[k_nearest(x, y[0], ks[0])] = 0
        return out
    dist = np.abs(x[None, :] - y[:, None])  # (2, n)
    fac = np.repeat(np.arange(2), n)
    agent = np.tile(np.arange(n), 2)
    order = np.lexsort((fac, agent, dist.ravel()))
    left = list(ks)
    remaining = min(sum(ks), n)
    for idx in order:
        j, i = fac[idx], agent[idx]
        if out[i] >= 0 or left[j] == 0:
            continue
        out[i] = j
        left[j] -= 1
        remaining -= 1
        if remaining == 0:
            break
    return out


def empirical_sw(inst: Instance, y, q) -> float:
    """Per-agent social welfare of the FCFS equilibrium for facilities at ``y``."""
    y = _as_positions(y)
    assign = ne_assignment(inst, y, q)
    served = assign >= 0
    util = 1.0 - np.abs(inst.positions[served] - y[assign[served]])
    return float(np.sum(util)) / inst.n


def wasserstein_to_dirac(inst: Instance, y: float, q: float) -> float:
    """Partial-transport cost from the empirical measure to ``(k/n) δ_y``."""
    k = capacity_count(q, inst.n)
    d = np.sort(np.abs(inst.positions - y))[:k]
    return float(np.sum(d)) / inst.n


def partial_transport_to_point(x: np.ndarray, weights: np.ndarray, y: float, mass: float) -> float:
    """Exact minimum cost of moving ``mass`` from weighted atoms onto ``y``.

    Filling the target from the nearest atoms outward is optimal because the
    cost of each unit of mass only depends on its own distance to ``y``.
    Atoms may be split.
    """
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if mass > weights.sum() + 1e-12:
        raise ValueError("not enough mass to transport")
    dist = np.abs(x - y)
    cost = 0.0
    need = float(mass)
    for i in np.argsort(dist, kind="stable"):
        if need <= 0.0:
            break
        take = min(weights[i], need)
        cost += take * dist[i]
        need -= take
    return cost


def wasserstein_oracle(inst: Instance, y: float, q: float) -> float:
    n = inst.n
    k = capacity_count(q, n)
    return partial_transport_to_point(inst.positions, np.full(n, 1.0 / n), y, k / n)


__all__ = [
    "FixedPointError",
    "WelfareEval",
    "delta",
    "empirical_sw",
    "k_nearest",
    "ne_assignment",
    "partial_transport_to_point",
    "transport_cost",
    "w_es_values",
    "w_one",
    "w_one_derivative",
    "w_one_values",
    "w_two",
    "w_two_values",
    "wasserstein_oracle",
    "wasserstein_to_dirac",
]
