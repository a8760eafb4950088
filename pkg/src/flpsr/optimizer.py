"""Optimal percentile mechanisms for one and two capacitated facilities."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .distributions import ClassTag, Distribution
from .quadrature import bisect_increasing
from .welfare import delta as _delta
from .welfare import w_es_values, w_one, w_one_values, w_two_values

SCAN_POINTS = 512
VERIFY_POINTS = 2001
VERIFY_SLACK = 1e-6
FLAT_TOL = 1e-10


class Method(str, Enum):
    CLOSED_FORM_MONOTONE = "closed_form_monotone"
    CLOSED_FORM_SYMMETRIC_SP = "closed_form_symmetric_sp"
    CLOSED_FORM_SD = "closed_form_sd"
    BISECTION_ON_DERIVATIVE = "bisection_on_derivative"
    GRID_FALLBACK = "grid_fallback"


@dataclass(frozen=True)
class OneFacilitySolution:
    percentile: float
    position: float
    w_min: float
    limit_sw: float
    method: Method
    flat_interval: Optional[tuple[float, float]] = None  # percentiles where 𝒲 stays minimal

    def to_dict(self) -> dict:
        out = {
            "percentile": self.percentile,
            "position": self.position,
            "w_min": self.w_min,
            "limit_sw": self.limit_sw,
            "method": self.method.value,
        }
        if self.flat_interval is not None:
            out["flat_interval"] = list(self.flat_interval)
        return out


def _check_q(q: float) -> None:
    if not (0.0 < q <= 1.0):
        raise ValueError(f"capacity must lie in (0, 1], got {q}")


def lemma_window(d: Distribution, q: float) -> tuple[float, float]:
    """Positions that can host a one-facility optimum."""
    return float(d.quantile(q / 2.0)), float(d.quantile(1.0 - q / 2.0))


def _derivative_roots(d: Distribution, q: float, lo: float, hi: float, tol: float):
    ys = np.linspace(lo, hi, SCAN_POINTS)
    slope = -_delta(d, q, ys)
    # a local minimum of 𝒲 is a crossing from negative to non-negative slope
    cross = np.nonzero((slope[:-1] < 0.0) & (slope[1:] >= 0.0))[0]
    if len(cross) == 0:
        return ys, slope, np.empty(0)
    a, b = ys[cross], ys[cross + 1]
    roots = bisect_increasing(lambda y: -_delta(d, q, y), 0.0, a, b, xtol=tol * 1e-3)
    return ys, slope, roots


def _flat_interval(d: Distribution, q: float, y_star: float, w_star: float, lo: float, hi: float):
    ys = np.linspace(lo, hi, VERIFY_POINTS)
    flat = w_one_values(d, q, ys) <= w_star + FLAT_TOL
    if flat.sum() < 2:
        return None
    # the contiguous run of flat points containing the optimum
    i = int(np.argmin(np.abs(ys - y_star)))
    if not flat[i]:
        return None
    j0 = i
    while j0 > 0 and flat[j0 - 1]:
        j0 -= 1
    j1 = i
    while j1 < len(ys) - 1 and flat[j1 + 1]:
        j1 += 1
    if j1 - j0 < 2:
        return None
    return float(d.cdf(ys[j0])), float(d.cdf(ys[j1]))


def _solution(d, q, y, method, lo, hi) -> OneFacilitySolution:
    ev = w_one(d, q, y)
    return OneFacilitySolution(
        percentile=float(d.cdf(y)),
        position=float(y),
        w_min=ev.w_value,
        limit_sw=ev.limit_sw,
        method=method,
        flat_interval=_flat_interval(d, q, y, ev.w_value, lo, hi),
    )


def optimize_one(d: Distribution, q: float, tol: float = 1e-8, method: Optional[str] = None) -> OneFacilitySolution:
    """Optimal percentile for one facility of capacity ``q``.

    Known density classes are answered in closed form.  Anything else, or
    any class when ``method="bisection"``, is handled by locating the zeros
    of 𝒲′ inside the window where the optimum must lie.  Each answer is
    checked against a 2001-point grid on [0, 1] and replaced by the refined
    grid minimiser if it loses.
    """
    _check_q(q)
    lo, hi = lemma_window(d, q)
    tag = d.class_tag
    forced = method is not None and method != "auto"
    if forced and method not in ("bisection", "grid"):
        raise ValueError(f"unknown method {method!r}")

    y: Optional[float] = None
    how: Optional[Method] = None
    if not forced:
        if tag is ClassTag.MONOTONE_NON_INCREASING:
            y, how = lo, Method.CLOSED_FORM_MONOTONE
        elif tag is ClassTag.MONOTONE_NON_DECREASING:
            y, how = hi, Method.CLOSED_FORM_MONOTONE
        elif tag is ClassTag.SINGLE_PEAKED and d.symmetric:
            y, how = float(d.quantile(0.5)), Method.CLOSED_FORM_SYMMETRIC_SP
        elif tag is ClassTag.SINGLE_DIPPED:
            wl, wh = w_one_values(d, q, np.array([lo, hi]))
            y = lo if wl <= wh else hi
            how = Method.CLOSED_FORM_SD

    if y is None:
        ys, _, roots = _derivative_roots(d, q, lo, hi, tol)
        if method == "grid" or len(roots) == 0:
            w = w_one_values(d, q, ys)
            y, how = float(ys[int(np.argmin(w))]), Method.GRID_FALLBACK
        else:
            cand = np.concatenate([roots, [lo, hi]])
            w = w_one_values(d, q, cand)
            y, how = float(cand[int(np.argmin(w))]), Method.BISECTION_ON_DERIVATIVE

    grid = np.linspace(0.0, 1.0, VERIFY_POINTS)
    wg = w_one_values(d, q, grid)
    w_y = float(w_one_values(d, q, y))
    if w_y > wg.min() + VERIFY_SLACK:
        y = _refine_scalar(d, q, grid, wg)
        how = Method.GRID_FALLBACK
    return _solution(d, q, y, how, lo, hi)


def _refine_scalar(d, q, grid, wg) -> float:
    i = int(np.argmin(wg))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    for _ in range(60):
        ys = np.linspace(a, b, 9)
        k = int(np.argmin(w_one_values(d, q, ys)))
        a, b = ys[max(k - 1, 0)], ys[min(k + 1, 8)]
        if b - a < 1e-12:
            break
    return float(0.5 * (a + b))


# --------------------------------------------------------------------------
# two facilities


def _check_pair(q1: float, q2: float) -> None:
    _check_q(q1)
    _check_q(q2)
    if q1 + q2 >= 1.0:
        raise ValueError("two facilities need q1 + q2 < 1")


def es_gap(d: Distribution, y1, y2):
    return d.cdf(y2) - d.cdf(y1)


@dataclass(frozen=True)
class TwoMinimizers:
    """Near-minimal pairs of the unconstrained two-facility landscape."""

    pairs: np.ndarray  # (k, 2), y1 <= y2
    w_values: np.ndarray
    w_min: float
    skipped: int  # grid cells whose coupled radii did not solve


def _coordinate_descent(d, q1, q2, pts, w, step, min_step=1e-6, max_rounds=400):
    pts = pts.copy()
    w = w.copy()
    step = np.full(len(pts), step)
    moves = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    for _ in range(max_rounds):
        live = step >= min_step
        if not live.any():
            break
        idx = np.nonzero(live)[0]
        best_w = w[idx].copy()
        best_p = pts[idx].copy()
        for mv in moves:
            cand = np.clip(pts[idx] + mv * step[idx, None], 0.0, 1.0)
            cand[:, 0] = np.minimum(cand[:, 0], cand[:, 1])
            wc, ok = w_two_values(d, q1, q2, cand[:, 0], cand[:, 1])
            better = ok & (wc < best_w - 1e-15)
            best_w = np.where(better, wc, best_w)
            best_p[better] = cand[better]
        improved = best_w < w[idx]
        pts[idx] = best_p
        w[idx] = best_w
        step[idx[~improved]] *= 0.5
    return pts, w


def unconstrained_two_minimizers(
    d: Distribution,
    q: tuple[float, float],
    grid: int = 400,
    band: float = 1e-6,
    max_refine: int = 256,
) -> TwoMinimizers:
    """Grid search of 𝒲(y1, y2) over ``y1 <= y2`` followed by local descent.

    Cells whose coupled radii cannot be solved (a facility whose territory
    holds less than its capacity) are skipped and counted.  At most
    ``max_refine`` band members, ranked by value, are refined.
    """
    q1, q2 = map(float, q)
    _check_pair(q1, q2)
    ys = np.linspace(0.0, 1.0, grid)
    i, j = np.triu_indices(grid)
    y1, y2 = ys[i], ys[j]
    w, ok = w_two_values(d, q1, q2, y1, y2)
    skipped = int((~ok).sum())
    y1, y2, w = y1[ok], y2[ok], w[ok]
    if len(w) == 0:
        raise ValueError("no grid cell admits a two-facility serving solution")
    members = np.nonzero(w <= w.min() + band)[0]
    members = members[np.argsort(w[members], kind="stable")][:max_refine]
    pts = np.column_stack([y1[members], y2[members]])
    pts, wr = _coordinate_descent(d, q1, q2, pts, w[members], step=ys[1] - ys[0])
    w_min = float(min(wr.min(), w.min()))
    keep = wr <= w_min + band
    pts, wr = pts[keep], wr[keep]
    _, uniq = np.unique(np.round(pts, 6), axis=0, return_index=True)
    uniq = np.sort(uniq)
    order = np.argsort(wr[uniq], kind="stable")
    return TwoMinimizers(pts[uniq][order], wr[uniq][order], w_min, skipped)


@dataclass(frozen=True)
class FeasibilityVerdict:
    feasible: bool
    reason: str
    witness: Optional[tuple[float, float]] = None

    def __bool__(self) -> bool:
        return self.feasible


def es_optimal_feasible(d: Distribution, q: tuple[float, float], grid: int = 400) -> FeasibilityVerdict:
    """Whether some 𝒲-minimising pair is also equilibrium stable."""
    q1, q2 = map(float, q)
    _check_pair(q1, q2)
    Q = q1 + q2
    if Q >= 2.0 / 3.0:
        return FeasibilityVerdict(False, "total capacity is at least 2/3")
    tag = d.class_tag
    if tag.is_monotone or tag is ClassTag.SINGLE_PEAKED:
        return FeasibilityVerdict(False, f"density class {tag.value} admits no ES optimum")
    if tag is ClassTag.SINGLE_DIPPED and d.symmetric:
        w = (float(d.quantile(q1 / 2.0)), float(d.quantile(1.0 - q2 / 2.0)))
        return FeasibilityVerdict(True, "symmetric single-dipped density", w)
    mins = unconstrained_two_minimizers(d, (q1, q2), grid=grid)
    gaps = es_gap(d, mins.pairs[:, 0], mins.pairs[:, 1])
    hit = np.nonzero(gaps >= Q - 1e-9)[0]
    if len(hit):
        y1, y2 = mins.pairs[hit[0]]
        return FeasibilityVerdict(True, "an unconstrained minimiser is ES", (float(y1), float(y2)))
    y1, y2 = mins.pairs[0]
    return FeasibilityVerdict(
        False, f"minimisers violate the ES gap (best gap {gaps.max():.6g} < {Q:.6g}) at ({y1:.6g}, {y2:.6g})"
    )


@dataclass(frozen=True)
class OrientedSearch:
    """Algorithm-1 result for one fixed left/right capacity arrangement."""

    left_capacity: float
    right_capacity: float
    positions: tuple[float, float]
    percentiles: tuple[float, float]
    w_min: float
    evaluations: int


@dataclass(frozen=True)
class TwoFacilitySolution:
    percentiles: tuple[float, float]  # ascending positions
    positions: tuple[float, float]
    capacities: tuple[float, float]  # capacity of the left and the right facility
    w_min: float
    limit_sw: float
    es_optimal_feasible: Optional[bool]
    delta: float
    swapped: bool  # True when q2 sits on the left
    searches: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "p1": self.percentiles[0],
            "p2": self.percentiles[1],
            "y1": self.positions[0],
            "y2": self.positions[1],
            "q_left": self.capacities[0],
            "q_right": self.capacities[1],
            "swapped": self.swapped,
            "w_min": self.w_min,
            "limit_sw": self.limit_sw,
            "es_optimal_feasible": self.es_optimal_feasible,
            "delta": self.delta,
        }


def _grid(a: float, b: float, step: float) -> np.ndarray:
    """``a, a+step, ...`` below ``b``, then ``b`` itself."""
    if b <= a:
        return np.array([a])
    pts = np.arange(a, b, step)
    if b - pts[-1] > 1e-12:
        pts = np.append(pts, b)
    else:
        pts[-1] = b
    return pts


def algorithm_one(d: Distribution, q_left: float, q_right: float, delta: float, chunk: int = 200_000) -> OrientedSearch:
    """Reduced ES search with ``q_left`` on the left facility."""
    Q = q_left + q_right
    T = _grid(0.0, float(d.quantile(1.0 - Q)), delta)
    M = d.quantile(np.minimum(d.cdf(T) + Q, 1.0))
    upper = float(d.quantile(1.0 - q_right / 2.0))
    w_left = w_one_values(d, q_left, T)

    rows, cols = [], []
    for k, (m, t) in enumerate(zip(M, T)):
        s = _grid(float(m), upper, delta) if m < upper else np.array([m])
        rows.append(np.full(len(s), k))
        cols.append(s)
    rows = np.concatenate(rows)
    S = np.concatenate(cols)

    best_w, best_i = np.inf, -1
    for start in range(0, len(S), chunk):
        sl = slice(start, start + chunk)
        w = w_left[rows[sl]] + w_one_values(d, q_right, S[sl])
        i = int(np.argmin(w))
        if w[i] < best_w:  # strict: the earliest minimiser wins
            best_w, best_i = float(w[i]), start + i
    y1, y2 = float(T[rows[best_i]]), float(S[best_i])
    return OrientedSearch(
        q_left, q_right, (y1, y2), (float(d.cdf(y1)), float(d.cdf(y2))), best_w, len(S)
    )


def best_es_two(
    d: Distribution,
    q: tuple[float, float],
    delta: float = 0.001,
    orientation: str = "both",
    check_feasibility: bool = True,
) -> TwoFacilitySolution:
    """Best equilibrium-stable two-facility percentile pair on a ``delta`` grid.

    ``orientation`` is ``"both"`` (keep the better capacity arrangement),
    ``"as_given"`` (``q[0]`` on the left) or ``"swapped"``.
    """
    q1, q2 = map(float, q)
    _check_pair(q1, q2)
    if not (0.0 < delta <= 0.1):
        raise ValueError(f"delta must lie in (0, 0.1], got {delta}")
    if orientation not in ("both", "as_given", "swapped"):
        raise ValueError(f"unknown orientation {orientation!r}")

    searches = {}
    if orientation in ("both", "as_given"):
        searches["as_given"] = algorithm_one(d, q1, q2, delta)
    if orientation in ("both", "swapped"):
        searches["swapped"] = (
            searches["as_given"] if q1 == q2 and "as_given" in searches else algorithm_one(d, q2, q1, delta)
        )
    key = min(searches, key=lambda k: (searches[k].w_min, k != "as_given"))
    best = searches[key]
    feasible = es_optimal_feasible(d, (q1, q2)).feasible if check_feasibility else None
    return TwoFacilitySolution(
        percentiles=best.percentiles,
        positions=best.positions,
        capacities=(best.left_capacity, best.right_capacity),
        w_min=best.w_min,
        limit_sw=q1 + q2 - best.w_min,
        es_optimal_feasible=feasible,
        delta=delta,
        swapped=(key == "swapped" and q1 != q2),
        searches=searches,
    )


def es_w_check(d: Distribution, sol: TwoFacilitySolution) -> float:
    """Recompute 𝒲 of a solution from its positions (decomposed ES form)."""
    (y1, y2), (ql, qr) = sol.positions, sol.capacities
    return float(w_es_values(d, ql, qr, y1, y2))
