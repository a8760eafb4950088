"""Small numerical kernels shared by the rest of the package.

Adaptive Simpson integration, fixed-order Gauss-Legendre rules and a
vectorised bisection for monotone functions.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-9,
    max_depth: int = 48,
) -> float:
    """Integrate a scalar function over [a, b] with adaptive Simpson's rule.

    Each accepted panel is Richardson-corrected.  The absolute tolerance is
    split between halves as the recursion descends, so the total error is
    bounded by roughly ``tol`` for smooth integrands.
    """
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, tol, max_depth)

    fa, fb = float(f(a)), float(f(b))
    m = 0.5 * (a + b)
    fm = float(f(m))
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = float(f(lm))
        frm = float(f(rm))
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        diff = left + right - est
        if depth >= max_depth or abs(diff) <= 15.0 * eps:
            total += left + right + diff / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
    return total


@lru_cache(maxsize=32)
def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


def gauss_legendre_rule(a, b, order: int):
    """Nodes and weights of the ``order``-point rule on [a, b].

    ``a`` and ``b`` may be arrays; the returned nodes then have shape
    ``a.shape + (order,)`` and the weights broadcast against them.
    """
    t, w = _leggauss(order)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (t + 1.0), half * w


def gauss_legendre(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, order: int = 64) -> float:
    """Integrate a vectorised function over [a, b] with a fixed-order rule."""
    x, w = gauss_legendre_rule(a, b, order)
    return float(np.sum(w * f(x)))


def bisect_increasing(
    g: Callable[[np.ndarray], np.ndarray],
    target,
    lo,
    hi,
    xtol: float = 1e-15,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve ``g(x) = target`` elementwise for non-decreasing ``g``.

    ``lo``/``hi`` must bracket the solution (``g(lo) <= target <= g(hi)``).
    Returns the midpoint of the final bracket.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    target = np.broadcast_to(np.asarray(target, dtype=float), np.broadcast(lo, hi).shape)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.copy(), hi.copy()
    for _ in range(max_iter):
        if np.all(hi - lo <= xtol):
            break
        mid = 0.5 * (lo + hi)
        below = g(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)
