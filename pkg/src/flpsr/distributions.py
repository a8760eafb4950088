"""Absolutely continuous agent distributions on [0, 1].

A :class:`Distribution` bundles a density, its CDF, the first partial moment
``G(x) = int_0^x t f(t) dt`` and a bisection quantile.  The partial moment
lets the welfare code evaluate transport costs in closed form from CDF
differences, which is what makes the grid searches affordable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy import special

from .quadrature import adaptive_simpson, bisect_increasing, gauss_legendre_rule

ArrayFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_GRID = 4096
TAG_TOL = 1e-9
SYMMETRY_TOL = 1e-8


class ClassTag(str, Enum):
    MONOTONE_NON_INCREASING = "monotone_non_increasing"
    MONOTONE_NON_DECREASING = "monotone_non_decreasing"
    SINGLE_PEAKED = "single_peaked"
    SINGLE_DIPPED = "single_dipped"
    GENERAL = "general"

    @property
    def is_monotone(self) -> bool:
        return self in (ClassTag.MONOTONE_NON_INCREASING, ClassTag.MONOTONE_NON_DECREASING)


class DistributionError(ValueError):
    """Invalid distribution parameters or a density that cannot be normalised."""


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _out(values: np.ndarray, scalar: bool):
    return float(values) if scalar else values


class Distribution:
    """A probability measure on [0, 1] given by a density.

    ``density``, ``cdf`` and ``partial_mean`` accept scalars or arrays.
    Instances are immutable once built; use the module-level constructors
    (:func:`build`, :func:`uniform`, :func:`beta`, ...) rather than calling
    the initialiser directly.
    """

    def __init__(
        self,
        density: ArrayFn,
        cdf: ArrayFn,
        partial_mean: ArrayFn,
        *,
        name: str = "custom",
        class_tag: ClassTag | None = None,
        symmetric: bool | None = None,
        grid_resolution: int = DEFAULT_GRID,
    ):
        if grid_resolution < 8:
            raise DistributionError("grid_resolution must be at least 8")
        self._density = density
        self._cdf = cdf
        self._partial_mean = partial_mean
        self.name = name
        self.grid_resolution = int(grid_resolution)
        self._grid_x = np.linspace(0.0, 1.0, self.grid_resolution + 1)
        self._grid_f = np.asarray(density(self._grid_x), dtype=float)
        self._grid_F = np.maximum.accumulate(np.clip(cdf(self._grid_x), 0.0, 1.0))
        self.class_tag = class_tag if class_tag is not None else infer_class_tag(self._grid_f)
        self.symmetric = (
            symmetric
            if symmetric is not None
            else bool(np.max(np.abs(self._grid_f - self._grid_f[::-1])) <= SYMMETRY_TOL)
        )

    def __repr__(self) -> str:
        return f"Distribution({self.name!r}, tag={self.class_tag.value}, symmetric={self.symmetric})"

    def density(self, x):
        arr, scalar = _as_array(x)
        inside = (arr >= 0.0) & (arr <= 1.0)
        vals = np.where(inside, self._density(np.clip(arr, 0.0, 1.0)), 0.0)
        return _out(vals, scalar)

    def cdf(self, x):
        arr, scalar = _as_array(x)
        vals = np.clip(self._cdf(np.clip(arr, 0.0, 1.0)), 0.0, 1.0)
        return _out(vals, scalar)

    def partial_mean(self, x):
        """``int_0^x t f(t) dt`` with ``x`` clipped to [0, 1]."""
        arr, scalar = _as_array(x)
        return _out(self._partial_mean(np.clip(arr, 0.0, 1.0)), scalar)

    @property
    def cdf_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Cached monotone table ``(x_i, F(x_i))`` at ``grid_resolution`` cells."""
        return self._grid_x, self._grid_F

    def quantile(self, p):
        """Generalised inverse of the CDF by bisection inside the grid cell."""
        arr, scalar = _as_array(p)
        if np.any((arr < -1e-12) | (arr > 1.0 + 1e-12)):
            raise DistributionError("quantile levels must lie in [0, 1]")
        arr = np.clip(arr, 0.0, 1.0)
        gx, gF = self._grid_x, self._grid_F
        idx = np.clip(np.searchsorted(gF, arr, side="left"), 1, len(gx) - 1)
        lo, hi = gx[idx - 1], gx[idx]
        # cached grid is a monotone envelope; widen by one cell for safety
        lo = np.maximum(lo - (gx[1] - gx[0]), 0.0)
        hi = np.minimum(hi + (gx[1] - gx[0]), 1.0)
        x = bisect_increasing(self.cdf, arr, lo, hi, xtol=1e-15)
        # the generalised inverse reaches the support edges exactly
        x = np.where(arr <= 0.0, 0.0, x)
        x = np.where((x > 1.0 - 1e-14) & (self.cdf(x) < arr), 1.0, x)
        return _out(x, scalar)

    def mirrored(self) -> "Distribution":
        """The reflected law of ``1 - X``."""
        F, G, f = self._cdf, self._partial_mean, self._density
        total_g = float(G(np.array(1.0)))

        def cdf(x):
            return 1.0 - F(1.0 - x)

        def partial_mean(x):
            # int_0^x t f(1-t) dt = int_{1-x}^1 (1-u) f(u) du
            u = 1.0 - x
            return (1.0 - F(u)) - (total_g - G(u))

        tag = {
            ClassTag.MONOTONE_NON_INCREASING: ClassTag.MONOTONE_NON_DECREASING,
            ClassTag.MONOTONE_NON_DECREASING: ClassTag.MONOTONE_NON_INCREASING,
        }.get(self.class_tag, self.class_tag)
        if self.class_tag is ClassTag.MONOTONE_NON_INCREASING and np.ptp(self._grid_f) <= TAG_TOL:
            tag = self.class_tag
        return Distribution(
            lambda x: f(1.0 - x),
            cdf,
            partial_mean,
            name=f"mirror({self.name})",
            class_tag=tag,
            symmetric=self.symmetric,
            grid_resolution=self.grid_resolution,
        )


def infer_class_tag(values: np.ndarray, tol: float = TAG_TOL) -> ClassTag:
    """Classify a density sampled on an increasing grid by its monotonicity pattern."""
    d = np.diff(np.asarray(values, dtype=float))
    signs = np.sign(np.where(np.abs(d) <= tol, 0.0, d))
    signs = signs[signs != 0]
    if len(signs) == 0 or np.all(signs < 0):
        return ClassTag.MONOTONE_NON_INCREASING
    if np.all(signs > 0):
        return ClassTag.MONOTONE_NON_DECREASING
    changes = np.nonzero(np.diff(signs))[0]
    if len(changes) == 1:
        return ClassTag.SINGLE_PEAKED if signs[0] > 0 else ClassTag.SINGLE_DIPPED
    return ClassTag.GENERAL


def _check_support(dist: Distribution) -> Distribution:
    gx, gF = dist.cdf_grid
    if abs(gF[0]) > 1e-10 or abs(gF[-1] - 1.0) > 1e-10:
        raise DistributionError(f"cdf does not run from 0 to 1 (got {gF[0]}, {gF[-1]})")
    if np.any(dist._grid_f < -1e-12):
        raise DistributionError("density takes negative values")
    flat = np.diff(gF) <= 0.0
    inside = np.nonzero(~flat)[0]
    if len(inside):
        interior = flat[inside[0] : inside[-1] + 1]
        run = 0
        for is_flat in interior:
            run = run + 1 if is_flat else 0
            if run > 1:
                raise DistributionError("density vanishes on an interior interval")
    return dist


# --------------------------------------------------------------------------
# concrete families


def uniform(grid_resolution: int = DEFAULT_GRID) -> Distribution:
    return Distribution(
        lambda x: np.ones_like(x, dtype=float),
        lambda x: np.asarray(x, dtype=float),
        lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,
        name="uniform",
        class_tag=ClassTag.MONOTONE_NON_INCREASING,
        symmetric=True,
        grid_resolution=grid_resolution,
    )


def _beta_tag(a: float, b: float) -> ClassTag:
    if a > 1 and b > 1:
        return ClassTag.SINGLE_PEAKED
    if a < 1 and b < 1:
        return ClassTag.SINGLE_DIPPED
    if a <= 1 and b >= 1:
        return ClassTag.MONOTONE_NON_INCREASING
    return ClassTag.MONOTONE_NON_DECREASING


def beta(a: float, b: float, grid_resolution: int = DEFAULT_GRID) -> Distribution:
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise DistributionError(f"Beta parameters must be positive, got alpha={a}, beta={b}")
    if a == 1 and b == 1:
        return uniform(grid_resolution)
    log_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    mean = a / (a + b)

    def density(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.exp(log_norm + special.xlogy(a - 1, x) + special.xlog1py(b - 1, -x))

    return Distribution(
        density,
        lambda x: special.betainc(a, b, x),
        lambda x: mean * special.betainc(a + 1, b, x),
        name=f"beta({a:g},{b:g})",
        class_tag=_beta_tag(a, b),
        symmetric=(a == b),
        grid_resolution=grid_resolution,
    )


def piecewise_linear(knots: Sequence[Sequence[float]], grid_resolution: int = DEFAULT_GRID) -> Distribution:
    """Density interpolating ``(x, f)`` knots linearly, normalised to unit mass."""
    pts = np.asarray(knots, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise DistributionError("knots must be a list of at least two (x, f) pairs")
    xs, fs = pts[:, 0], pts[:, 1]
    if np.any(np.diff(xs) <= 0):
        raise DistributionError("knot positions must be strictly increasing")
    if abs(xs[0]) > 1e-12 or abs(xs[-1] - 1.0) > 1e-12:
        raise DistributionError("knots must cover [0, 1]")
    if np.any(fs < 0):
        raise DistributionError("knot density values must be non-negative")
    widths = np.diff(xs)
    mass = float(np.sum(0.5 * (fs[1:] + fs[:-1]) * widths))
    if not (mass > 0 and math.isfinite(mass)):
        raise DistributionError("piecewise-linear density has zero mass")
    fs = fs / mass
    slopes = np.diff(fs) / widths
    seg_mass = 0.5 * (fs[1:] + fs[:-1]) * widths
    seg_moment = widths * (xs[:-1] * fs[:-1] + (xs[:-1] * slopes + fs[:-1]) * widths / 2 + slopes * widths**2 / 3)
    F0 = np.concatenate([[0.0], np.cumsum(seg_mass)])
    G0 = np.concatenate([[0.0], np.cumsum(seg_moment)])
    F0 /= F0[-1]

    def locate(x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        return i, x - xs[i]

    def density(x):
        i, t = locate(x)
        return fs[i] + slopes[i] * t

    def cdf(x):
        i, t = locate(x)
        return F0[i] + fs[i] * t + 0.5 * slopes[i] * t * t

    def partial_mean(x):
        i, t = locate(x)
        x0, f0, s = xs[i], fs[i], slopes[i]
        return G0[i] + x0 * f0 * t + (x0 * s + f0) * t * t / 2 + s * t**3 / 3

    return _check_support(
        Distribution(density, cdf, partial_mean, name="piecewise_linear", grid_resolution=grid_resolution)
    )


def polynomial(coeffs: Sequence[float], grid_resolution: int = DEFAULT_GRID) -> Distribution:
    """Density proportional to ``sum_i c_i x^i`` on [0, 1]."""
    poly = np.polynomial.Polynomial(np.asarray(coeffs, dtype=float))
    prim = poly.integ()
    mass = float(prim(1.0) - prim(0.0))
    if not (mass > 0 and math.isfinite(mass)):
        raise DistributionError("polynomial density has non-positive mass")
    poly = poly / mass
    prim = poly.integ(lbnd=0.0)
    moment = (np.polynomial.Polynomial([0.0, 1.0]) * poly).integ(lbnd=0.0)
    if np.any(poly(np.linspace(0, 1, grid_resolution + 1)) < -1e-12):
        raise DistributionError("polynomial density is negative somewhere on [0, 1]")
    return _check_support(
        Distribution(
            lambda x: np.maximum(poly(np.asarray(x, dtype=float)), 0.0),
            lambda x: prim(np.asarray(x, dtype=float)),
            lambda x: moment(np.asarray(x, dtype=float)),
            name="polynomial",
            grid_resolution=grid_resolution,
        )
    )


def _hermite(xs, ys, slopes):
    """Cubic Hermite interpolant through ``(xs, ys)`` with exact nodal slopes."""
    h = xs[1] - xs[0]

    def interp(x):
        x = np.asarray(x, dtype=float)
        i = np.clip(((x - xs[0]) / h).astype(np.int64), 0, len(xs) - 2)
        t = (x - xs[i]) / h
        t2, t3 = t * t, t * t * t
        return (
            (2 * t3 - 3 * t2 + 1) * ys[i]
            + (t3 - 2 * t2 + t) * h * slopes[i]
            + (-2 * t3 + 3 * t2) * ys[i + 1]
            + (t3 - t2) * h * slopes[i + 1]
        )

    return interp


def from_density(
    density: ArrayFn,
    grid_resolution: int = DEFAULT_GRID,
    name: str = "custom",
    normalize: bool = True,
    cell_order: int = 8,
) -> Distribution:
    """Tabulate an arbitrary vectorised density into a :class:`Distribution`.

    CDF and partial moment are integrated cell by cell with Gauss-Legendre
    and then interpolated with cubic Hermite splines using the exact density
    as slope, which is exact for polynomial densities up to degree two.
    """
    xs = np.linspace(0.0, 1.0, grid_resolution + 1)
    nodes, weights = gauss_legendre_rule(xs[:-1], xs[1:], cell_order)
    fn = np.asarray(density(nodes), dtype=float)
    if np.any(~np.isfinite(fn)):
        raise DistributionError("density is not finite on [0, 1]")
    if np.any(fn < -1e-12):
        raise DistributionError("density takes negative values")
    cell_mass = np.sum(weights * fn, axis=-1)
    cell_moment = np.sum(weights * nodes * fn, axis=-1)
    mass = float(np.sum(cell_mass))
    if not (mass > 0 and math.isfinite(mass)):
        raise DistributionError("density is not normalizable")
    scale = 1.0 / mass if normalize else 1.0
    Fs = np.concatenate([[0.0], np.cumsum(cell_mass)]) * scale
    Gs = np.concatenate([[0.0], np.cumsum(cell_moment)]) * scale
    fx = np.maximum(np.asarray(density(xs), dtype=float), 0.0) * scale

    def dens(x):
        return np.maximum(np.asarray(density(x), dtype=float), 0.0) * scale

    return _check_support(
        Distribution(
            dens,
            _hermite(xs, Fs, fx),
            _hermite(xs, Gs, xs * fx),
            name=name,
            grid_resolution=grid_resolution,
        )
    )


# --------------------------------------------------------------------------
# mixtures over a parameter law


@dataclass(frozen=True)
class ParamFamily:
    """A family ``f(x | theta)`` of densities on [0, 1].

    ``theta_support(x, lo, hi)`` narrows the parameter range where the
    integrand is non-zero and smooth so that the quadrature nodes fall on
    the right side of any indicator kink.
    """

    density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta_support: Callable[[np.ndarray, float, float], tuple[np.ndarray, np.ndarray]] | None = None
    name: str = "family"


def _uniform_prefix_density(x, theta):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((x <= theta) & (theta > 0), 1.0 / theta, 0.0)


UNIFORM_PREFIX = ParamFamily(
    _uniform_prefix_density,
    lambda x, lo, hi: (np.maximum(x, lo), np.full_like(x, hi)),
    name="uniform_prefix",
)

FAMILIES = {"uniform_prefix": UNIFORM_PREFIX}


def mix_family(
    family: ParamFamily | Callable[[np.ndarray, np.ndarray], np.ndarray],
    param_density: Callable[[np.ndarray], np.ndarray],
    theta_range: tuple[float, float] = (0.0, 1.0),
    order: int = 64,
    grid_resolution: int = DEFAULT_GRID,
    name: str | None = None,
) -> Distribution:
    """Average ``f(x | theta)`` over a parameter density ``eta(theta)``."""
    if not isinstance(family, ParamFamily):
        family = ParamFamily(family)
    lo, hi = map(float, theta_range)
    tn, tw = gauss_legendre_rule(lo, hi, order)
    mass = float(np.sum(tw * param_density(tn)))
    if abs(mass - 1.0) > 1e-6:
        raise DistributionError(f"parameter density has mass {mass:.9g}, expected 1")

    def density(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        if family.theta_support is not None:
            a, b = family.theta_support(flat, lo, hi)
        else:
            a, b = np.full_like(flat, lo), np.full_like(flat, hi)
        b = np.maximum(a, b)
        th, w = gauss_legendre_rule(a, b, order)
        vals = np.sum(w * family.density(flat[:, None], th) * param_density(th), axis=-1)
        return vals.reshape(x.shape)

    return from_density(
        density,
        grid_resolution=grid_resolution,
        name=name or f"mixture({family.name})",
        normalize=False,
    )


# --------------------------------------------------------------------------
# specs and sampling


@dataclass(frozen=True)
class DistributionSpec:
    """Serializable description of a distribution (see :func:`build`)."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    grid_resolution: int = DEFAULT_GRID

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DistributionSpec":
        data = dict(data)
        try:
            kind = data.pop("kind")
        except KeyError:
            raise DistributionError("distribution spec needs a 'kind'") from None
        grid = int(data.pop("grid_resolution", DEFAULT_GRID))
        return cls(str(kind), data, grid)

    @classmethod
    def parse(cls, text: str) -> "DistributionSpec":
        """Accept a JSON object, a path to one, or shorthand like ``beta:6:2``."""
        text = text.strip()
        if text.startswith("{"):
            return cls.from_dict(json.loads(text))
        path = Path(text)
        if path.suffix == ".json" or path.is_file():
            return cls.from_dict(json.loads(path.read_text()))
        head, *rest = text.split(":")
        if head == "uniform" and not rest:
            return cls("uniform")
        if head == "beta" and len(rest) == 2:
            return cls("beta", {"alpha": float(rest[0]), "beta": float(rest[1])})
        raise DistributionError(f"cannot parse distribution {text!r}")

    def to_dict(self) -> dict[str, Any]:
        out = {"kind": self.kind, **self.params}
        if self.grid_resolution != DEFAULT_GRID:
            out["grid_resolution"] = self.grid_resolution
        return out


def build(spec: DistributionSpec | dict[str, Any]) -> Distribution:
    if isinstance(spec, dict):
        spec = DistributionSpec.from_dict(spec)
    p, g = spec.params, spec.grid_resolution
    try:
        if spec.kind == "uniform":
            return uniform(g)
        if spec.kind == "beta":
            return beta(float(p["alpha"]), float(p["beta"]), g)
        if spec.kind == "piecewise_linear_density":
            return piecewise_linear(p["knots"], g)
        if spec.kind == "polynomial_density":
            return polynomial(p["coeffs"], g)
        if spec.kind == "param_mixture":
            family = FAMILIES[p["family"]]
            eta = np.polynomial.Polynomial(np.asarray(p["param_density_poly"], dtype=float))
            return mix_family(family, eta, grid_resolution=g, name=f"mixture({family.name})")
    except KeyError as exc:
        raise DistributionError(f"missing or unknown field {exc} for kind {spec.kind!r}") from None
    raise DistributionError(f"unknown distribution kind {spec.kind!r}")


@dataclass(frozen=True)
class Instance:
    """Sorted agent positions of one finite instance."""

    positions: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim != 1 or len(x) == 0:
            raise ValueError("an instance needs at least one agent")
        if np.any(np.diff(x) < 0):
            x = np.sort(x)
        object.__setattr__(self, "positions", x)

    @property
    def n(self) -> int:
        return len(self.positions)

    def counts(self, capacities: Sequence[float]) -> tuple[int, ...]:
        return tuple(capacity_count(q, self.n) for q in capacities)


def capacity_count(q: float, n: int) -> int:
    """``floor(q n)`` robust to representation error (``0.29 * 100``)."""
    return int(math.floor(q * n + 1e-9))


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and an optional spawn key."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def sample(d: Distribution, n: int, seed: int) -> Instance:
    if n < 1:
        raise ValueError("n must be at least 1")
    return sample_with(d, n, make_rng(seed))


def sample_with(d: Distribution, n: int, rng: np.random.Generator) -> Instance:
    u = rng.random(n)
    return Instance(np.sort(d.quantile(u)))


def integrate_density(d: Distribution, tol: float = 1e-10) -> float:
    """Total mass by adaptive Simpson, piecewise over a coarse partition."""
    edges = np.linspace(0.0, 1.0, 33)
    return sum(adaptive_simpson(d.density, a, b, tol / 32) for a, b in zip(edges[:-1], edges[1:]))
