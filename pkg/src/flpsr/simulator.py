"""Monte Carlo engine for finite-n percentile mechanisms.

Replication ``r`` at agent count ``n`` draws its uniforms from a Philox
stream keyed by ``(seed, n, r)``, so every estimate is a pure function of the
configuration regardless of how the work is split across processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .distributions import Distribution, DistributionSpec, Instance, build, capacity_count, make_rng
from .welfare import empirical_sw, w_es_values, w_one_values

Z95 = 1.959963984540054


class ESViolation(ValueError):
    def __init__(self, n: int, message: str):
        super().__init__(message)
        self.n = n


@dataclass(frozen=True)
class ExperimentConfig:
    dist_spec: DistributionSpec
    capacities: tuple[float, ...]
    percentiles: tuple[float, ...]
    n_values: tuple[int, ...]
    replications: int = 10_000
    seed: int = 0
    limit_sw: Optional[float] = None  # defaults to the continuum value of ``percentiles``

    def __post_init__(self):
        spec = self.dist_spec
        if isinstance(spec, dict):
            spec = DistributionSpec.from_dict(spec)
        elif isinstance(spec, str):
            spec = DistributionSpec.parse(spec)
        object.__setattr__(self, "dist_spec", spec)
        for name in ("capacities", "percentiles", "n_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        m = len(self.capacities)
        if m not in (1, 2) or len(self.percentiles) != m:
            raise ValueError("one or two facilities, with one percentile each")
        if any(not (0.0 <= p <= 1.0) for p in self.percentiles):
            raise ValueError("percentiles must lie in [0, 1]")
        if list(self.percentiles) != sorted(self.percentiles):
            raise ValueError("percentiles must be sorted ascending")
        if any(not (0.0 < q <= 1.0) for q in self.capacities):
            raise ValueError("capacities must lie in (0, 1]")
        if m == 2 and sum(self.capacities) >= 1.0:
            raise ValueError("two facilities need q1 + q2 < 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.n_values or any(n < 2 for n in self.n_values):
            raise ValueError("agent counts must be at least 2")
        for n in self.n_values:
            if min(capacity_count(q, n) for q in self.capacities) < 1:
                raise ValueError(f"capacity rounds to zero agents at n={n}")

    @property
    def m(self) -> int:
        return len(self.capacities)


@dataclass(frozen=True)
class RatioEstimate:
    n: int
    replications: int
    seed: int
    mean_sw_mech: float
    mean_sw_opt: float
    ratio: float
    ci_halfwidth: float
    abs_error: float  # |mean mechanism SW - continuum limit SW|
    gap: float  # mean optimal SW - mean mechanism SW


# --------------------------------------------------------------------------
# single instances


def mechanism_indices(p: Sequence[float], n: int) -> list[int]:
    """0-based sorted index of each facility (the ``floor(p(n-1)) + 1``-th agent)."""
    return [int(math.floor(pj * (n - 1) + 1e-12)) for pj in p]


def run_mechanism(inst: Instance, p: Sequence[float], q: Sequence[float]) -> float:
    p = list(np.atleast_1d(p))
    idx = mechanism_indices(p, inst.n)
    return empirical_sw(inst, inst.positions[idx], np.atleast_1d(q))


def window_costs(x: np.ndarray, k: int) -> np.ndarray:
    """Transport cost of each run of ``k`` consecutive agents to its lower median.

    ``x`` may be a batch of sorted rows; windows run along the last axis.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    c = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    i = np.arange(n - k + 1)
    med = i + (k - 1) // 2
    xm = x[..., med]
    below = xm * (med - i + 1) - (c[..., med + 1] - c[..., i])
    above = (c[..., i + k] - c[..., med + 1]) - xm * (i + k - 1 - med)
    return below + above


def instance_opt_one(inst: Instance, q: float) -> float:
    n = inst.n
    k = capacity_count(q, n)
    if k < 1:
        raise ValueError("capacity rounds to zero agents")
    return float((k - window_costs(inst.positions, k).min()) / n)


def _best_two(x: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """Cheapest pair of disjoint windows, sizes ``k1`` then ``k2`` left to right."""
    c1 = window_costs(x, k1)
    c2 = window_costs(x, k2)
    # suffix minima of c2; window 2 must start at or after i + k1
    suf = np.minimum.accumulate(c2[..., ::-1], axis=-1)[..., ::-1]
    n = x.shape[-1]
    starts = np.arange(n - k1 - k2 + 1)
    return np.min(c1[..., starts] + suf[..., starts + k1], axis=-1)


def instance_opt_two(inst: Instance, q: Sequence[float]) -> float:
    """Best SW over two disjoint windows with medians as facility sites."""
    n = inst.n
    k1, k2 = (capacity_count(qj, n) for qj in q)
    if min(k1, k2) < 1 or k1 + k2 > n:
        raise ValueError(f"infeasible capacity counts ({k1}, {k2}) for n={n}")
    x = inst.positions
    cost = min(_best_two(x, k1, k2), _best_two(x, k2, k1))
    return float((k1 + k2 - cost) / n)


def es_condition_holds(p: Sequence[float], q: Sequence[float], n: int) -> bool:
    if len(p) < 2:
        return True
    v1, v2 = mechanism_indices(p, n)
    return v2 - v1 >= math.floor((q[0] + q[1]) * (n - 1) + 1e-9)


# --------------------------------------------------------------------------
# batches


@lru_cache(maxsize=8)
def _dist_for(spec_json: str) -> Distribution:
    import json

    return build(DistributionSpec.from_dict(json.loads(spec_json)))


def _spec_key(spec: DistributionSpec) -> str:
    import json

    return json.dumps(spec.to_dict(), sort_keys=True)


def sample_batch(d: Distribution, n: int, seed: int, reps: Sequence[int]) -> np.ndarray:
    """Sorted instances (one row per replication index in ``reps``)."""
    u = np.stack([make_rng(seed, n, r).random(n) for r in reps])
    return np.sort(d.quantile(u), axis=1)


def _score_rows(x: np.ndarray, p, q) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[1]
    if len(q) == 1:
        k = capacity_count(q[0], n)
        (i,) = mechanism_indices(p, n)
        dist = np.abs(x - x[:, i : i + 1])
        near = np.partition(dist, k - 1, axis=1)[:, :k].sum(axis=1)
        mech = (k - near) / n
        opt = (k - window_costs(x, k).min(axis=1)) / n
        return mech, opt
    k1, k2 = (capacity_count(qj, n) for qj in q)
    mech = np.array([run_mechanism(Instance(row), p, q) for row in x])
    opt = (k1 + k2 - np.minimum(_best_two(x, k1, k2), _best_two(x, k2, k1))) / n
    return mech, opt


def _work(args) -> tuple[np.ndarray, np.ndarray]:
    spec_json, n, seed, r0, r1, p, q = args
    d = _dist_for(spec_json)
    x = sample_batch(d, n, seed, range(r0, r1))
    return _score_rows(x, p, q)


def worker_count() -> int:
    env = os.environ.get("FLPSR_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            pass
    return cpus


def simulate_sw(cfg: ExperimentConfig, n: int, workers: Optional[int] = None, chunk: int = 500):
    """Per-replication (mechanism, optimum) SW arrays at agent count ``n``."""
    key = _spec_key(cfg.dist_spec)
    jobs = [
        (key, n, cfg.seed, r0, min(r0 + chunk, cfg.replications), cfg.percentiles, cfg.capacities)
        for r0 in range(0, cfg.replications, chunk)
    ]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_work, jobs))
    else:
        parts = [_work(j) for j in jobs]
    mech = np.concatenate([a for a, _ in parts])
    opt = np.concatenate([b for _, b in parts])
    return mech, opt


def limit_sw_of(d: Distribution, p: Sequence[float], q: Sequence[float]) -> float:
    ys = d.quantile(np.asarray(p, dtype=float))
    if len(q) == 1:
        return float(q[0] - w_one_values(d, q[0], ys[0]))
    return float(sum(q) - w_es_values(d, q[0], q[1], ys[0], ys[1]))


def ratio_ci(mech: np.ndarray, opt: np.ndarray) -> tuple[float, float]:
    """Ratio of means and its 95% delta-method half-width."""
    r = len(mech)
    mm, mo = float(np.mean(mech)), float(np.mean(opt))
    if mm <= 0.0:
        raise ValueError("mechanism social welfare is zero; ratio undefined")
    ratio = mo / mm
    if r < 2:
        return ratio, float("nan")
    cov = np.cov(np.vstack([opt, mech]), ddof=1)
    var = (cov[0, 0] - 2.0 * ratio * cov[0, 1] + ratio**2 * cov[1, 1]) / (mm**2 * r)
    return ratio, Z95 * math.sqrt(max(var, 0.0))


def estimate_ratio(cfg: ExperimentConfig, workers: Optional[int] = None) -> list[RatioEstimate]:
    """Bayesian approximation ratio and limit error for every ``n`` in ``cfg``."""
    for n in cfg.n_values:
        if not es_condition_holds(cfg.percentiles, cfg.capacities, n):
            raise ESViolation(n, f"percentiles {cfg.percentiles} are not equilibrium stable at n={n}")
    d = build(cfg.dist_spec)
    limit = cfg.limit_sw if cfg.limit_sw is not None else limit_sw_of(d, cfg.percentiles, cfg.capacities)
    out = []
    for n in cfg.n_values:
        mech, opt = simulate_sw(cfg, n, workers)
        ratio, half = ratio_ci(mech, opt)
        mm, mo = float(np.mean(mech)), float(np.mean(opt))
        out.append(RatioEstimate(n, cfg.replications, cfg.seed, mm, mo, ratio, half, abs(mm - limit), mo - mm))
    return out


def fit_loglog_slope(ns: Sequence[float], errs: Sequence[float]) -> tuple[float, float]:
    """Least-squares ``(slope, intercept)`` of ``log(err)`` against ``log(n)``."""
    ns = np.asarray(ns, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if len(ns) < 2 or np.any(errs <= 0.0):
        raise ValueError("slope fit needs at least two positive errors")
    slope, intercept = np.polyfit(np.log(ns), np.log(errs), 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class ConvergenceCurve:
    points: list[tuple[int, float]]
    slope: float
    intercept: float
    estimates: list[RatioEstimate] = field(default_factory=list)


def convergence_curve(cfg: ExperimentConfig, workers: Optional[int] = None) -> ConvergenceCurve:
    est = estimate_ratio(cfg, workers)
    pts = [(e.n, e.abs_error) for e in est]
    slope, icpt = fit_loglog_slope([n for n, _ in pts], [e for _, e in pts])
    return ConvergenceCurve(pts, slope, icpt, est)


CSV_FIELDS = ("n", "mean_sw_mech", "mean_sw_opt", "ratio", "ci_halfwidth", "abs_error", "gap")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def estimates_csv(estimates: Sequence[RatioEstimate], slope: Optional[tuple[float, float]] = None) -> str:
    lines = [",".join(CSV_FIELDS)]
    for e in estimates:
        lines.append(",".join(_fmt(getattr(e, f)) for f in CSV_FIELDS))
    if slope is not None:
        lines.append(f"# loglog_slope={_fmt(slope[0])} intercept={_fmt(slope[1])}")
    return "\n".join(lines) + "\n"
