"""``flpsr`` command-line interface.

Exit codes: 0 on success, 2 for invalid input, 3 when a numeric routine fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import optimizer, simulator
from .distributions import DistributionSpec, build
from .radius import NumericalError, radius, radius_derivative
from .welfare import w_one, w_one_derivative, w_two

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
PAPER_REPLICATIONS = 10_000


class InputError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse's own exit code is already 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# argument helpers


def _spec(tokens: Sequence[str]) -> DistributionSpec:
    text = ":".join(tokens) if len(tokens) > 1 else tokens[0]
    return DistributionSpec.parse(text)


def _int_list(text: str) -> list[int]:
    """``20..100`` (step 1), ``20..100:10`` or ``20,40,80``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            rng, _, step = part.partition(":")
            lo, hi = (int(v) for v in rng.split(".."))
            out.extend(range(lo, hi + 1, int(step) if step else 1))
        elif part:
            out.append(int(part))
    if not out:
        raise InputError(f"empty list {text!r}")
    return out


def _float_list(text: str) -> list[float]:
    if ".." in text:
        return [float(v) for v in _int_list(text)]
    return [float(v) for v in text.split(",") if v.strip()]


def _in_unit(name: str, v: float, open_left: bool = True) -> float:
    ok = (0.0 < v <= 1.0) if open_left else (0.0 <= v <= 1.0)
    if not ok:
        raise InputError(f"{name} out of range: {v}")
    return v


def _caps(args) -> tuple[float, ...]:
    qs = tuple(_in_unit("capacity", q) for q in args.q)
    if len(qs) not in (1, 2):
        raise InputError("give one or two capacities")
    if len(qs) == 2 and sum(qs) >= 1.0:
        raise InputError("two facilities need q1 + q2 < 1")
    return qs


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{float(v):.6g}"


def _emit(args, payload, csv_rows: Optional[tuple[list[str], list[list]]] = None) -> None:
    fmt = getattr(args, "format", "json")
    if fmt == "csv" and csv_rows is not None:
        header, rows = csv_rows
        text = ",".join(header) + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)
    elif isinstance(payload, str):
        text = payload
    else:
        text = json.dumps(payload, indent=2, sort_keys=False) + "\n"
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# subcommands


def cmd_optimize_one(args) -> None:
    q = _in_unit("capacity", args.capacity)
    if args.tol <= 0:
        raise InputError("tol must be positive")
    d = build(_spec(args.dist))
    sol = optimizer.optimize_one(d, q, tol=args.tol, method=args.method)
    out = sol.to_dict()
    if sol.flat_interval is not None:
        out["note"] = "welfare is flat on flat_interval; every percentile there is optimal, the leftmost is reported"
    _emit(args, out, (list(out.keys()), [list(out.values())]) if sol.flat_interval is None else None)


def _check_pair(args) -> tuple[float, float]:
    q1, q2 = _in_unit("q1", args.q1), _in_unit("q2", args.q2)
    if q1 + q2 >= 1.0:
        raise InputError("two facilities need q1 + q2 < 1")
    return q1, q2


def cmd_optimize_two(args) -> None:
    q = _check_pair(args)
    if not (0.0 < args.delta <= 0.1):
        raise InputError("delta must lie in (0, 0.1]")
    d = build(_spec(args.dist))
    sol = optimizer.best_es_two(d, q, delta=args.delta, orientation=args.orientation, check_feasibility=not args.skip_feasibility)
    out = sol.to_dict()
    _emit(args, out, (list(out.keys()), [list(out.values())]))


def cmd_feasible(args) -> None:
    q = _check_pair(args)
    if args.grid < 10:
        raise InputError("grid must be at least 10")
    d = build(_spec(args.dist))
    v = optimizer.es_optimal_feasible(d, q, grid=args.grid)
    _emit(args, {"es_optimal_feasible": v.feasible, "reason": v.reason, "witness": v.witness})


def cmd_eval(args) -> None:
    qs = _caps(args)
    ys = [_in_unit("y", y, open_left=False) for y in args.y]
    if len(ys) != len(qs):
        raise InputError("give one position per capacity")
    d = build(_spec(args.dist))
    if len(qs) == 1:
        q, y = qs[0], ys[0]
        ev = w_one(d, q, y)
        r = radius(d, q, y)
        out = {
            "w_value": ev.w_value,
            "limit_sw": ev.limit_sw,
            "percentile": float(d.cdf(y)),
            "radius": r.radius,
            "left": r.left,
            "right": r.right,
            "regime": r.regime.value,
        }
        if 0.0 < y < 1.0:
            out["radius_derivative"] = radius_derivative(d, q, y)
            out["w_derivative"] = w_one_derivative(d, q, y)
    else:
        (y1, q1), (y2, q2) = sorted(zip(ys, qs))
        ev = w_two(d, (q1, q2), y1, y2)
        s = ev.ball
        gap = float(d.cdf(y2) - d.cdf(y1))
        out = {
            "w_value": ev.w_value,
            "limit_sw": ev.limit_sw,
            "percentiles": [float(d.cdf(y1)), float(d.cdf(y2))],
            "r1": s.r1,
            "r2": s.r2,
            "s1": list(s.s1),
            "s2": list(s.s2),
            "touching": s.touching,
            "es": gap >= q1 + q2 - 1e-9,
        }
    _emit(args, out)


def _experiment(args) -> simulator.ExperimentConfig:
    qs = _caps(args)
    reps = PAPER_REPLICATIONS if args.paper_scale else args.reps
    if reps < 1:
        raise InputError("reps must be at least 1")
    ns = _int_list(args.n_values)
    if any(n < 2 for n in ns):
        raise InputError("agent counts must be at least 2")
    spec = _spec(args.dist)
    if args.p is None:
        d = build(spec)
        if len(qs) == 1:
            ps = (optimizer.optimize_one(d, qs[0]).percentile,)
        else:
            sol = optimizer.best_es_two(d, qs, orientation="as_given", check_feasibility=False)
            ps = sol.percentiles
    else:
        ps = tuple(_in_unit("percentile", p, open_left=False) for p in args.p)
    return simulator.ExperimentConfig(spec, qs, ps, tuple(ns), reps, args.seed)


def cmd_simulate(args) -> None:
    cfg = _experiment(args)
    est = simulator.estimate_ratio(cfg, workers=args.workers)
    _emit(args, simulator.estimates_csv(est))


def cmd_convergence(args) -> None:
    cfg = _experiment(args)
    curve = simulator.convergence_curve(cfg, workers=args.workers)
    _emit(args, simulator.estimates_csv(curve.estimates, (curve.slope, curve.intercept)))


def canonical_pair(p1: float, p2: float) -> tuple[float, float]:
    return (p1, p2) if p1 <= p2 else (p2, p1)


def cmd_table(args) -> None:
    if args.family != "beta":
        raise InputError("only the beta family is supported")
    alphas, betas = _float_list(args.alphas), _float_list(args.betas)
    if any(v <= 0 for v in alphas + betas):
        raise InputError("beta parameters must be positive")
    qs = _caps(args)
    if len(qs) == 2 and not (0.0 < args.delta <= 0.1):
        raise InputError("delta must lie in (0, 0.1]")
    rows = []
    for a in alphas:
        for b in betas:
            d = build(DistributionSpec("beta", {"alpha": a, "beta": b}))
            if len(qs) == 1:
                rows.append([a, b, optimizer.optimize_one(d, qs[0]).percentile])
            else:
                sol = optimizer.best_es_two(d, qs, delta=args.delta, orientation=args.orientation, check_feasibility=False)
                p1, p2 = canonical_pair(*sol.percentiles)
                rows.append([a, b, p1, p2, sol.swapped])
    if len(qs) == 1:
        header = ["alpha", "beta", "percentile"]
    else:
        header = ["alpha", "beta", "p1", "p2", "swapped"]
    if args.layout == "matrix":
        cells = {}
        for r in rows:
            cells[(r[0], r[1])] = _fmt(r[2]) if len(qs) == 1 else f"({_fmt(r[2])};{_fmt(r[3])})"
        lines = ["alpha\\beta," + ",".join(_fmt(b) for b in betas)]
        for a in alphas:
            lines.append(_fmt(a) + "," + ",".join(cells[(a, b)] for b in betas))
        _emit(args, "\n".join(lines) + "\n")
    else:
        args.format = "csv"
        _emit(args, None, (header, rows))


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flpsr", description="Optimal percentile mechanisms for scarce capacitated facilities.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, fmt=True):
        sp.add_argument("--dist", nargs="+", required=True, help="beta 6 2 | beta:6:2 | uniform | JSON | path.json")
        sp.add_argument("--out", default=None, help="output file (default stdout)")
        if fmt:
            sp.add_argument("--format", choices=("json", "csv"), default="json")

    s = sub.add_parser("optimize-one", help="optimal percentile for one facility")
    common(s)
    s.add_argument("--capacity", "-q", type=float, required=True)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--method", choices=("auto", "bisection", "grid"), default="auto")
    s.set_defaults(func=cmd_optimize_one)

    s = sub.add_parser("optimize-two", help="best equilibrium-stable percentile pair")
    common(s)
    s.add_argument("--q1", type=float, required=True)
    s.add_argument("--q2", type=float, required=True)
    s.add_argument("--delta", type=float, default=0.001)
    s.add_argument("--orientation", choices=("both", "as_given", "swapped"), default="both")
    s.add_argument("--skip-feasibility", action="store_true")
    s.set_defaults(func=cmd_optimize_two)

    s = sub.add_parser("feasible", help="whether an ES mechanism can be optimal")
    common(s, fmt=False)
    s.add_argument("--q1", type=float, required=True)
    s.add_argument("--q2", type=float, required=True)
    s.add_argument("--grid", type=int, default=400)
    s.set_defaults(func=cmd_feasible)

    s = sub.add_parser("eval", help="radius and welfare at given positions")
    common(s, fmt=False)
    s.add_argument("-q", type=float, nargs="+", required=True, help="capacities")
    s.add_argument("-y", type=float, nargs="+", required=True, help="positions")
    s.set_defaults(func=cmd_eval)

    for name, func, text in (
        ("simulate", cmd_simulate, "Bayesian approximation ratio by Monte Carlo"),
        ("convergence", cmd_convergence, "limit error against n with a log-log slope"),
    ):
        s = sub.add_parser(name, help=text)
        common(s, fmt=False)
        s.add_argument("-q", type=float, nargs="+", required=True, help="capacities")
        s.add_argument("-p", type=float, nargs="+", default=None, help="percentiles (default: optimal)")
        s.add_argument("--n-values", default="20..100:10")
        s.add_argument("--reps", type=int, default=1000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--workers", type=int, default=None, help="process count (default FLPSR_THREADS or all cores)")
        s.add_argument("--paper-scale", action="store_true", help=f"use {PAPER_REPLICATIONS} replications")
        s.set_defaults(func=func)

    s = sub.add_parser("table", help="optimal percentiles over a Beta parameter grid (CSV)")
    s.add_argument("--family", default="beta")
    s.add_argument("--alphas", default="2..6")
    s.add_argument("--betas", default="2..6")
    s.add_argument("-q", "--capacity-spec", dest="q", type=float, nargs="+", required=True)
    s.add_argument("--delta", type=float, default=0.001)
    s.add_argument("--orientation", choices=("both", "as_given", "swapped"), default="as_given")
    s.add_argument("--layout", choices=("long", "matrix"), default="long")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_table)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"flpsr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"flpsr: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
