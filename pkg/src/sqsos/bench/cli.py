"""Command line: ``sqsos solve | violation | suite``.

Exit codes: 0 success, 1 malformed input, 2 solver failure, 3 local
infeasibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..engine import LOCALLY_INFEASIBLE, OPTIMAL, SqpConfig, solve
from ..poly import Polynomial, monomials_up_to
from ..polyparse import ParseError, parse_polynomial
from ..violation import METHODS, SAMPLING, SIGNED_DISTANCE, ViolationConfig, compute_violation
from .cd import solve_coordinate_descent
from .certify import certify_outcome
from .problems import ProblemError, bundled, build, load_problem
from .report import SUITE_SCHEMA, build_report, dumps, suite_table, write_report, write_trace

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_INFEASIBLE = 3

VIOLATION_FIELDS = ("source", "nvars", "degree", "method", "theta", "time_s", "sampling_false_negative")


class InputError(Exception):
    pass


def _config(pf, args) -> SqpConfig:
    """Defaults, then the problem's ``solver`` section, ``--config``, then flags."""
    data = dict(pf.solver)
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"--config: {exc}") from None
    if getattr(args, "hessian", None):
        data["hessian"] = args.hessian
    if getattr(args, "max_iter", None) is not None:
        data["max_iter"] = args.max_iter
    viol = dict(data.get("violation", {}))
    if getattr(args, "violation", None):
        viol["method"] = args.violation
    if getattr(args, "seed", None) is not None:
        viol["rng_seed"] = args.seed
    if viol:
        data["violation"] = viol
    try:
        return SqpConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"configuration: {exc}") from None


def run_problem(path, method: str, args) -> tuple[dict, object]:
    """Solve one problem file; returns the report and the raw outcome."""
    pf = load_problem(path)
    cfg = _config(pf, args)
    built = build(pf)
    if method == "cd":
        out = solve_coordinate_descent(built.program, built.init, built.blocks, cfg)
    else:
        out = solve(built.program, built.init, cfg)
    cert = None
    if out.status == OPTIMAL and not getattr(args, "no_certify", False):
        seed = args.seed if getattr(args, "seed", None) is not None else 0
        cert = certify_outcome(built, out.z, args.samples, seed)
    return build_report(built, out, cfg, cert), out


def exit_code(status: str) -> int:
    if status == OPTIMAL:
        return EXIT_OK
    if status == LOCALLY_INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def cmd_solve(args) -> int:
    report, out = run_problem(args.problem, args.method, args)
    if args.out:
        write_report(report, args.out)
    if args.trace:
        write_trace(out.trace, args.trace)
    print(suite_table([report]))
    if report["message"]:
        print(report["message"])
    return exit_code(report["status"])


def read_poly_file(path) -> list[tuple[int, str]]:
    """Non-blank, non-comment lines with their line numbers."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    return [(k + 1, ln) for k, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]


def random_sos_poly(rng, n: int, degree: int) -> Polynomial:
    """Three random squares of half-degree polynomials plus ``0.1 z'z``, so strictly SOS."""
    zeta = monomials_up_to(n, degree // 2)
    zz = Polynomial.zero(n)
    for a in zeta:
        zz = zz + Polynomial.monomial(a) ** 2
    p = zz * 0.1
    for _ in range(3):
        q = Polynomial(n, {a: float(rng.normal()) for a in zeta})
        p = p + q * q
    return p


def _file_inputs(args) -> list[tuple[str, Polynomial]]:
    entries = read_poly_file(args.polys)
    names = args.names.split(",") if args.names else None
    polys = []
    for lineno, text in entries:
        try:
            polys.append(parse_polynomial(text, names=names))
        except ParseError as exc:
            raise InputError(f"{args.polys}: line {lineno}, column {exc.column}: {exc.message}") from None
    if not polys:
        raise InputError(f"{args.polys}: no polynomials")
    if names is None:
        nv = max(p.nvars for p in polys)
        polys = [parse_polynomial(t, nvars=nv) for _, t in entries]
    return [(f"line {lineno}", p) for (lineno, _), p in zip(entries, polys)]


def _random_inputs(args) -> list[tuple[str, Polynomial]]:
    try:
        ns = [int(v) for v in args.nvars.split(",")]
    except ValueError:
        raise InputError(f"--nvars: expected comma-separated integers, got {args.nvars!r}") from None
    if args.random < 1 or args.degree < 2 or args.degree % 2 or min(ns) < 1:
        raise InputError("--random needs a positive count, positive --nvars and an even --degree")
    rng = np.random.default_rng(args.seed)
    return [(f"random n={n} #{k}", random_sos_poly(rng, n, args.degree))
            for n in ns for k in range(args.random)]


def cmd_violation(args) -> int:
    if (args.polys is None) == (args.random is None):
        raise InputError("violation: give either a polynomial file or --random COUNT")
    inputs = _file_inputs(args) if args.polys is not None else _random_inputs(args)
    methods = METHODS if args.method == "all" else (args.method,)
    rows = []
    for source, p in inputs:
        by_method = {}
        for m in methods:
            cfg = ViolationConfig(method=m, eps=args.eps, sample_count=args.samples,
                                  hypercube_radius=args.radius, rng_seed=args.seed)
            t0 = time.perf_counter()
            try:
                rep = compute_violation(p, cfg)
            except ValueError as exc:
                raise InputError(f"{source}: {exc}") from None
            by_method[m] = rep.theta
            rows.append({"source": source, "nvars": p.nvars, "degree": p.degree, "method": m,
                         "theta": rep.theta, "time_s": time.perf_counter() - t0,
                         "sampling_false_negative": ""})
        # sampling misses a violation the signed distance certifies
        if SAMPLING in by_method and SIGNED_DISTANCE in by_method:
            miss = by_method[SAMPLING] == 0.0 and by_method[SIGNED_DISTANCE] > 0.0
            for r in rows[-len(methods):]:
                if r["method"] == SAMPLING:
                    r["sampling_false_negative"] = int(miss)
    print(f"{'source':<18}{'n':>3}  {'method':<16}{'theta':>14}{'time[ms]':>11}")
    for r in rows:
        print(f"{r['source']:<18}{r['nvars']:>3}  {r['method']:<16}{r['theta']:>14.6g}"
              f"{1e3 * r['time_s']:>11.2f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=VIOLATION_FIELDS)
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def _suite_job(job):
    path, method, ns = job
    report, _ = run_problem(path, method, argparse.Namespace(**ns))
    return report


def cmd_suite(args) -> int:
    paths = [Path(p) for p in args.problems] if args.problems else bundled()
    methods = args.methods.split(",")
    for m in methods:
        if m not in ("sqsos", "cd"):
            raise InputError(f"--methods: unknown method {m!r}")
    for p in paths:
        load_problem(p)  # fail early on malformed input
    ns = {"seed": args.seed, "samples": args.samples, "no_certify": args.no_certify,
          "config": None, "hessian": None, "max_iter": None, "violation": None}
    jobs = [(str(p), m, ns) for p in paths for m in methods]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_suite_job, jobs))
    else:
        reports = [_suite_job(j) for j in jobs]
    reports.sort(key=lambda r: (r["problem"], r["method"]))
    print(suite_table(reports))
    if args.out:
        Path(args.out).write_text(dumps({"schema": SUITE_SCHEMA, "seed": args.seed, "reports": reports}))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sqsos", description="sequential quadratic SOS programming")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="solve one problem file")
    s.add_argument("problem", type=Path)
    s.add_argument("--method", choices=("sqsos", "cd"), default="sqsos")
    s.add_argument("--config", type=Path, help="JSON file of SqpConfig fields")
    s.add_argument("--out", type=Path, help="write the JSON report here")
    s.add_argument("--trace", type=Path, help="write the iteration trace CSV here")
    s.add_argument("--hessian", choices=("damped-bfgs", "exact-gershgorin", "exact-mirrored",
                                         "exact-min-frobenius"))
    s.add_argument("--violation", choices=METHODS)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--seed", type=int, help="seed for sampling-based violation and certification")
    s.add_argument("--samples", type=int, default=10_000, help="certificate sample count")
    s.add_argument("--no-certify", action="store_true")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("violation", help="compare violation metrics on a polynomial file or random SOS inputs")
    v.add_argument("polys", type=Path, nargs="?", help="polynomials, one per line ('#' comments)")
    v.add_argument("--random", type=int, metavar="COUNT", help="COUNT random SOS polynomials per --nvars")
    v.add_argument("--nvars", default="2,3,4")
    v.add_argument("--degree", type=int, default=6)
    v.add_argument("--method", choices=("all",) + METHODS, default="all")
    v.add_argument("--names", help="comma-separated indeterminate names (default x1, x2, ...)")
    v.add_argument("--eps", type=float, default=1e-6)
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--radius", type=float, default=1.0)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", type=Path, help="write the rows as CSV here")
    v.set_defaults(func=cmd_violation)

    u = sub.add_parser("suite", help="run the bundled benchmarks with both methods")
    u.add_argument("--problems", nargs="*", help="problem files (default: bundled set)")
    u.add_argument("--methods", default="sqsos,cd")
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--samples", type=int, default=10_000)
    u.add_argument("--no-certify", action="store_true")
    u.add_argument("--jobs", type=int, default=1)
    u.add_argument("--out", type=Path, help="write the aggregate JSON report here")
    u.set_defaults(func=cmd_suite)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ProblemError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
