"""Bench reports (JSON) and iteration traces (CSV)."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

from ..engine import SolveOutcome, SqpConfig, TraceRow
from .cd import CDOutcome
from .certify import CertificateRecord
from .problems import BuiltProblem

REPORT_SCHEMA = "sqsos-report/1"
SUITE_SCHEMA = "sqsos-suite/1"
TIMING_KEYS = ("timings", "wall_time")
PHASES = ("subproblem", "line-search", "violation", "hessian")


def _num(x):
    """JSON-safe float: NaN and infinities become ``null``."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def solution_text(built: BuiltProblem, z) -> dict[str, str]:
    a = built.program.assignment(z)
    names = built.pf.indeterminates
    return {v.name: a.polynomial(v).to_text(names) for v in built.program.variables}


def build_report(built: BuiltProblem, outcome: SolveOutcome | CDOutcome, cfg: SqpConfig,
                 certificate: CertificateRecord | None) -> dict:
    if isinstance(outcome, CDOutcome):
        method = "cd"
        f, theta, restorations = outcome.f, outcome.theta, 0
        final_change = (outcome.history[-1] - outcome.history[-2]
                        if len(outcome.history) > 1 else math.nan)
        extra = {"failed_block": outcome.failed_block}
    else:
        method = "sqsos"
        f, theta, restorations = outcome.state.f, outcome.state.theta, outcome.restorations
        main = outcome.main_trace()
        final_change = main[-1].f - main[-2].f if len(main) > 1 else math.nan
        extra = {"kkt_scaled": _num(outcome.state.kkt)}
    timings = {k: outcome.timings.get(k, 0.0) for k in PHASES}
    return {
        "schema": REPORT_SCHEMA,
        "problem": built.name,
        "kind": built.pf.kind,
        "method": method,
        "status": outcome.status,
        "message": outcome.message,
        "iterations": outcome.iterations,
        "restorations": restorations,
        "f": _num(f),
        "theta": _num(theta),
        "final_f_change": _num(final_change),
        **extra,
        "sizes": built.program.sizes(),
        "config": cfg.to_dict(),
        "certificate": certificate.to_dict() if certificate is not None else None,
        "solution": solution_text(built, outcome.z) if outcome.status != "infeasible-start" else None,
        "timings": timings,
        "wall_time": outcome.wall_time,
    }


def mask_timing(report: dict) -> dict:
    """Copy of ``report`` with wall-clock fields removed (for comparisons)."""
    out = {}
    for k, v in report.items():
        if k in TIMING_KEYS:
            continue
        if isinstance(v, dict):
            v = mask_timing(v)
        elif isinstance(v, list):
            v = [mask_timing(x) if isinstance(x, dict) else x for x in v]
        out[k] = v
    return out


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    Path(path).write_text(dumps(report))


def write_trace(rows: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TraceRow.CSV_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r.csv_row())


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def suite_table(reports: Sequence[dict]) -> str:
    """Plain-text table of iterations, time and cost per problem and method."""
    head = f"{'problem':<22}{'method':<8}{'status':<20}{'iter':>6}{'time[s]':>10}{'cost':>14}{'theta':>11}{'cert':>6}"
    lines = [head, "-" * len(head)]
    for r in reports:
        cert = r.get("certificate")
        c = "-" if cert is None else str(cert["violations"])
        f = "NaN" if r["f"] is None else f"{r['f']:.6g}"
        th = "NaN" if r["theta"] is None else f"{r['theta']:.2g}"
        lines.append(f"{r['problem']:<22}{r['method']:<8}{r['status']:<20}{r['iterations']:>6}"
                     f"{r['wall_time']:>10.2f}{f:>14}{th:>11}{c:>6}")
    return "\n".join(lines)
