"""Two-link planar arm about its upright equilibrium under LQR feedback.

Point masses at the link tips, absolute link angles measured from the
upward vertical, viscous joint damping and a torque at each joint. The
closed loop ``xdot = F(x, -K x)`` is replaced by its Taylor polynomial about
the origin. The closed loop is odd in ``x``, so the quadratic terms vanish and
the cubic truncation is the first one that keeps any nonlinearity.

Requires ``sympy`` (the ``derive`` extra); the resulting problem file is
bundled as ``data/twolink_roa.json`` so the solver never needs it.
"""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict, dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
from scipy import linalg

NAMES = ["q1", "q2", "w1", "w2"]


@dataclass(frozen=True)
class ArmParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    g: float = 9.81
    damping: float = 0.1
    q_weight: float = 1.0
    r_weight: float = 1.0


def _equations(p: ArmParams):
    import sympy as sy

    q1, q2, w1, w2, u1, u2 = sy.symbols("q1 q2 w1 w2 u1 u2")
    # tip positions and velocities
    x1, y1 = p.l1 * sy.sin(q1), p.l1 * sy.cos(q1)
    x2, y2 = x1 + p.l2 * sy.sin(q2), y1 + p.l2 * sy.cos(q2)
    qs, ws = [q1, q2], [w1, w2]

    def vel(e):
        return sum(sy.diff(e, qi) * wi for qi, wi in zip(qs, ws))

    kin = sy.Rational(1, 2) * (p.m1 * (vel(x1) ** 2 + vel(y1) ** 2) + p.m2 * (vel(x2) ** 2 + vel(y2) ** 2))
    pot = p.g * (p.m1 * y1 + p.m2 * y2)
    lag = kin - pot
    M = sy.Matrix(2, 2, lambda i, j: sy.diff(lag, ws[i], ws[j]))
    rest = sy.Matrix([
        sy.diff(sy.diff(lag, ws[i]), qs[0]) * w1 + sy.diff(sy.diff(lag, ws[i]), qs[1]) * w2
        - sy.diff(lag, qs[i]) for i in range(2)])
    tau = sy.Matrix([u1 - p.damping * w1, u2 - p.damping * w2])
    acc = M.LUsolve(tau - rest)
    state = [q1, q2, w1, w2]
    return state, [u1, u2], [w1, w2, acc[0], acc[1]]


def _linearize(exprs, state, inputs):
    import sympy as sy

    zero = {s: 0 for s in state + inputs}
    A = np.array([[float(sy.diff(e, s).subs(zero)) for s in state] for e in exprs])
    B = np.array([[float(sy.diff(e, u).subs(zero)) for u in inputs] for e in exprs])
    return A, B


def derive(params: ArmParams = ArmParams(), digits: int = 6) -> dict:
    """Closed-loop cubic model and LQR data as a problem-file dict."""
    import sympy as sy

    state, inputs, rhs = _equations(params)
    A, B = _linearize(rhs, state, inputs)
    Q = params.q_weight * np.eye(4)
    R = params.r_weight * np.eye(2)
    P = linalg.solve_continuous_are(A, B, Q, R)
    K = np.linalg.solve(R, B.T @ P)
    u = [-sum(float(K[j, i]) * state[i] for i in range(4)) for j in range(2)]
    closed = [e.subs(dict(zip(inputs, u)), simultaneous=True) for e in rhs]
    zero = {s: 0 for s in state}
    fields = []
    for e in closed:
        terms = {}
        for i, s in enumerate(state):
            c = float(sy.diff(e, s).subs(zero))
            terms[(i,)] = c
        for order in (2, 3):
            for idx in combinations_with_replacement(range(4), order):
                d = sy.diff(e, *[state[i] for i in idx])
                c = float(d.subs(zero))
                # Taylor coefficient: derivative over the product of factorials
                terms[idx] = c / float(np.prod([math.factorial(idx.count(i)) for i in set(idx)]))
        fields.append(_text(terms, digits))
    return {
        "schema": "sqsos-problem/1",
        "name": "twolink_roa",
        "kind": "roa",
        "description": "two-link arm, upright, LQR closed loop, third-order Taylor model",
        "indeterminates": NAMES,
        "dynamics": fields,
        "target": "q1^2 + q2^2 + w1^2 + w2^2",
        "degrees": {"V": [2, 2], "s": [2, 2]},
        "gamma": 1.0,
        "epsilon": 1e-6,
        # V = 10 x'Px keeps the initial sublevel set inside the model's basin
        "init": {"method": "lqr-lyapunov", "scale": 10.0},
        "solver": {"hessian": "exact-min-frobenius"},
        "params": asdict(params),
        "lqr_gain": np.round(K, digits).tolist(),
    }


def _text(terms: dict, digits: int) -> str:
    parts = []
    for idx, c in terms.items():
        c = float(f"{c:.{digits}g}")
        if abs(c) < 10 ** -digits:
            continue
        mono = "*".join(NAMES[i] for i in idx)
        parts.append(f"{c!r}*{mono}")
    return " + ".join(parts).replace("+ -", "- ") or "0"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="derive the two-link arm ROA problem file")
    ap.add_argument("--out", type=Path, help="write JSON here instead of stdout")
    ap.add_argument("--damping", type=float, default=ArmParams.damping)
    args = ap.parse_args(argv)
    data = derive(ArmParams(damping=args.damping))
    text = json.dumps(data, indent=2) + "\n"
    if args.out:
        args.out.write_text(text)
    else:
        print(text, end="")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
