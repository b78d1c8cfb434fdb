"""Problem files and the ROA / synthesis / custom problem builders.

Problem files are JSON documents with ``"schema": "sqsos-problem/1"``.
Polynomials are written in the text format of :mod:`sqsos.polyparse` using
the names listed under ``indeterminates``. See ``README.md`` for the fields
of each ``kind``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import linalg

from ..engine import Constraint, SOSProgram, SqpConfig
from ..expr import (CoeffAssignment, DecisionVar, ExprNode, const, grad_dot, sqnorm_diff,
                    substitute_dynamics)
from ..poly import Polynomial, monomials_between
from ..polyparse import ParseError, parse_polynomial
from .exprparse import parse_expression

SCHEMA = "sqsos-problem/1"
KINDS = ("roa", "synthesis", "custom")


class ProblemError(ValueError):
    """Malformed problem file."""


@dataclass
class ProblemFile:
    name: str
    kind: str
    indeterminates: list[str]
    raw: dict
    dynamics: list[Polynomial] = field(default_factory=list)
    inputs: list[list[Polynomial]] = field(default_factory=list)
    target: Polynomial | None = None
    safe_set: Polynomial | None = None
    control_constraints: np.ndarray | None = None
    degrees: dict[str, tuple[int, int]] = field(default_factory=dict)
    gamma: float = 1.0
    beta: float = 1.0
    beta_decision: bool = False
    epsilon: Polynomial | None = None
    init: dict = field(default_factory=dict)
    # SqpConfig overrides recommended for this instance
    solver: dict = field(default_factory=dict)

    @property
    def nvars(self) -> int:
        return len(self.indeterminates)

    def poly(self, text: str, where: str) -> Polynomial:
        return _poly(text, self.indeterminates, where)


def _poly(text, names, where: str) -> Polynomial:
    if isinstance(text, (int, float)):
        return Polynomial.constant(len(names), float(text))
    if not isinstance(text, str):
        raise ProblemError(f"{where}: expected polynomial text, got {type(text).__name__}")
    try:
        return parse_polynomial(text, names=names)
    except ParseError as exc:
        raise ProblemError(f"{where}: {exc}") from None


def _degrees(value, where: str) -> tuple[int, int]:
    if isinstance(value, int):
        value = [0, value]
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, int) and v >= 0 for v in value) or value[0] > value[1]):
        raise ProblemError(f"{where}: degrees must be [low, high] with 0 <= low <= high")
    return int(value[0]), int(value[1])


def parse_problem(data: Mapping[str, Any], name: str = "problem") -> ProblemFile:
    if not isinstance(data, Mapping):
        raise ProblemError("problem file must be a JSON object")
    schema = data.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ProblemError(f"unsupported schema {schema!r} (expected {SCHEMA!r})")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ProblemError(f"kind must be one of {KINDS}, got {kind!r}")
    names = data.get("indeterminates")
    if (not isinstance(names, list) or not names or not all(isinstance(s, str) for s in names)
            or len(set(names)) != len(names)):
        raise ProblemError("indeterminates must be a nonempty list of distinct names")
    pf = ProblemFile(str(data.get("name", name)), kind, list(names), dict(data))
    n = len(names)
    if "dynamics" in data:
        dyn = data["dynamics"]
        if not isinstance(dyn, list) or len(dyn) != n:
            raise ProblemError(f"dynamics must list {n} polynomials")
        pf.dynamics = [pf.poly(t, f"dynamics[{i}]") for i, t in enumerate(dyn)]
    for j, col in enumerate(data.get("inputs", [])):
        if not isinstance(col, list) or len(col) != n:
            raise ProblemError(f"inputs[{j}] must list {n} polynomials")
        pf.inputs.append([pf.poly(t, f"inputs[{j}][{i}]") for i, t in enumerate(col)])
    if "target" in data:
        pf.target = pf.poly(data["target"], "target")
    if "safe_set" in data:
        pf.safe_set = pf.poly(data["safe_set"], "safe_set")
    if "control_constraints" in data:
        H = np.asarray(data["control_constraints"], dtype=float)
        if H.ndim != 2 or H.shape[0] == 0 or H.shape[1] != len(pf.inputs):
            raise ProblemError("control_constraints must be a p x m matrix, m = number of inputs")
        pf.control_constraints = H
    for key, val in data.get("degrees", {}).items():
        pf.degrees[key] = _degrees(val, f"degrees.{key}")
    pf.gamma = float(data.get("gamma", 1.0))
    beta = data.get("beta", 1.0)
    if isinstance(beta, Mapping):
        pf.beta_decision = bool(beta.get("decision", False))
        pf.beta = float(beta.get("init", 1.0))
    else:
        pf.beta = float(beta)
    eps = data.get("epsilon", 1e-6)
    if isinstance(eps, (int, float)):
        xs = [Polynomial.variable(n, i) for i in range(n)]
        pf.epsilon = sum((x * x for x in xs), Polynomial.zero(n)) * float(eps)
    else:
        pf.epsilon = pf.poly(eps, "epsilon")
    init = data.get("init", {"method": "lqr-lyapunov"})
    if not isinstance(init, Mapping) or init.get("method") not in (
            "lqr-lyapunov", "explicit", "negative-definite"):
        raise ProblemError("init.method must be lqr-lyapunov, explicit or negative-definite")
    pf.init = dict(init)
    solver = data.get("solver", {})
    try:
        SqpConfig.from_dict(solver)
    except (TypeError, ValueError) as exc:
        raise ProblemError(f"solver: {exc}") from None
    pf.solver = dict(solver)
    _check_kind(pf)
    return pf


def _check_kind(pf: ProblemFile) -> None:
    if pf.kind in ("roa", "synthesis"):
        if not pf.dynamics:
            raise ProblemError(f"{pf.kind} problems need dynamics")
        if "V" not in pf.degrees:
            raise ProblemError("degrees.V is required")
    if pf.kind == "roa" and pf.target is None:
        raise ProblemError("roa problems need a target (safe-set shape g0)")
    if pf.kind == "synthesis":
        if not pf.inputs or pf.control_constraints is None:
            raise ProblemError("synthesis problems need inputs and control_constraints")
        if pf.safe_set is None:
            raise ProblemError("synthesis problems need a safe_set polynomial h (safe where h <= 0)")
        if "kappa" not in pf.degrees:
            raise ProblemError("degrees.kappa is required")
    if pf.kind == "custom":
        if not isinstance(pf.raw.get("decisions"), Mapping) or not pf.raw["decisions"]:
            raise ProblemError("custom problems need a decisions object")
        if not isinstance(pf.raw.get("objective"), str):
            raise ProblemError("custom problems need an objective expression")
        if not isinstance(pf.raw.get("constraints"), list):
            raise ProblemError("custom problems need a constraints list")


def load_problem(path) -> ProblemFile:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ProblemError(f"{path}: {exc.strerror}") from None
    return parse_problem(data, path.stem)


# -- built problems ----------------------------------------------------------------

@dataclass
class BuiltProblem:
    pf: ProblemFile
    program: SOSProgram
    variables: dict[str, DecisionVar]
    init: CoeffAssignment
    # coordinate-descent blocks (names), each affine-constrained given the others
    blocks: list[list[str]]

    @property
    def name(self) -> str:
        return self.pf.name


def _multiplier(name: str, n: int, degs: tuple[int, int]) -> tuple[DecisionVar, list[Constraint]]:
    lo, hi = degs
    if lo % 2 or hi % 2:
        raise ProblemError(f"degrees.{name}: SOS multiplier degrees must be even")
    if hi == 0:
        v = DecisionVar.scalar(name, n)
        return v, [Constraint(v.ref(), f"{name} >= 0", True, (0, 0))]
    return DecisionVar.sos(name, n, lo, hi), []


def _sum_squares(n: int) -> Polynomial:
    return sum((Polynomial.variable(n, i) ** 2 for i in range(n)), Polynomial.zero(n))


def linearization(fields: list[Polynomial]) -> np.ndarray:
    n = len(fields)
    A = np.zeros((n, n))
    for i, fi in enumerate(fields):
        for j in range(n):
            e = [0] * n
            e[j] = 1
            A[i, j] = fi.coefficient(tuple(e))
    return A


def quadratic_form(P: np.ndarray) -> Polynomial:
    n = P.shape[0]
    xs = [Polynomial.variable(n, i) for i in range(n)]
    out = Polynomial.zero(n)
    for i in range(n):
        for j in range(n):
            out = out + xs[i] * xs[j] * float(P[i, j])
    return out


def _fit(v: DecisionVar, p: Polynomial) -> np.ndarray:
    """Coefficients of ``p`` on ``v``'s basis (terms outside are dropped)."""
    return p.coefficients(v.basis, strict=False)


def _negative_guess(v: DecisionVar) -> np.ndarray:
    n = v.nvars
    squares = [i for i, a in enumerate(v.basis) if sum(a) == 2 and max(a) == 2]
    c = np.zeros(len(v.basis))
    if squares:
        c[squares] = -1.0
    else:
        low = min(sum(a) for a in v.basis)
        c[[i for i, a in enumerate(v.basis) if sum(a) == low]] = -1.0
    return c


def _default_multiplier_guess(v: DecisionVar) -> np.ndarray:
    n = v.nvars
    if v.basis == ((0,) * n,):
        return np.ones(1)
    c = _fit(v, _sum_squares(n))
    if not c.any():
        c = _fit(v, Polynomial.constant(n, 1.0))
    return c


def _explicit(pf: ProblemFile, variables: dict[str, DecisionVar], init: CoeffAssignment) -> None:
    values = pf.init.get("values", {})
    if not isinstance(values, Mapping):
        raise ProblemError("init.values must map decision names to polynomials")
    for name, text in values.items():
        if name not in variables:
            raise ProblemError(f"init.values.{name}: no such decision variable")
        v = variables[name]
        p = pf.poly(text, f"init.values.{name}")
        extra = [a for a in p.support() if a not in set(v.basis)]
        if extra:
            raise ProblemError(f"init.values.{name}: terms outside the basis of {name}")
        init[v] = _fit(v, p)


def _finish_init(pf: ProblemFile, variables: dict[str, DecisionVar], init: CoeffAssignment,
                 lqr: Mapping[str, Polynomial]) -> CoeffAssignment:
    method = pf.init.get("method")
    if method == "negative-definite":
        for v in variables.values():
            init[v] = _negative_guess(v)
        return init
    if method == "explicit":
        _explicit(pf, variables, init)
    for name, p in lqr.items():
        v = variables[name]
        if v not in init:
            init[v] = _fit(v, p)
    for v in variables.values():
        if v not in init:
            init[v] = _default_multiplier_guess(v) if v.role != "free" else np.zeros(len(v.basis))
    return init


def _feasible_multipliers(built: BuiltProblem) -> BuiltProblem:
    """Replace the multiplier guesses by a feasible choice for the given ``V``.

    Only for the LQR start and only if the convex multiplier problem is
    solvable; otherwise the default guesses stay.
    """
    pf = built.pf
    if pf.init.get("method") != "lqr-lyapunov" or pf.init.get("multipliers", "solve") != "solve":
        return built
    from .cd import solve_block

    prog = built.program
    z = solve_block(prog, prog.stack(built.init), built.blocks[0])
    if z is not None:
        built.init = prog.assignment(z)
    return built


def build_roa(pf: ProblemFile) -> BuiltProblem:
    """``min ||g0 - V||^2`` s.t. ``V - eps`` and ``s (V - gamma) - <grad V, f> - eps`` SOS."""
    n = pf.nvars
    V = DecisionVar.polynomial("V", n, *pf.degrees["V"])
    s, extra = _multiplier("s", n, pf.degrees.get("s", (2, 2)))
    Vr = V.ref()
    eps = const(pf.epsilon)
    cons = [
        Constraint(Vr - eps, "V positive"),
        Constraint(s.ref() * (Vr - pf.gamma) - grad_dot(Vr, pf.dynamics) - eps, "V decrease"),
        *extra,
    ]
    prog = SOSProgram(sqnorm_diff(Vr, const(pf.target)), cons, variables=[V, s])
    variables = {"V": V, "s": s}
    init = CoeffAssignment()
    lqr = {}
    if pf.init.get("method") == "lqr-lyapunov":
        A = linearization(pf.dynamics)
        P = linalg.solve_continuous_lyapunov(A.T, -np.eye(n))
        lqr["V"] = quadratic_form(P) * float(pf.init.get("scale", 1.0))
    init = _finish_init(pf, variables, init, lqr)
    return _feasible_multipliers(BuiltProblem(pf, prog, variables, init, [["s"], ["V"]]))


def build_synthesis(pf: ProblemFile) -> BuiltProblem:
    """Control law synthesis with state constraint ``h <= 0`` and ``H_U kappa <= 1``.

    Constraints: ``V - eps``, ``s1 (V - beta) - <grad V, f(x, kappa)> - eps``,
    ``s2 (V - beta) - h`` and, per row ``j`` of ``H_U``,
    ``s3_j (V - beta) - (H_U kappa - 1)_j`` all SOS.
    """
    n = pf.nvars
    m = len(pf.inputs)
    H = pf.control_constraints
    V = DecisionVar.polynomial("V", n, *pf.degrees["V"])
    kdeg = pf.degrees["kappa"]
    kappas = [DecisionVar.polynomial(f"kappa{j + 1}", n, *kdeg) for j in range(m)]
    s1, c1 = _multiplier("s1", n, pf.degrees.get("s1", (0, 0)))
    s2, c2 = _multiplier("s2", n, pf.degrees.get("s2", (0, 0)))
    s3 = []
    c3 = []
    for j in range(H.shape[0]):
        v, c = _multiplier(f"s3_{j + 1}", n, pf.degrees.get("s3", (0, 0)))
        s3.append(v)
        c3.extend(c)
    variables = {v.name: v for v in [V, *kappas, s1, s2, *s3]}
    order = [V, *kappas, s1, s2, *s3]
    if pf.beta_decision:
        b = DecisionVar.scalar("beta", n)
        variables["beta"] = b
        order.append(b)
        level: ExprNode = V.ref() - b.ref()
    else:
        level = V.ref() - pf.beta
    eps = const(pf.epsilon)
    Vr = V.ref()
    lie = substitute_dynamics(Vr, pf.dynamics, pf.inputs, [k.ref() for k in kappas])
    cons = [
        Constraint(Vr - eps, "V positive"),
        Constraint(s1.ref() * level - lie - eps, "V decrease"),
        Constraint(s2.ref() * level - const(pf.safe_set), "state constraint"),
    ]
    for j in range(H.shape[0]):
        u = sum((k.ref() * float(H[j, i]) for i, k in enumerate(kappas) if H[j, i]),
                const(Polynomial.constant(n, -1.0)))
        cons.append(Constraint(s3[j].ref() * level - u, f"control row {j + 1}"))
    cons.extend(c1 + c2 + c3)
    prog = SOSProgram(sqnorm_diff(Vr, const(pf.safe_set)), cons, variables=order)
    init = CoeffAssignment()
    if pf.beta_decision:
        init[variables["beta"]] = [pf.beta]
    lqr = {}
    if pf.init.get("method") == "lqr-lyapunov":
        A = linearization(pf.dynamics)
        B = np.array([[col[i].coefficient((0,) * n) for col in pf.inputs] for i in range(n)])
        Q = np.eye(n) * float(pf.init.get("q", 1.0))
        R = np.eye(m) * float(pf.init.get("r", 1.0))
        P = linalg.solve_continuous_are(A, B, Q, R)
        K = np.linalg.solve(R, B.T @ P)
        lqr["V"] = quadratic_form(P) * float(pf.init.get("scale", 1.0))
        xs = [Polynomial.variable(n, i) for i in range(n)]
        for j, k in enumerate(kappas):
            lqr[k.name] = sum((xs[i] * float(-K[j, i]) for i in range(n)), Polynomial.zero(n))
    init = _finish_init(pf, variables, init, lqr)
    mult = [s1.name, s2.name, *[v.name for v in s3]]
    # <grad V, G kappa> is bilinear in (V, kappa) and s (V - beta) in (s, beta)
    blocks = [mult, ["V"] + (["beta"] if pf.beta_decision else []), [k.name for k in kappas]]
    return _feasible_multipliers(BuiltProblem(pf, prog, variables, init, blocks))


def build_custom(pf: ProblemFile) -> BuiltProblem:
    n = pf.nvars
    variables: dict[str, DecisionVar] = {}
    for name, spec in pf.raw["decisions"].items():
        if not isinstance(spec, Mapping):
            raise ProblemError(f"decisions.{name} must be an object")
        role = spec.get("role", "free")
        if role == "scalar":
            variables[name] = DecisionVar.scalar(name, n)
            continue
        lo, hi = _degrees(spec.get("degrees"), f"decisions.{name}.degrees")
        if role == "free":
            variables[name] = DecisionVar.polynomial(name, n, lo, hi)
        elif role == "sos":
            if lo % 2 or hi % 2 or hi == 0:
                raise ProblemError(f"decisions.{name}: sos degrees must be even and not both zero")
            variables[name] = DecisionVar.sos(name, n, lo, hi)
        else:
            raise ProblemError(f"decisions.{name}.role must be free, sos or scalar")
    dyn = pf.dynamics or None

    def parse(text, where):
        if not isinstance(text, str):
            raise ProblemError(f"{where}: expected an expression string")
        try:
            return parse_expression(text, pf.indeterminates, variables, dyn)
        except ParseError as exc:
            raise ProblemError(f"{where}: {exc}") from None

    obj = parse(pf.raw["objective"], "objective")
    cons = [Constraint(parse(t, f"constraints[{k}]"), f"c{k + 1}")
            for k, t in enumerate(pf.raw["constraints"])]
    try:
        prog = SOSProgram(obj, cons, variables=list(variables.values()))
    except ValueError as exc:
        raise ProblemError(str(exc)) from None
    init = _finish_init(pf, variables, CoeffAssignment(), {})
    blocks = pf.raw.get("blocks") or [[name] for name in variables]
    for b in blocks:
        for name in b:
            if name not in variables:
                raise ProblemError(f"blocks: unknown decision {name!r}")
    return BuiltProblem(pf, prog, variables, init, [list(b) for b in blocks])


BUILDERS = {"roa": build_roa, "synthesis": build_synthesis, "custom": build_custom}


def build(pf: ProblemFile) -> BuiltProblem:
    return BUILDERS[pf.kind](pf)


def data_dir() -> Path:
    return Path(__file__).parent / "data"


def bundled() -> list[Path]:
    return sorted(data_dir().glob("*.json"))


def load_bundled(name: str) -> ProblemFile:
    """A benchmark from ``data/`` or an example from ``data/extra/``."""
    path = data_dir() / f"{name}.json"
    if not path.exists():
        path = data_dir() / "extra" / f"{name}.json"
    return load_problem(path)


def monomial_count(n: int, lo: int, hi: int) -> int:
    return len(monomials_between(n, lo, hi))
