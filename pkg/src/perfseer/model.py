"""Model expressions, symbolic derivatives and Levenberg-Marquardt calibration.

Expression grammar::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | atom
    atom  := number | p_<name> | f_<feature id> | "(" expr ")"
           | "tanh" "(" expr ")" | "sstep" "(" expr ";" p_<name> ")"

``sstep(x; p_e)`` is shorthand for ``(tanh(p_e * x) + 1) / 2``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from perfseer.errors import CalibrationError, ModelError, ParseError
from perfseer.features import FeatureSpec, FeatureTable, evaluate_feature, parse_feature, scan_feature_id

_PARAM_RE = re.compile(r"p_[A-Za-z0-9_]+")
_NUMBER_RE = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


# {{{ expression tree

class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: Fraction


@dataclass(frozen=True)
class Param(Node):
    name: str


@dataclass(frozen=True)
class Feat(Node):
    spec: FeatureSpec

    @property
    def name(self) -> str:
        return self.spec.text


@dataclass(frozen=True)
class Bin(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class Tanh(Node):
    arg: Node


ZERO = Num(Fraction(0))
ONE = Num(Fraction(1))


def sstep(x: Node, edge: Param) -> Node:
    return Bin("/", Bin("+", Tanh(Bin("*", edge, x)), ONE), Num(Fraction(2)))


def add(a: Node, b: Node) -> Node:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def div(a: Node, b: Node) -> Node:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Bin("/", a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def differentiate_expr(e: Node, p: str) -> Node:
    """Symbolic partial derivative of ``e`` with respect to parameter ``p``."""
    if isinstance(e, (Num, Feat)):
        return ZERO
    if isinstance(e, Param):
        return ONE if e.name == p else ZERO
    if isinstance(e, Neg):
        return neg(differentiate_expr(e.operand, p))
    if isinstance(e, Tanh):
        du = differentiate_expr(e.arg, p)
        if du == ZERO:
            return ZERO
        return mul(sub(ONE, mul(e, e)), du)
    da, db = differentiate_expr(e.left, p), differentiate_expr(e.right, p)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, e.right), mul(e.left, db))
    # quotient rule
    return sub(div(da, e.right), div(mul(e.left, db), mul(e.right, e.right)))


def evaluate_expr(e: Node, params: Mapping[str, float], features: Mapping[str, object]):
    """Evaluate ``e``; feature values may be floats or numpy arrays (one per row)."""
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Param):
        return params[e.name]
    if isinstance(e, Feat):
        return features[e.spec.text]
    if isinstance(e, Neg):
        return -evaluate_expr(e.operand, params, features)
    if isinstance(e, Tanh):
        return np.tanh(evaluate_expr(e.arg, params, features))
    a = evaluate_expr(e.left, params, features)
    b = evaluate_expr(e.right, params, features)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    return a / b


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def print_expr(e: Node, prec: int = 0) -> str:
    if isinstance(e, Num):
        v = e.value
        s = str(v.numerator) if v.denominator == 1 else repr(float(v))
        return f"({s})" if v < 0 and prec else s
    if isinstance(e, (Param, Feat)):
        return e.name
    if isinstance(e, Neg):
        s = "-" + print_expr(e.operand, 3)
        return f"({s})" if prec > 1 else s
    if isinstance(e, Tanh):
        return f"tanh({print_expr(e.arg)})"
    mine = _PREC[e.op]
    # operators associate left; a right-nested operand keeps its parentheses
    s = f"{print_expr(e.left, mine)} {e.op} {print_expr(e.right, mine + 1)}"
    return f"({s})" if mine < prec else s


def walk(e: Node):
    yield e
    if isinstance(e, Bin):
        yield from walk(e.left)
        yield from walk(e.right)
    elif isinstance(e, Neg):
        yield from walk(e.operand)
    elif isinstance(e, Tanh):
        yield from walk(e.arg)

# }}}


# {{{ parser

class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0

    def error(self, message: str, expected: str | None = None):
        raise ParseError(message, self.src, self.pos, expected)

    def skip(self) -> None:
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            self.error(f"expected '{ch}'", f"'{ch}'")
        self.pos += 1

    def parse(self) -> Node:
        e = self.expr()
        if self.peek():
            self.error(f"unexpected '{self.peek()}'", "operator or end of expression")
        return e

    def expr(self) -> Node:
        e = self.term()
        while self.peek() in ("+", "-"):
            op = self.src[self.pos]
            self.pos += 1
            e = Bin(op, e, self.term())
        return e

    def term(self) -> Node:
        e = self.unary()
        while self.peek() in ("*", "/"):
            op = self.src[self.pos]
            self.pos += 1
            e = Bin(op, e, self.unary())
        return e

    def unary(self) -> Node:
        if self.peek() == "-":
            self.pos += 1
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Node:
        ch = self.peek()
        if not ch:
            self.error("unexpected end of expression", "operand")
        if ch == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        m = _NUMBER_RE.match(self.src, self.pos)
        if m:
            self.pos = m.end()
            return Num(Fraction(m.group(0)))
        if self.src.startswith("f_", self.pos):
            start = self.pos
            end = scan_feature_id(self.src, start)
            text = self.src[start:end]
            try:
                spec = parse_feature(text)
            except ParseError as exc:
                raise ParseError(f"bad feature '{text}': {exc.args[0]}", self.src, start) from None
            self.pos = end
            return Feat(spec)
        m = _WORD_RE.match(self.src, self.pos)
        if not m:
            self.error(f"unexpected '{ch}'", "operand")
        word = m.group(0)
        if word.startswith("p_"):
            if not _PARAM_RE.fullmatch(word):
                self.error(f"malformed parameter '{word}'")
            self.pos = m.end()
            return Param(word)
        if word == "tanh":
            self.pos = m.end()
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Tanh(arg)
        if word == "sstep":
            self.pos = m.end()
            self.expect("(")
            x = self.expr()
            self.expect(";")
            self.skip()
            m2 = _PARAM_RE.match(self.src, self.pos)
            if not m2:
                self.error("sstep needs an edge parameter", "p_<name>")
            self.pos = m2.end()
            self.expect(")")
            return sstep(x, Param(m2.group(0)))
        self.error(f"unknown identifier '{word}'; identifiers start with 'p_' or 'f_'",
                   "p_<name>, f_<feature>, tanh or sstep")


def parse_model_expr(src: str) -> Node:
    return _Parser(src).parse()

# }}}


@dataclass(frozen=True)
class Model:
    output: FeatureSpec
    expr: Node
    params: tuple[str, ...]
    features: tuple[FeatureSpec, ...]
    source: str

    @property
    def feature_ids(self) -> tuple[str, ...]:
        return tuple(f.text for f in self.features)

    def all_features(self) -> list[str]:
        """Output first, then inputs in first-occurrence order."""
        return [self.output.text, *self.feature_ids]

    def jacobian_exprs(self) -> dict[str, Node]:
        return differentiate(self)

    def evaluate(self, params: Mapping[str, float], features: Mapping[str, object]):
        missing = [p for p in self.params if p not in params]
        if missing:
            raise ModelError(f"no value for parameter(s) {', '.join(missing)}")
        missing = [f for f in self.feature_ids if f not in features]
        if missing:
            raise ModelError(f"no value for feature(s) {', '.join(missing)}")
        feats = {k: (np.asarray(v, dtype=float) if not isinstance(v, (int, float, Fraction))
                     else float(v)) for k, v in features.items()}
        return evaluate_expr(self.expr, params, feats)

    def eval_with_kernel(self, params: Mapping[str, float], k, bindings, geometry=None,
                         executor=None) -> float:
        values = {f.text: evaluate_feature(f, k, bindings, geometry, executor).numeric
                  for f in self.features}
        return float(self.evaluate(params, values))

    def to_text(self) -> str:
        return f"{self.output.text}\n{self.source}\n"


def parse_model(output_id: str, expr_src: str) -> Model:
    try:
        output = parse_feature(output_id.strip())
    except ParseError as exc:
        raise ModelError(f"bad output feature: {exc.args[0]}") from None
    if output.cls != "wall_time":
        raise ModelError(f"output feature '{output_id}' must be a wall-time feature")
    expr = parse_model_expr(expr_src)
    params: dict[str, None] = {}
    feats: dict[str, FeatureSpec] = {}
    for node in walk(expr):
        if isinstance(node, Param):
            params.setdefault(node.name)
        elif isinstance(node, Feat):
            feats.setdefault(node.spec.text, node.spec)
    if output.text in feats:
        raise ModelError(f"output feature '{output.text}' appears in the model expression")
    if not params:
        raise ModelError("model expression has no parameters")
    return Model(output, expr, tuple(params), tuple(feats.values()), " ".join(expr_src.split()))


def parse_model_file(text: str) -> Model:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if len(lines) < 2:
        raise ModelError("model file needs an output feature line and an expression")
    return parse_model(lines[0], " ".join(lines[1:]))


def differentiate(m: Model) -> dict[str, Node]:
    return {p: differentiate_expr(m.expr, p) for p in m.params}


# {{{ calibration data

@dataclass(frozen=True)
class CalibrationProblem:
    feature_ids: tuple[str, ...]
    inputs: tuple[tuple[float, ...], ...]
    outputs: tuple[float, ...]
    scaled: bool = False
    original: CalibrationProblem | None = None
    kernel_ids: tuple[str, ...] = ()
    scales: tuple[float, ...] = ()

    def __post_init__(self):
        if self.scaled and len(self.scales) != len(self.outputs):
            raise CalibrationError("a scaled problem needs one scale per row")
        if any(len(r) != len(self.feature_ids) for r in self.inputs):
            raise CalibrationError("row width does not match the feature list")
        if len(self.inputs) != len(self.outputs):
            raise CalibrationError("input and output row counts differ")

    @property
    def nrows(self) -> int:
        return len(self.outputs)

    def columns(self) -> dict[str, np.ndarray]:
        mat = np.array(self.inputs, dtype=float).reshape(len(self.inputs), len(self.feature_ids))
        return {f: mat[:, j] for j, f in enumerate(self.feature_ids)}

    def weights(self) -> np.ndarray:
        if self.scaled:
            return 1.0 / np.asarray(self.scales, dtype=float)
        return np.ones(self.nrows)

    def model_columns(self) -> dict[str, np.ndarray]:
        """Feature columns in original units (scaling undone)."""
        cols = self.columns()
        if not self.scaled:
            return cols
        s = np.asarray(self.scales, dtype=float)
        return {f: c * s for f, c in cols.items()}

    def digest(self) -> str:
        payload = json.dumps([self.feature_ids, self.inputs, self.outputs, self.scaled])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @staticmethod
    def from_table(m: Model, table: FeatureTable) -> CalibrationProblem:
        missing = [c for c in m.all_features() if c not in table.columns]
        if missing:
            raise CalibrationError(f"feature table lacks column(s) {', '.join(missing)}")
        outputs = tuple(float(v) for v in table.column(m.output.text))
        cols = [table.column(f) for f in m.feature_ids]
        inputs = tuple(tuple(float(c[i]) for c in cols) for i in range(len(outputs)))
        return CalibrationProblem(m.feature_ids, inputs, outputs, kernel_ids=tuple(table.kernel_ids))

    @staticmethod
    def from_measurements(m: Model, table: FeatureTable, records: Sequence) -> CalibrationProblem:
        """Rows for every kernel present in both the feature table and ``records``
        (objects with ``kernel_id`` and ``mean_seconds``), in table order."""
        missing = [c for c in m.feature_ids if c not in table.columns]
        if missing:
            raise CalibrationError(f"feature table lacks column(s) {', '.join(missing)}")
        times = {r.kernel_id: r.mean_seconds for r in records}
        unknown = [kid for kid in table.kernel_ids if kid not in times]
        if unknown:
            raise CalibrationError("no measurement for kernel(s) " + ", ".join(unknown))
        cols = [table.column(f) for f in m.feature_ids]
        inputs = tuple(tuple(float(c[i]) for c in cols) for i in range(len(table.kernel_ids)))
        outputs = tuple(float(times[kid]) for kid in table.kernel_ids)
        return CalibrationProblem(m.feature_ids, inputs, outputs, kernel_ids=tuple(table.kernel_ids))


def scale_features_by_output(p: CalibrationProblem) -> CalibrationProblem:
    """Divide each row's inputs by its output and set outputs to 1.

    The divisors are kept, and residuals of the scaled problem are the
    relative errors ``1 - g(f)/t`` at the original features. For models whose
    terms are each linear in the features this equals evaluating the model on
    the divided features; for feature products and tanh arguments it keeps the
    model's units intact.
    """
    if p.scaled:
        return p
    for i, t in enumerate(p.outputs):
        if t == 0 or not math.isfinite(t):
            raise CalibrationError(f"row {i} has output {t}; cannot scale by it")
    inputs = tuple(tuple(v / t for v in row) for row, t in zip(p.inputs, p.outputs))
    return CalibrationProblem(p.feature_ids, inputs, tuple(1.0 for _ in p.outputs), True,
                              p, p.kernel_ids, tuple(float(t) for t in p.outputs))

# }}}


# {{{ fitting

LAMBDA0 = 1e-3
LAMBDA_DOWN = 0.1
LAMBDA_UP = 10.0
LAMBDA_MAX = 1e16
STEP_TOL = 1e-10
GRAD_TOL = 1e-10
MAX_ITERATIONS = 200


@dataclass
class CalibratedModel:
    model: Model
    param_values: dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    problem: CalibrationProblem
    unscaled_residual_norm: float | None = None
    warnings: list[str] = field(default_factory=list)
    # kept from a loaded file, whose unscaled rows are not stored
    measurement_hash: str | None = None

    def residuals(self) -> np.ndarray:
        return residual_vector(self.model, self.param_values, self.problem)

    def predict(self, k, bindings, geometry=None, executor=None) -> float:
        return predict(self, k, bindings, geometry, executor)

    def to_json(self) -> dict:
        return {
            "format": "perfseer-calibrated/1",
            "output": self.model.output.text,
            "expression": self.model.source,
            "params": {p: self.param_values[p] for p in self.model.params},
            "residual_norm": self.residual_norm,
            "unscaled_residual_norm": self.unscaled_residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "scaled": self.problem.scaled,
            "warnings": list(self.warnings),
            "provenance": {"measurement_hash": self.measurement_hash
                           or (self.problem.original or self.problem).digest(),
                           "kernels": list(self.problem.kernel_ids)},
            "rows": {"features": list(self.problem.feature_ids),
                     "inputs": [list(r) for r in self.problem.inputs],
                     "outputs": list(self.problem.outputs),
                     "scales": list(self.problem.scales)},
        }

    @staticmethod
    def from_json(data: Mapping) -> CalibratedModel:
        if data.get("format") != "perfseer-calibrated/1":
            raise ModelError(f"unsupported calibrated-model format {data.get('format')!r}")
        m = parse_model(data["output"], data["expression"])
        rows = data["rows"]
        prob = CalibrationProblem(tuple(rows["features"]),
                                  tuple(tuple(r) for r in rows["inputs"]),
                                  tuple(rows["outputs"]), bool(data.get("scaled", False)),
                                  kernel_ids=tuple(data.get("provenance", {}).get("kernels", ())),
                                  scales=tuple(rows.get("scales", ())))
        return CalibratedModel(m, dict(data["params"]), data["residual_norm"],
                               data["iterations"], data["converged"], prob,
                               data.get("unscaled_residual_norm"), list(data.get("warnings", ())),
                               data.get("provenance", {}).get("measurement_hash"))


def residual_vector(m: Model, params: Mapping[str, float], p: CalibrationProblem) -> np.ndarray:
    g = np.broadcast_to(m.evaluate(params, p.model_columns()), (p.nrows,))
    return np.asarray(p.outputs, dtype=float) - g * p.weights()


def _jacobian(m: Model, derivs: Mapping[str, Node], params, cols, weights) -> np.ndarray:
    """Partials of the (weighted) model values; the residual Jacobian is its negative."""
    n = len(weights)
    out = np.empty((n, len(m.params)))
    for j, name in enumerate(m.params):
        out[:, j] = np.broadcast_to(evaluate_expr(derivs[name], params, cols), (n,)) * weights
    return out


def jacobian(m: Model, params: Mapping[str, float], features: Mapping[str, object]) -> np.ndarray:
    """Analytic partials of the model value, one column per parameter in ``m.params`` order."""
    cols = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in features.items()}
    n = max((len(c) for c in cols.values()), default=1)
    return _jacobian(m, differentiate(m), params, cols, np.ones(n))


def edge_params(m: Model) -> set[str]:
    """Parameters that only occur inside tanh arguments."""
    inside, outside = set(), set()

    def visit(e: Node, in_tanh: bool):
        if isinstance(e, Param):
            (inside if in_tanh else outside).add(e.name)
        elif isinstance(e, Tanh):
            visit(e.arg, True)
        elif isinstance(e, Neg):
            visit(e.operand, in_tanh)
        elif isinstance(e, Bin):
            visit(e.left, in_tanh)
            visit(e.right, in_tanh)
    visit(m.expr, False)
    return inside - outside


def _drop_tanh(e: Node) -> Node:
    if isinstance(e, Tanh):
        return ZERO
    if isinstance(e, Neg):
        return neg(_drop_tanh(e.operand))
    if isinstance(e, Bin):
        return Bin(e.op, _drop_tanh(e.left), _drop_tanh(e.right))
    return e


def _linearization(m: Model, p: CalibrationProblem):
    """Cost-parameter columns of ``m`` with every tanh replaced by 0, or None
    when that model is not affine in the cost parameters."""
    edges = edge_params(m)
    costs = [q for q in m.params if q not in edges]
    lin = _drop_tanh(m.expr)
    cols = p.model_columns()
    w = p.weights()
    n = p.nrows
    base = {q: (1.0 if q in edges else 0.0) for q in m.params}
    with np.errstate(all="ignore"):
        g0 = np.broadcast_to(evaluate_expr(lin, base, cols), (n,)).astype(float)
        mat = np.empty((n, len(costs)))
        for j, q in enumerate(costs):
            unit = dict(base, **{q: 1.0})
            mat[:, j] = np.broadcast_to(evaluate_expr(lin, unit, cols), (n,)) - g0
        probe = dict(base, **{q: 0.37 + 0.11 * j for j, q in enumerate(costs)})
        lhs = np.broadcast_to(evaluate_expr(lin, probe, cols), (n,))
    if not (np.all(np.isfinite(mat)) and np.all(np.isfinite(g0))):
        return None
    rhs = g0 + mat @ np.array([probe[q] for q in costs])
    if not np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12 * (1 + np.abs(rhs).max())):
        return None
    return costs, g0 * w, mat * w[:, None]


def initial_points(m: Model, p: CalibrationProblem,
                   warnings: list[str] | None = None) -> list[dict[str, float]]:
    """Deterministic starting points, most preferred first.

    Edge parameters always start at 1. Cost parameters start at the
    least-squares solution of the model with every tanh replaced by 0; for
    models containing tanh two more starts follow: every cost term carrying an
    equal share of the mean output, and all ones.
    """
    ones = {q: 1.0 for q in m.params}
    if len(edge_params(m)) == len(m.params):
        return [ones]
    lin = _linearization(m, p)
    if lin is None:
        return [ones]
    costs, g0, mat = lin
    norms = np.linalg.norm(mat, axis=0)
    norms[norms == 0] = 1.0
    scaled = mat / norms
    if warnings is not None and np.linalg.matrix_rank(scaled) < len(costs):
        warnings.append("linearized feature matrix is rank deficient; "
                        "some cost parameters are not identifiable")
    sol, *_ = np.linalg.lstsq(scaled, np.asarray(p.outputs) - g0, rcond=None)
    starts = [dict(ones, **{q: float(sol[j] / norms[j]) for j, q in enumerate(costs)})]
    if any(isinstance(e, Tanh) for e in walk(m.expr)):
        target = float(np.mean(np.abs(p.outputs))) / len(costs)
        rms = np.sqrt(np.mean(mat ** 2, axis=0))
        starts.append(dict(ones, **{q: (target / rms[j] if rms[j] else 1.0)
                                    for j, q in enumerate(costs)}))
        starts.append(ones)
    return starts


def initial_point(m: Model, p: CalibrationProblem) -> dict[str, float]:
    return initial_points(m, p)[0]


def fit_model(m: Model, problem: CalibrationProblem, initial: Mapping[str, float] | None = None,
              nonnegative: bool = False) -> CalibratedModel:
    """Least-squares calibration of ``m`` by Levenberg-Marquardt.

    Without ``initial`` every start from :func:`initial_points` is run and the
    lowest residual wins (ties go to the earlier start). Damping is applied in
    column-normalized coordinates (the Marquardt diagonal), so the gradient
    test uses the normalized gradient.
    """
    warnings: list[str] = []
    if initial is not None:
        starts = [dict(initial)]
    else:
        _check_problem(m, problem)
        starts = initial_points(m, problem, warnings)
    best = None
    failure = None
    for start in starts:
        try:
            cm = _fit_from(m, problem, start, nonnegative)
        except CalibrationError as exc:
            failure = failure or exc
            continue
        if best is None or cm.residual_norm < best.residual_norm:
            best = cm
    if best is None:
        raise failure
    best.warnings[:0] = warnings
    return best


def _check_problem(m: Model, problem: CalibrationProblem) -> None:
    if problem.nrows < len(m.params):
        raise CalibrationError(f"{problem.nrows} rows cannot determine {len(m.params)} parameters")
    missing = [f for f in m.feature_ids if f not in problem.feature_ids]
    if missing:
        raise CalibrationError(f"calibration rows lack feature(s) {', '.join(missing)}")


def _fit_from(m: Model, problem: CalibrationProblem, params: Mapping[str, float],
              nonnegative: bool) -> CalibratedModel:
    _check_problem(m, problem)
    warnings: list[str] = []
    names = m.params
    edges = edge_params(m)
    cols = problem.model_columns()
    weights = problem.weights()
    derivs = differentiate(m)

    def project(vec: np.ndarray) -> np.ndarray:
        if not nonnegative:
            return vec
        return np.array([max(v, 0.0) if q not in edges else v for q, v in zip(names, vec)])

    vec = project(np.array([float(params[q]) for q in names]))
    as_map = lambda v: dict(zip(names, (float(x) for x in v)))
    with np.errstate(all="ignore"):
        r = residual_vector(m, as_map(vec), problem)
    if not np.all(np.isfinite(r)):
        raise CalibrationError("residual is not finite at the initial point")
    cost = float(r @ r)
    lam = LAMBDA0
    converged = False
    it = 0
    while it < MAX_ITERATIONS:
        it += 1
        with np.errstate(all="ignore"):
            jac = _jacobian(m, derivs, as_map(vec), cols, weights)
        if not np.all(np.isfinite(jac)):
            raise CalibrationError("Jacobian is not finite")
        norms = np.linalg.norm(jac, axis=0)
        norms[norms == 0] = 1.0
        js = jac / norms
        if np.max(np.abs(js.T @ r)) < GRAD_TOL:
            converged = True
            break
        accepted = False
        while not accepted:
            if lam > LAMBDA_MAX:
                raise CalibrationError("Levenberg-Marquardt diverged (damping overflow)")
            aug = np.vstack([js, math.sqrt(lam) * np.eye(len(names))])
            rhs = np.concatenate([r, np.zeros(len(names))])
            z, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
            step = z / norms
            trial = project(vec + step)
            step = trial - vec
            if np.linalg.norm(step) <= STEP_TOL * np.linalg.norm(vec):
                converged = True
                break
            with np.errstate(all="ignore"):
                r_new = residual_vector(m, as_map(trial), problem)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new < cost:
                vec, r, cost = trial, r_new, cost_new
                lam *= LAMBDA_DOWN
                accepted = True
            else:
                lam *= LAMBDA_UP
        if converged:
            break
    values = as_map(vec)
    if not all(math.isfinite(v) for v in values.values()):
        raise CalibrationError("fitted parameters are not finite")
    for q in names:
        if q not in edges and values[q] < 0:
            warnings.append(f"{q} = {values[q]:.3g} is negative; a negative cost is not "
                            "interpretable as a per-unit cost")
    if not converged:
        warnings.append(f"stopped after {MAX_ITERATIONS} iterations without meeting tolerances")
    unscaled = None
    if problem.original is not None:
        with np.errstate(all="ignore"):
            unscaled = float(np.linalg.norm(residual_vector(m, values, problem.original)))
    return CalibratedModel(m, values, float(np.linalg.norm(r)), it, converged, problem,
                           unscaled, warnings)


def predict(cm: CalibratedModel, k, bindings, geometry=None, executor=None) -> float:
    return cm.model.eval_with_kernel(cm.param_values, k, bindings, geometry, executor)

# }}}
