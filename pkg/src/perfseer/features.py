"""Feature identifiers: parsing, matching against counts, evaluation.

Identifier grammar (see README.md)::

    f_op_<dtype>_<op>
    f_mem_access[_tag:<tag>][_<mem type>][_<dtype>][_<direction>]
                [_lstrides:{<c>;...}][_gstrides:{<c>;...}][_afr:<rel><value>]
    f_sync_<barrier_local|kernel_launch|group_launch>
    f_thread_groups
    f_exec_wall_time_<executor id>

A stride constraint ``<c>`` is ``<axis>:[<|>]<affine>``; no relation
means equality.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from perfseer.affine import AffineExpr
from perfseer.counting import (
    SUB_GROUP, SYNC_KINDS, WORK_GROUP, AccessPattern, OpKind, SyncKind,
    count_kernel, group_count,
)
from perfseer.errors import FeatureError, ParseError, PerfseerError
from perfseer.ir import DTYPE_BYTES, Kernel, LaunchGeometry
from perfseer.kernel_lang import parse_affine
from perfseer.poly import PiecewisePoly, UnguardedEvaluation

FEATURE_CLASSES = ("op", "mem_access", "sync", "thread_groups", "wall_time")
OPS = ("add", "mul", "madd", "div", "pow")
MEM_TYPES = ("global", "local")
DIRECTIONS = ("load", "store")
RELATIONS = ("==", "<", ">")
_FIELD_ORDER = ("tag", "mem_type", "dtype", "direction", "lstrides", "gstrides", "afr")
_TAG_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*$")
_EXEC_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*$")


@dataclass(frozen=True)
class Constraint:
    """``value <relation> rhs``; ``text`` keeps the source spelling."""

    relation: str
    rhs: AffineExpr
    text: str

    def holds(self, value: Fraction, bindings: Mapping[str, object]) -> bool:
        try:
            bound = self.rhs.evaluate(bindings)
        except KeyError as exc:
            raise FeatureError(f"constraint '{self.text}': {exc.args[0]}") from None
        if self.relation == "<":
            return value < bound
        if self.relation == ">":
            return value > bound
        return value == bound


@dataclass(frozen=True)
class StrideConstraint:
    axis: int
    constraint: Constraint

    @property
    def text(self) -> str:
        return f"{self.axis}:{self.constraint.text}"


@dataclass(frozen=True)
class FeatureSpec:
    cls: str
    text: str
    dtype: str | None = None
    op: str | None = None
    tag: str | None = None
    mem_type: str | None = None
    direction: str | None = None
    lstrides: tuple[StrideConstraint, ...] = ()
    gstrides: tuple[StrideConstraint, ...] = ()
    afr: Constraint | None = None
    sync: str | None = None
    executor_id: str | None = None

    def __str__(self) -> str:
        return self.text

    @property
    def is_count(self) -> bool:
        return self.cls != "wall_time"

    @property
    def has_parametric_constraint(self) -> bool:
        cons = [c.constraint for c in self.lstrides + self.gstrides]
        if self.afr is not None:
            cons.append(self.afr)
        return any(not c.rhs.is_constant for c in cons)

    def matches(self, key, bindings: Mapping[str, object]) -> bool:
        """Whether CountMap key ``key`` contributes to this feature."""
        if self.cls == "op":
            return isinstance(key, OpKind) and key.dtype == self.dtype and key.op == self.op
        if self.cls == "sync":
            return isinstance(key, SyncKind) and key.kind == self.sync
        if self.cls != "mem_access" or not isinstance(key, AccessPattern):
            return False
        if self.tag is not None:
            return key.tag == self.tag
        if self.mem_type is not None and key.mem_type != self.mem_type:
            return False
        if self.dtype is not None and key.dtype != self.dtype:
            return False
        if self.direction is not None and key.direction != self.direction:
            return False
        for strides, constraints in ((key.lstrides, self.lstrides),
                                     (key.gstrides, self.gstrides)):
            table = dict(strides)
            for c in constraints:
                if c.axis not in table:
                    return False
                if not c.constraint.holds(table[c.axis].evaluate(bindings), bindings):
                    return False
        if self.afr is not None:
            if key.afr is None:
                raise FeatureError(f"{self.text}: AFR of access to '{key.array}' is not "
                                   "available (non-affine footprint)")
            try:
                afr = key.afr.evaluate(bindings)
            except UnguardedEvaluation:
                # no iteration reaches the access here, so it contributes nothing
                return False
            if not self.afr.holds(afr, bindings):
                return False
        return True


# {{{ parsing

def _split_fields(body: str, text: str) -> list[str]:
    fields, depth, cur = [], 0, []
    for pos, ch in enumerate(body):
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced '}' in feature id", text, pos + len(text) - len(body))
        if ch == "_" and depth == 0:
            fields.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ParseError("unterminated '{' in feature id", text, len(text), "'}'")
    fields.append("".join(cur))
    return fields


def _constraint(src: str, text: str) -> Constraint:
    src = src.strip()
    rel = "=="
    body = src
    for cand in ("==", "<", ">"):
        if src.startswith(cand):
            rel, body = cand, src[len(cand):]
            break
    if not body.strip():
        raise ParseError(f"empty constraint value in '{src}'", text)
    try:
        rhs = parse_affine(body)
    except ParseError as exc:
        raise ParseError(f"malformed constraint '{src}' in feature id: {exc}", text) from None
    return Constraint(rel, rhs, src)


def _stride_constraints(value: str, text: str) -> tuple[StrideConstraint, ...]:
    if not (value.startswith("{") and value.endswith("}")):
        raise ParseError(f"malformed constraint braces '{value}'", text, None, "'{...}'")
    inner = value[1:-1]
    out, axes = [], set()
    for item in inner.split(";"):
        if not item.strip():
            raise ParseError(f"empty stride constraint in '{value}'", text)
        axis, sep, cons = item.partition(":")
        if not sep or not axis.strip().isdigit():
            raise ParseError(f"malformed stride constraint '{item}'", text, None,
                             "<axis>:<constraint>")
        a = int(axis)
        if a in axes:
            raise ParseError(f"axis {a} constrained twice in '{value}'", text)
        axes.add(a)
        out.append(StrideConstraint(a, _constraint(cons, text)))
    return tuple(out)


def parse_feature(text: str) -> FeatureSpec:
    if not isinstance(text, str) or not text.startswith("f_"):
        raise ParseError(f"feature id {text!r} must start with 'f_'", str(text), 0)
    if text == "f_thread_groups":
        return FeatureSpec("thread_groups", text)
    if text.startswith("f_exec_wall_time_"):
        ident = text[len("f_exec_wall_time_"):]
        if not _EXEC_RE.match(ident):
            raise ParseError(f"malformed executor id '{ident}'", text, len("f_exec_wall_time_"))
        return FeatureSpec("wall_time", text, executor_id=ident)
    if text.startswith("f_sync_"):
        kind = text[len("f_sync_"):]
        if kind not in SYNC_KINDS:
            raise ParseError(f"unknown sync kind '{kind}'", text, len("f_sync_"),
                             " or ".join(SYNC_KINDS))
        return FeatureSpec("sync", text, sync=kind)
    if text.startswith("f_op_"):
        parts = text[len("f_op_"):].split("_")
        if len(parts) != 2 or parts[0] not in DTYPE_BYTES or parts[1] not in OPS:
            raise ParseError(f"malformed op feature '{text}'", text, len("f_op_"),
                             "f_op_<dtype>_<op>")
        return FeatureSpec("op", text, dtype=parts[0], op=parts[1])
    if text == "f_mem_access" or text.startswith("f_mem_access_"):
        return _parse_mem(text)
    raise ParseError(f"unknown feature class in '{text}'", text, 2,
                     "op, mem_access, sync, thread_groups or exec_wall_time")


def _parse_mem(text: str) -> FeatureSpec:
    body = text[len("f_mem_access_"):] if text != "f_mem_access" else ""
    fields = _split_fields(body, text) if body else []
    values: dict = {}
    last = -1
    for f in fields:
        if f.startswith("tag:"):
            name, value = "tag", f[4:]
            if not _TAG_RE.match(value):
                raise ParseError(f"malformed access tag '{value}'", text)
        elif f in MEM_TYPES:
            name, value = "mem_type", f
        elif f in DTYPE_BYTES:
            name, value = "dtype", f
        elif f in DIRECTIONS:
            name, value = "direction", f
        elif f.startswith("lstrides:"):
            name, value = "lstrides", _stride_constraints(f[len("lstrides:"):], text)
        elif f.startswith("gstrides:"):
            name, value = "gstrides", _stride_constraints(f[len("gstrides:"):], text)
        elif f.startswith("afr:"):
            name, value = "afr", _constraint(f[4:], text)
        else:
            raise ParseError(f"unknown mem_access field '{f}'", text, None,
                             "tag:, mem type, dtype, direction, lstrides:, gstrides:, afr:")
        pos = _FIELD_ORDER.index(name)
        if pos <= last:
            raise ParseError(f"field '{f}' is out of order; fields must follow "
                             + " < ".join(_FIELD_ORDER), text)
        last = pos
        values[name] = value
    if "tag" in values and len(values) > 1:
        raise ParseError("a tag-based mem_access feature takes no other fields", text)
    return FeatureSpec("mem_access", text, **values)


def print_feature(spec: FeatureSpec) -> str:
    if spec.cls == "thread_groups":
        return "f_thread_groups"
    if spec.cls == "wall_time":
        return f"f_exec_wall_time_{spec.executor_id}"
    if spec.cls == "sync":
        return f"f_sync_{spec.sync}"
    if spec.cls == "op":
        return f"f_op_{spec.dtype}_{spec.op}"
    parts = ["f_mem_access"]
    if spec.tag is not None:
        parts.append(f"tag:{spec.tag}")
    for name in ("mem_type", "dtype", "direction"):
        if getattr(spec, name) is not None:
            parts.append(getattr(spec, name))
    if spec.lstrides:
        parts.append("lstrides:{" + ";".join(c.text for c in spec.lstrides) + "}")
    if spec.gstrides:
        parts.append("gstrides:{" + ";".join(c.text for c in spec.gstrides) + "}")
    if spec.afr is not None:
        parts.append(f"afr:{spec.afr.text}")
    return "_".join(parts)


def scan_feature_id(src: str, pos: int) -> int:
    """End position of the feature id starting at ``src[pos]``.

    Inside braces anything up to the closing brace belongs to the id. Outside
    braces the id ends at whitespace or one of ``+*/(),;``, and at ``-``
    unless it directly follows one of ``:<>=`` (a negative constraint value).
    """
    depth = 0
    i = pos
    while i < len(src):
        ch = src[i]
        if depth:
            if ch == "}":
                depth -= 1
            elif ch == "{":
                depth += 1
        elif ch == "{":
            depth += 1
        elif ch.isspace() or ch in "+*/(),;":
            break
        elif ch == "-" and (i == pos or src[i - 1] not in ":<>="):
            break
        i += 1
    return i

# }}}


# {{{ evaluation

@dataclass(frozen=True)
class FeatureValue:
    spec: FeatureSpec
    numeric: float | Fraction
    symbolic: PiecewisePoly | None = None
    matched: int = 0


_cache: dict = {}


def clear_cache() -> None:
    _cache.clear()


def _divisor(granularity: str, geometry: LaunchGeometry | None, sub_group_size: int,
             spec: FeatureSpec):
    if granularity == SUB_GROUP:
        if geometry is not None and geometry.work_group_total % sub_group_size:
            raise FeatureError(
                f"{spec.text}: work-group size {geometry.work_group_total} is not a multiple "
                f"of the sub-group size {sub_group_size}; sub-group counts are undefined")
        return sub_group_size
    if granularity == WORK_GROUP:
        if geometry is None:
            raise FeatureError(f"{spec.text}: work-group granularity needs a launch geometry")
        return geometry.work_group_total
    return 1


def evaluate_feature(spec: FeatureSpec | str, k: Kernel, bindings: Mapping[str, int],
                     geometry: LaunchGeometry | None = None, executor=None,
                     sub_group_size: int | None = None, required: bool = False,
                     use_cache: bool = True, trials: int = 60) -> FeatureValue:
    if isinstance(spec, str):
        spec = parse_feature(spec)
    k.check_bindings(bindings)
    sg = sub_group_size or (geometry.sub_group_size if geometry is not None else 32)
    if spec.cls == "wall_time":
        if executor is None:
            raise FeatureError(f"{spec.text}: wall-time features need an executor")
        if getattr(executor, "id", None) != spec.executor_id:
            raise FeatureError(f"{spec.text}: executor '{getattr(executor, 'id', None)}' does "
                               f"not match '{spec.executor_id}'")
        from perfseer.executor import summarize
        if geometry is None:
            from perfseer.ir import launch_geometry
            geometry = launch_geometry(k, sg)
        times = executor.measure(k, bindings, geometry, trials)
        return FeatureValue(spec, summarize(times).mean_seconds)
    if spec.cls == "thread_groups":
        value = group_count(k)
        return FeatureValue(spec, value.evaluate(bindings), value, 1)

    counts = count_kernel(k)
    outcomes = tuple(spec.matches(key, bindings) for key in counts.keys())
    wg = geometry.work_group_total if geometry is not None else None
    cache_key = (k.digest, spec.text, outcomes, sg, wg)
    if use_cache and cache_key in _cache:
        symbolic, matched = _cache[cache_key]
    else:
        symbolic = PiecewisePoly.zero()
        matched = 0
        for key, ok in zip(counts.keys(), outcomes):
            if not ok:
                continue
            matched += 1
            value = counts[key]
            div = _divisor(key.granularity, geometry, sg, spec)
            symbolic = symbolic + (value / div if div != 1 else value)
        if use_cache:
            _cache[cache_key] = (symbolic, matched)
    if matched == 0 and required:
        raise FeatureError(f"{spec.text} matches no count in kernel '{k.name}'")
    return FeatureValue(spec, symbolic.evaluate(bindings), symbolic, matched)


@dataclass
class FeatureTable:
    columns: list[str]
    kernel_ids: list[str]
    rows: list[list[float]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kernel_id"] + self.columns)
        for kid, row in zip(self.kernel_ids, self.rows):
            w.writerow([kid] + [format_value(v) for v in row])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> FeatureTable:
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise FeatureError("empty feature table") from None
        if not header or header[0] != "kernel_id":
            raise FeatureError("feature table must start with a 'kernel_id' column")
        ids, rows = [], []
        for line in reader:
            if not line:
                continue
            ids.append(line[0])
            rows.append([float(v) for v in line[1:]])
        return FeatureTable(header[1:], ids, rows)

    def to_json(self) -> dict:
        return {"columns": self.columns,
                "rows": [{"kernel_id": kid, "values": [float(v) for v in row]}
                         for kid, row in zip(self.kernel_ids, self.rows)]}

    def column(self, feature: str) -> list[float]:
        j = self.columns.index(feature)
        return [row[j] for row in self.rows]

    def row(self, kernel_id: str) -> dict[str, float]:
        i = self.kernel_ids.index(kernel_id)
        return dict(zip(self.columns, self.rows[i]))


def format_value(v) -> str:
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        v = float(v)
    if isinstance(v, int):
        return str(v)
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def gather_feature_values(features: Sequence[FeatureSpec | str], kernels: Iterable,
                          executor=None, sub_group_size: int | None = None,
                          trials: int = 60) -> FeatureTable:
    """Feature table for ``kernels``: objects with ``kernel_id``, ``kernel``,
    ``bindings`` and ``geometry`` (as produced by :mod:`perfseer.uipick`)."""
    specs = [parse_feature(f) if isinstance(f, str) else f for f in features]
    columns = list(dict.fromkeys(s.text for s in specs))
    specs = [parse_feature(c) for c in columns]
    ids, rows = [], []
    for v in kernels:
        row = []
        for spec in specs:
            try:
                value = evaluate_feature(spec, v.kernel, v.bindings, v.geometry, executor,
                                         sub_group_size, trials=trials).numeric
            except PerfseerError as exc:
                raise type(exc)(f"kernel '{v.kernel_id}': {exc}") from exc
            row.append(value)
        ids.append(v.kernel_id)
        rows.append(row)
    return FeatureTable(columns, ids, rows)

# }}}
