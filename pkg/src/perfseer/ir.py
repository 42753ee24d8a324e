"""Kernel intermediate representation and transformations.

A :class:`Kernel` is an immutable value: a nested-affine loop domain, an
ordered list of statements, array declarations, assumptions on the size
parameters, and parallel-axis tags. Every transform returns a new kernel.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Union

from perfseer.affine import AffineExpr
from perfseer.errors import AssumptionError, IRError
from perfseer.poly import Guard, PiecewisePoly

DTYPE_BYTES = {"float32": 4, "float64": 8, "int32": 4}
ADDRESS_SPACES = ("global", "local", "private")
KERNEL_SCHEMA = "perfseer-kernel/1"


# {{{ expressions

@dataclass(frozen=True)
class Const:
    value: Union[int, float]


@dataclass(frozen=True)
class Var:
    """Reference to an array element (``indices`` non-empty) or a scalar."""

    name: str
    indices: tuple[AffineExpr, ...] = ()
    tag: str | None = None


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Reduce:
    """``sum(inames, body)``."""

    inames: tuple[str, ...]
    body: "Expr"


Expr = Union[Const, Var, BinOp, Neg, Reduce]


def iter_vars(expr: Expr, bound: tuple[str, ...] = ()) -> Iterator[tuple[Var, tuple[str, ...]]]:
    """Yield every :class:`Var` together with the reduction inames enclosing it."""
    if isinstance(expr, Var):
        yield expr, bound
    elif isinstance(expr, BinOp):
        yield from iter_vars(expr.left, bound)
        yield from iter_vars(expr.right, bound)
    elif isinstance(expr, Neg):
        yield from iter_vars(expr.operand, bound)
    elif isinstance(expr, Reduce):
        yield from iter_vars(expr.body, bound + expr.inames)


def map_expr(expr: Expr, fn_var, fn_inames=None) -> Expr:
    """Rebuild ``expr`` applying ``fn_var`` to variables and ``fn_inames`` to
    reduction iname tuples."""
    if isinstance(expr, Var):
        return fn_var(expr)
    if isinstance(expr, BinOp):
        return BinOp(expr.op, map_expr(expr.left, fn_var, fn_inames),
                     map_expr(expr.right, fn_var, fn_inames))
    if isinstance(expr, Neg):
        return Neg(map_expr(expr.operand, fn_var, fn_inames))
    if isinstance(expr, Reduce):
        inames = fn_inames(expr.inames) if fn_inames else expr.inames
        return Reduce(inames, map_expr(expr.body, fn_var, fn_inames))
    return expr


def free_inames(expr: Expr, inames: Iterable[str]) -> set[str]:
    inames = set(inames)
    out: set[str] = set()
    for var, bound in iter_vars(expr):
        for idx in var.indices:
            out |= (idx.symbols & inames) - set(bound)
    return out


def reduction_inames(expr: Expr) -> tuple[str, ...]:
    out: list[str] = []
    if isinstance(expr, Reduce):
        out.extend(expr.inames)
        out.extend(reduction_inames(expr.body))
    elif isinstance(expr, BinOp):
        out.extend(reduction_inames(expr.left))
        out.extend(reduction_inames(expr.right))
    elif isinstance(expr, Neg):
        out.extend(reduction_inames(expr.operand))
    return tuple(out)

def join_dtypes(a: str | None, b: str | None) -> str | None:
    """Result dtype of a binary operation; ``None`` is an untyped literal."""
    if a is None or a == b:
        return b
    if b is None:
        return a
    if {a, b} == {"float32", "float64"}:
        raise IRError("type conflict: float32 and float64 mixed without explicit cast")
    return a if a != "int32" else b


def expr_dtype(expr: Expr, dtypes: Mapping[str, str]) -> str | None:
    if isinstance(expr, Const):
        return None
    if isinstance(expr, Var):
        return dtypes.get(expr.name)
    if isinstance(expr, BinOp):
        return join_dtypes(expr_dtype(expr.left, dtypes), expr_dtype(expr.right, dtypes))
    if isinstance(expr, Neg):
        return expr_dtype(expr.operand, dtypes)
    if isinstance(expr, Reduce):
        return expr_dtype(expr.body, dtypes)
    raise IRError(f"untypeable expression {expr!r}")

# }}}


# {{{ domain / kernel types

@dataclass(frozen=True)
class LoopDomain:
    """Ordered inames with bounds ``lo <= iname <= hi`` affine in parameters
    and strictly outer inames."""

    inames: tuple[str, ...]
    bounds: tuple[tuple[AffineExpr, AffineExpr], ...]

    def bound(self, iname: str) -> tuple[AffineExpr, AffineExpr]:
        return self.bounds[self.inames.index(iname)]

    @property
    def parameters(self) -> frozenset[str]:
        syms: set[str] = set()
        for lo, hi in self.bounds:
            syms |= lo.symbols | hi.symbols
        return frozenset(syms - set(self.inames))

    def trip_count(self, iname: str) -> AffineExpr:
        lo, hi = self.bound(iname)
        return hi - lo + 1

    def deps(self, iname: str) -> frozenset[str]:
        lo, hi = self.bound(iname)
        return (lo.symbols | hi.symbols) & frozenset(self.inames)

    def closure(self, inames: Iterable[str]) -> frozenset[str]:
        todo = list(inames)
        out = set(todo)
        while todo:
            for dep in self.deps(todo.pop()):
                if dep not in out:
                    out.add(dep)
                    todo.append(dep)
        return frozenset(out)

    def ordered(self, inames: Iterable[str]) -> tuple[str, ...]:
        inames = set(inames)
        return tuple(i for i in self.inames if i in inames)

    def __str__(self) -> str:
        from perfseer.kernel_lang import print_domain
        return print_domain(self)


@dataclass(frozen=True, order=True)
class Assumption:
    """``param mod value == 0`` (kind ``mod``) or ``param >= value`` (``ge``)."""

    kind: str
    param: str
    value: int

    def __post_init__(self):
        if self.kind not in ("mod", "ge"):
            raise IRError(f"unknown assumption kind '{self.kind}'")
        if self.kind == "mod" and self.value < 1:
            raise IRError(f"modulus must be >= 1, got {self.value}")

    def holds(self, value) -> bool:
        value = Fraction(value)
        if self.kind == "ge":
            return value >= self.value
        return value.denominator == 1 and value.numerator % self.value == 0

    def __str__(self) -> str:
        if self.kind == "mod":
            return f"{self.param} mod {self.value} == 0"
        return f"{self.param} >= {self.value}"


@dataclass(frozen=True, order=True)
class InameTag:
    """``seq``, ``l.<axis>`` (local) or ``g.<axis>`` (group)."""

    kind: str = "seq"
    axis: int = -1

    @staticmethod
    def parse(text: str) -> InameTag:
        text = text.strip()
        if text in ("seq", "for", ""):
            return InameTag()
        if len(text) >= 3 and text[0] in "lg" and text[1] == "." and text[2:].isdigit():
            return InameTag(text[0], int(text[2:]))
        raise IRError(f"unknown iname tag '{text}' (expected seq, l.N or g.N)")

    @property
    def is_local(self) -> bool:
        return self.kind == "l"

    @property
    def is_group(self) -> bool:
        return self.kind == "g"

    @property
    def is_parallel(self) -> bool:
        return self.kind in ("l", "g")

    def __str__(self) -> str:
        return "seq" if self.kind == "seq" else f"{self.kind}.{self.axis}"


@dataclass(frozen=True)
class ArgDecl:
    name: str
    dtype: str
    shape: tuple[AffineExpr, ...] = ()
    address_space: str = "global"

    def __post_init__(self):
        if self.dtype not in DTYPE_BYTES:
            raise IRError(f"unsupported dtype '{self.dtype}' for '{self.name}'")
        if self.address_space not in ADDRESS_SPACES:
            raise IRError(f"unknown address space '{self.address_space}'")

    def flat_strides(self) -> list:
        """Row-major element strides, one polynomial per axis."""
        from perfseer.poly import Poly
        strides = []
        acc = Poly.const(1)
        for extent in reversed(self.shape):
            strides.append(acc)
            acc = acc * extent.to_poly()
        return list(reversed(strides))


@dataclass(frozen=True)
class Statement:
    id: str
    lhs: Var | None
    rhs: Expr | None
    within: frozenset[str]
    depends_on: frozenset[str] = frozenset()
    is_barrier: bool = False
    # extra ``expr >= 0`` conditions restricting execution (idle halo threads)
    predicates: tuple[AffineExpr, ...] = ()
    # False for bookkeeping updates whose arithmetic is not part of the workload
    counted: bool = True


@dataclass(frozen=True)
class Kernel:
    domain: LoopDomain
    statements: tuple[Statement, ...] = ()
    args: tuple[ArgDecl, ...] = ()
    assumptions: tuple[Assumption, ...] = ()
    iname_tags: tuple[tuple[str, InameTag], ...] = ()
    name: str = "kernel"
    single_work_item: bool = False

    @property
    def tags(self) -> dict[str, InameTag]:
        return dict(self.iname_tags)

    def tag(self, iname: str) -> InameTag:
        return self.tags.get(iname, InameTag())

    def arg(self, name: str) -> ArgDecl:
        for a in self.args:
            if a.name == name:
                return a
        raise IRError(f"kernel '{self.name}' has no variable '{name}'")

    def has_arg(self, name: str) -> bool:
        return any(a.name == name for a in self.args)

    def statement(self, sid: str) -> Statement:
        for s in self.statements:
            if s.id == sid:
                return s
        raise IRError(f"kernel '{self.name}' has no statement '{sid}'")

    @property
    def parameters(self) -> frozenset[str]:
        syms = set(self.domain.parameters)
        for a in self.args:
            for extent in a.shape:
                syms |= extent.symbols
        syms |= {a.param for a in self.assumptions}
        return frozenset(syms - set(self.domain.inames))

    @property
    def local_axes(self) -> dict[int, str]:
        return {t.axis: i for i, t in self.iname_tags if t.is_local}

    @property
    def group_axes(self) -> dict[int, str]:
        return {t.axis: i for i, t in self.iname_tags if t.is_group}

    @property
    def sequential_inames(self) -> tuple[str, ...]:
        tags = self.tags
        return tuple(i for i in self.domain.inames if not tags.get(i, InameTag()).is_parallel)

    @property
    def parallel_inames(self) -> tuple[str, ...]:
        tags = self.tags
        return tuple(i for i in self.domain.inames if tags.get(i, InameTag()).is_parallel)

    def modulus(self, param: str) -> int:
        mod = 1
        for a in self.assumptions:
            if a.kind == "mod" and a.param == param:
                mod = _lcm(mod, a.value)
        return mod

    def lower_bound(self, param: str) -> int | None:
        values = [a.value for a in self.assumptions if a.kind == "ge" and a.param == param]
        return max(values) if values else None

    def check_bindings(self, bindings: Mapping[str, int]) -> None:
        """Raise :class:`AssumptionError` unless ``bindings`` satisfy the
        assumptions and bind every parameter."""
        for p in sorted(self.parameters):
            if p not in bindings:
                raise AssumptionError(f"kernel '{self.name}': no value bound for parameter '{p}'")
        for a in self.assumptions:
            if a.param in bindings and not a.holds(bindings[a.param]):
                raise AssumptionError(
                    f"kernel '{self.name}': binding {a.param}={bindings[a.param]} "
                    f"violates assumption; requires assumption {a}")

    @cached_property
    def digest(self) -> str:
        text = json.dumps(kernel_to_json(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class LaunchGeometry:
    work_group_size: tuple[int, ...]
    num_groups: tuple[PiecewisePoly, ...]
    sub_group_size: int = 32

    def __post_init__(self):
        if any(w < 1 for w in self.work_group_size):
            raise IRError("work-group size entries must be >= 1")
        if self.sub_group_size < 1:
            raise IRError("sub-group size must be >= 1")

    @property
    def work_group_total(self) -> int:
        total = 1
        for w in self.work_group_size:
            total *= w
        return total

    def groups_at(self, bindings: Mapping[str, int]) -> tuple[int, ...]:
        return tuple(int(g.evaluate(bindings)) for g in self.num_groups)

    def total_groups(self, bindings: Mapping[str, int]) -> int:
        total = 1
        for g in self.groups_at(bindings):
            total *= g
        return total

    def total_groups_poly(self) -> PiecewisePoly:
        total = PiecewisePoly.from_poly(1)
        for g in self.num_groups:
            total = total * g
        return total

    def with_sub_group_size(self, size: int) -> LaunchGeometry:
        return replace(self, sub_group_size=size)

    def to_json(self) -> dict:
        return {"work_group_size": list(self.work_group_size),
                "num_groups": [str(g) for g in self.num_groups],
                "sub_group_size": self.sub_group_size}


def _lcm(a: int, b: int) -> int:
    from math import gcd
    return a * b // gcd(a, b)

# }}}


# {{{ validation

def arrays_accessed(stmt: Statement) -> Iterator[tuple[Var, str, tuple[str, ...]]]:
    """Yield ``(var, direction, reduction inames)`` for every variable touched."""
    if stmt.lhs is not None:
        yield stmt.lhs, "store", ()
    if stmt.rhs is not None:
        for var, bound in iter_vars(stmt.rhs):
            yield var, "load", bound


def validate_kernel(k: Kernel) -> Kernel:
    problems = []
    dom = k.domain
    inames = set(dom.inames)
    if len(inames) != len(dom.inames):
        problems.append("duplicate iname in domain")
    for pos, name in enumerate(dom.inames):
        lo, hi = dom.bounds[pos]
        for sym in (lo.symbols | hi.symbols) & inames:
            if dom.inames.index(sym) >= pos:
                problems.append(f"bound of '{name}' references non-outer iname '{sym}'")
        if not (lo.is_integral and hi.is_integral):
            for sym, coeff in (lo - hi).terms + lo.terms:
                if sym in inames and coeff.denominator != 1:
                    problems.append(f"bound of '{name}' has fractional iname coefficient")

    names = [a.name for a in k.args]
    if len(set(names)) != len(names):
        problems.append("duplicate variable declaration")
    clash = set(names) & (inames | set(dom.parameters))
    if clash:
        problems.append(f"variable names clash with inames/parameters: {sorted(clash)}")
    for a in k.args:
        if a.address_space == "local":
            for extent in a.shape:
                if not extent.is_constant:
                    problems.append(f"local array '{a.name}' has parametric shape")

    ids = [s.id for s in k.statements]
    if len(set(ids)) != len(ids):
        problems.append("duplicate statement id")
    tags_seen: set[str] = set()
    declared = {a.name: a for a in k.args}
    for s in k.statements:
        if not s.within <= inames:
            problems.append(f"statement '{s.id}' within unknown inames {sorted(s.within - inames)}")
        for dep in s.depends_on:
            if dep not in ids:
                problems.append(f"statement '{s.id}' depends on unknown '{dep}'")
        if s.is_barrier:
            continue
        if s.lhs is None or s.rhs is None:
            problems.append(f"statement '{s.id}' lacks lhs/rhs")
            continue
        red = reduction_inames(s.rhs)
        for r in red:
            if r not in inames:
                problems.append(f"statement '{s.id}' reduces over unknown iname '{r}'")
            if r in s.within:
                problems.append(f"statement '{s.id}' reduces over '{r}' which it is within")
        for var, direction, bound in arrays_accessed(s):
            if var.name not in declared:
                problems.append(f"statement '{s.id}' uses undeclared variable '{var.name}'")
                continue
            decl = declared[var.name]
            if len(var.indices) != len(decl.shape):
                problems.append(f"'{var.name}' indexed with {len(var.indices)} subscripts, "
                                f"declared with {len(decl.shape)} axes")
            allowed = set(s.within) | set(bound) | set(k.parameters)
            for idx in var.indices:
                unknown = idx.symbols - allowed
                if unknown:
                    problems.append(f"statement '{s.id}': subscript {idx} uses "
                                    f"{sorted(unknown)} outside its inames")
            if var.tag is not None:
                if var.tag in tags_seen:
                    problems.append(f"duplicate access tag '{var.tag}'")
                tags_seen.add(var.tag)
        for pred in s.predicates:
            unknown = pred.symbols - set(s.within) - set(k.parameters)
            if unknown:
                problems.append(f"statement '{s.id}': predicate uses {sorted(unknown)}")
    if _has_cycle(k.statements):
        problems.append("dependency graph has a cycle")

    axes: dict[tuple[str, int], str] = {}
    for iname, tag in k.iname_tags:
        if iname not in inames:
            problems.append(f"tag on unknown iname '{iname}'")
        if tag.is_parallel:
            key = (tag.kind, tag.axis)
            if key in axes and axes[key] != iname:
                problems.append(f"axis {tag} used by both '{axes[key]}' and '{iname}'")
            axes[key] = iname
    if problems:
        raise IRError(f"invalid kernel '{k.name}': " + "; ".join(problems))
    return k


def _has_cycle(statements: Iterable[Statement]) -> bool:
    graph = {s.id: set(s.depends_on) for s in statements}
    state: dict[str, int] = {}

    def visit(node) -> bool:
        state[node] = 1
        for dep in graph.get(node, ()):
            if state.get(dep) == 1:
                return True
            if state.get(dep) is None and dep in graph and visit(dep):
                return True
        state[node] = 2
        return False

    return any(state.get(n) is None and visit(n) for n in graph)

# }}}


# {{{ transforms

def split_iname(k: Kernel, iname: str, factor: int, outer_name: str | None = None,
                inner_name: str | None = None, outer_tag: str | None = None,
                inner_tag: str | None = None) -> Kernel:
    """Split ``iname`` into ``outer`` and ``inner`` with
    ``iname = factor*outer + inner + lo``."""
    if iname not in k.domain.inames:
        raise IRError(f"split_iname: unknown iname '{iname}'")
    if k.tag(iname).is_parallel:
        raise IRError(f"split_iname: '{iname}' is tagged {k.tag(iname)}; only sequential inames split")
    if factor < 1:
        raise IRError("split_iname: factor must be a positive integer")
    outer = outer_name or f"{iname}_out"
    inner = inner_name or f"{iname}_in"
    for new in (outer, inner):
        if new in k.domain.inames or k.has_arg(new) or new in k.parameters:
            raise IRError(f"split_iname: name '{new}' already in use")

    lo, hi = k.domain.bound(iname)
    length = hi - lo + 1
    if length.symbols & set(k.domain.inames):
        raise IRError(f"split_iname: trip count of '{iname}' depends on other inames")
    if not _divisible(k, length, factor):
        raise AssumptionError(
            f"split_iname('{iname}', {factor}) requires assumption {length} mod {factor} == 0")

    pos = k.domain.inames.index(iname)
    sub = {iname: AffineExpr.var(outer, factor) + AffineExpr.var(inner) + lo}
    new_inames = k.domain.inames[:pos] + (outer, inner) + k.domain.inames[pos + 1:]
    new_bounds = []
    for name, (blo, bhi) in zip(k.domain.inames, k.domain.bounds):
        if name == iname:
            new_bounds.append((AffineExpr.const(0), length * Fraction(1, factor) - 1))
            new_bounds.append((AffineExpr.const(0), AffineExpr.const(factor - 1)))
        else:
            new_bounds.append((blo.substitute(sub), bhi.substitute(sub)))
    domain = LoopDomain(new_inames, tuple(new_bounds))

    def fix_var(v: Var) -> Var:
        return replace(v, indices=tuple(i.substitute(sub) for i in v.indices))

    def fix_red(names):
        out = []
        for n in names:
            out.extend((outer, inner) if n == iname else (n,))
        return tuple(out)

    stmts = []
    for s in k.statements:
        within = s.within
        if iname in within:
            within = (within - {iname}) | {outer, inner}
        stmts.append(replace(
            s, within=frozenset(within),
            lhs=fix_var(s.lhs) if s.lhs is not None else None,
            rhs=map_expr(s.rhs, fix_var, fix_red) if s.rhs is not None else None,
            predicates=tuple(p.substitute(sub) for p in s.predicates)))
    result = replace(k, domain=domain, statements=tuple(stmts))
    tags = {}
    if outer_tag:
        tags[outer] = outer_tag
    if inner_tag:
        tags[inner] = inner_tag
    if tags:
        result = tag_inames(result, tags)
    return validate_kernel(result)


def _divisible(k: Kernel, expr: AffineExpr, factor: int) -> bool:
    if expr.constant.denominator != 1 or expr.constant.numerator % factor:
        return False
    for sym, coeff in expr.terms:
        if coeff.denominator != 1:
            return False
        if (coeff.numerator * k.modulus(sym)) % factor:
            return False
    return True


def tag_inames(k: Kernel, tags: Mapping[str, InameTag | str]) -> Kernel:
    if not tags:
        return k
    current = k.tags
    for iname, tag in tags.items():
        if iname not in k.domain.inames:
            raise IRError(f"tag_inames: unknown iname '{iname}'")
        tag = InameTag.parse(tag) if isinstance(tag, str) else tag
        if tag.is_local and not k.domain.trip_count(iname).is_constant:
            raise IRError(f"tag_inames: local iname '{iname}' needs a parameter-free "
                          f"trip count, got {k.domain.trip_count(iname)}")
        if tag.kind == "seq":
            current.pop(iname, None)
        else:
            current[iname] = tag
    seen: dict[tuple[str, int], str] = {}
    for iname, tag in current.items():
        key = (tag.kind, tag.axis)
        if key in seen:
            raise IRError(f"tag_inames: axis {tag} assigned to both '{seen[key]}' and '{iname}'")
        seen[key] = iname
    ordered = tuple((i, current[i]) for i in k.domain.inames if i in current)
    return validate_kernel(replace(k, iname_tags=ordered))


def parse_assumptions(text: str) -> list[Assumption]:
    """Parse ``"n mod 16 == 0 and n >= 1"``."""
    out = []
    for part in text.split(" and "):
        words = part.split()
        if len(words) == 5 and words[1] == "mod" and words[3] == "==" and words[4] == "0":
            out.append(Assumption("mod", words[0], int(words[2])))
        elif len(words) == 3 and words[1] == ">=":
            out.append(Assumption("ge", words[0], int(words[2])))
        elif len(words) == 3 and words[1] == ">":
            out.append(Assumption("ge", words[0], int(words[2]) + 1))
        else:
            raise IRError(f"cannot parse assumption '{part.strip()}' "
                          "(expected 'p mod k == 0' or 'p >= c')")
    return out


def assume(k: Kernel, a: Assumption | str) -> Kernel:
    items = parse_assumptions(a) if isinstance(a, str) else [a]
    current = list(k.assumptions)
    for item in items:
        if item.param not in k.parameters:
            raise IRError(f"assume: '{item.param}' is not a parameter of '{k.name}'")
        if item not in current:
            current.append(item)
    return replace(k, assumptions=tuple(sorted(current)))


def fix_parameters(k: Kernel, bindings: Mapping[str, int]) -> Kernel:
    params = k.parameters
    for p, value in bindings.items():
        if p not in params:
            raise IRError(f"fix_parameters: '{p}' is not a parameter of '{k.name}'")
        for a in k.assumptions:
            if a.param == p and not a.holds(value):
                raise AssumptionError(f"fix_parameters: {p}={value} contradicts assumption {a}")
    sub = {p: AffineExpr.const(v) for p, v in bindings.items()}

    def fix(e: AffineExpr) -> AffineExpr:
        out = e.substitute(sub)
        if out.is_constant and out.constant.denominator != 1:
            raise AssumptionError(f"fix_parameters: bound {e} is not integral under {dict(bindings)}")
        return out

    domain = LoopDomain(k.domain.inames, tuple((fix(lo), fix(hi)) for lo, hi in k.domain.bounds))
    for name, (lo, hi) in zip(domain.inames, domain.bounds):
        if lo.is_constant and hi.is_constant and hi.constant - lo.constant + 1 < 0:
            raise AssumptionError(f"fix_parameters: '{name}' gets a negative trip count")

    def fix_var(v: Var) -> Var:
        return replace(v, indices=tuple(fix(i) for i in v.indices))

    stmts = tuple(replace(
        s, lhs=fix_var(s.lhs) if s.lhs is not None else None,
        rhs=map_expr(s.rhs, fix_var) if s.rhs is not None else None,
        predicates=tuple(fix(p) for p in s.predicates)) for s in k.statements)
    args = tuple(replace(a, shape=tuple(fix(e) for e in a.shape)) for a in k.args)
    kept = tuple(a for a in k.assumptions if a.param not in bindings)
    return validate_kernel(replace(k, domain=domain, statements=stmts, args=args,
                                   assumptions=kept))


def launch_geometry(k: Kernel, sub_group_size: int = 32) -> LaunchGeometry:
    local, group = k.local_axes, k.group_axes
    if not local and not group and not k.single_work_item and k.parameters:
        raise IRError(f"kernel '{k.name}' has no parallel inames; tag inames or mark it "
                      "single_work_item")
    for kind, axes in (("l", local), ("g", group)):
        if sorted(axes) != list(range(len(axes))):
            raise IRError(f"{kind}-axes of '{k.name}' are not contiguous from 0: {sorted(axes)}")
    wg = []
    for axis in range(len(local)):
        count = k.domain.trip_count(local[axis])
        if not count.is_constant or count.constant.denominator != 1:
            raise IRError(f"local iname '{local[axis]}' has non-constant trip count {count}")
        wg.append(int(count.constant))
    groups = []
    for axis in range(len(group)):
        name = group[axis]
        if k.domain.deps(name):
            raise IRError(f"group iname '{name}' has bounds depending on other inames")
        count = k.domain.trip_count(name).to_poly()
        guards = [Guard(count, "ge")]
        groups.append(PiecewisePoly.from_poly(count, guards).simplify(k.assumptions))
    return LaunchGeometry(tuple(wg) or (1,), tuple(groups) or (PiecewisePoly.from_poly(1),),
                          sub_group_size)

# }}}


# {{{ work removal

TGT_READ = "tgt_read"
TGT_READ_DEST = "tgt_read_dest"


def remove_work(k: Kernel, remove_vars: Iterable[str] = (), remove_tagged: Iterable[str] = (),
                allow_empty: bool = True) -> Kernel:
    """Strip arithmetic and local-memory work, keeping only the surviving
    global accesses.

    Every surviving global load ``g`` becomes ``tgt_read = tgt_read + g``;
    every surviving global store becomes ``g = tgt_read``; everything else
    is dropped. If no global store survives, ``tgt_read`` is written to a new
    array ``tgt_read_dest`` with one entry per work-item (``lid(0)`` fastest).
    A statement with a surviving load and a removed store keeps the load
    only.
    """
    remove_vars = set(remove_vars)
    remove_tagged = set(remove_tagged)
    names = {a.name for a in k.args}
    tags_present = {v.tag for s in k.statements for v, _, _ in arrays_accessed(s) if v.tag}
    for v in remove_vars - names:
        raise IRError(f"remove_work: unknown variable '{v}'")
    for t in remove_tagged - tags_present:
        raise IRError(f"remove_work: unknown access tag '{t}'")
    for name in (TGT_READ, TGT_READ_DEST):
        if name in names:
            raise IRError(f"remove_work: kernel already declares '{name}'")

    def is_global(v: Var) -> bool:
        return k.has_arg(v.name) and k.arg(v.name).address_space == "global"

    def removed(v: Var) -> bool:
        return v.name in remove_vars or (v.tag is not None and v.tag in remove_tagged)

    parallel = frozenset(k.parallel_inames)
    init_id = f"{TGT_READ}_init"
    new_stmts: list[Statement] = []
    emitted: dict[str, list[str]] = {}
    surviving_dtypes: list[str] = []
    stored = False
    for s in k.statements:
        if s.is_barrier or s.rhs is None:
            continue
        deps = frozenset(s.depends_on | {init_id})
        start = len(new_stmts)
        counter = 0
        for var, bound in iter_vars(s.rhs):
            if not is_global(var) or removed(var):
                continue
            surviving_dtypes.append(k.arg(var.name).dtype)
            within = frozenset(s.within | set(bound))
            new_stmts.append(Statement(
                id=f"{s.id}_load{counter}", lhs=Var(TGT_READ),
                rhs=BinOp("+", Var(TGT_READ), var), within=within, depends_on=deps,
                predicates=s.predicates, counted=False))
            counter += 1
        if s.lhs is not None and is_global(s.lhs) and not removed(s.lhs):
            new_stmts.append(Statement(
                id=f"{s.id}_store", lhs=s.lhs, rhs=Var(TGT_READ), within=s.within,
                depends_on=deps, predicates=s.predicates))
            stored = True
        emitted[s.id] = [t.id for t in new_stmts[start:]]

    # dependencies on dropped statements pass through to what they depended on
    originals = {s.id: s for s in k.statements}
    memo: dict[str, frozenset[str]] = {}

    def resolve(sid: str, seen: frozenset[str] = frozenset()) -> frozenset[str]:
        if sid in memo:
            return memo[sid]
        if emitted.get(sid):
            out = frozenset(emitted[sid])
        elif sid in seen or sid not in originals:
            out = frozenset()
        else:
            out = frozenset().union(*(resolve(d, seen | {sid})
                                      for d in originals[sid].depends_on))
        memo[sid] = out
        return out

    new_stmts = [replace(t, depends_on=frozenset({init_id}).union(
        *(resolve(d) for d in t.depends_on if d != init_id))) for t in new_stmts]

    if not new_stmts:
        if not allow_empty and k.statements:
            raise IRError("remove_work: every access was removed and empty kernels are forbidden")
        body: tuple[Statement, ...] = ()
        return validate_kernel(replace(k, statements=body, args=tuple(
            a for a in k.args if a.address_space == "global"), name=f"{k.name}_rw"))

    dtypes = set(surviving_dtypes)
    if len(dtypes) > 1 and {"float32", "float64"} <= dtypes:
        raise IRError("remove_work: surviving loads mix float32 and float64")
    dtype = "float64" if "float64" in dtypes else ("float32" if "float32" in dtypes or not dtypes
                                                   else "int32")

    init = Statement(id=init_id, lhs=Var(TGT_READ), rhs=Const(0), within=parallel)
    args = [a for a in k.args if a.address_space == "global"]
    args.append(ArgDecl(TGT_READ, dtype, (), "private"))
    stmts = [init] + new_stmts
    if not stored:
        dest_shape, dest_index = _work_item_layout(k)
        args.append(ArgDecl(TGT_READ_DEST, dtype, dest_shape, "global"))
        stmts.append(Statement(
            id=f"{TGT_READ_DEST}_store", lhs=Var(TGT_READ_DEST, dest_index),
            rhs=Var(TGT_READ), within=parallel,
            depends_on=frozenset(s.id for s in stmts)))
    used = {v.name for s in stmts for v, _, _ in arrays_accessed(s)}
    args = [a for a in args if a.name in used]
    return validate_kernel(replace(k, statements=tuple(stmts), args=tuple(args),
                                   name=f"{k.name}_rw"))


def _work_item_layout(k: Kernel) -> tuple[tuple[AffineExpr, ...], tuple[AffineExpr, ...]]:
    """Shape and subscript giving each work-item its own entry, laid out with
    ``lid(0)`` fastest: axis ``a`` is indexed ``L_a*gid(a) + lid(a)``."""
    local, group = k.local_axes, k.group_axes
    naxes = max([len(local), len(group)]) or 0
    if naxes == 0:
        return (AffineExpr.const(1),), (AffineExpr.const(0),)
    shape, index = [], []
    for axis in reversed(range(naxes)):
        extent = AffineExpr.const(1)
        sub = AffineExpr.const(0)
        lsize = AffineExpr.const(1)
        if axis in local:
            lo, _ = k.domain.bound(local[axis])
            lsize = k.domain.trip_count(local[axis])
            sub = sub + AffineExpr.var(local[axis]) - lo
            extent = lsize
        if axis in group:
            lo, _ = k.domain.bound(group[axis])
            gcount = k.domain.trip_count(group[axis])
            sub = sub + (AffineExpr.var(group[axis]) - lo) * lsize.constant
            extent = gcount * lsize.constant
        shape.append(extent)
        index.append(sub)
    return tuple(shape), tuple(index)

# }}}


# {{{ JSON

def kernel_to_json(k: Kernel) -> dict:
    from perfseer.kernel_lang import print_domain, print_expr, print_var
    return {
        "schema": KERNEL_SCHEMA,
        "name": k.name,
        "domain": print_domain(k.domain),
        "statements": [{
            "id": s.id,
            "barrier": s.is_barrier,
            "lhs": print_var(s.lhs) if s.lhs is not None else None,
            "rhs": print_expr(s.rhs) if s.rhs is not None else None,
            "within": list(k.domain.ordered(s.within)),
            "depends_on": sorted(s.depends_on),
            "predicates": [str(p) for p in s.predicates],
            "counted": s.counted,
        } for s in k.statements],
        "args": [{"name": a.name, "dtype": a.dtype, "shape": [str(e) for e in a.shape],
                  "address_space": a.address_space} for a in k.args],
        "assumptions": [str(a) for a in k.assumptions],
        "tags": {i: str(t) for i, t in k.iname_tags},
        "single_work_item": k.single_work_item,
    }


def kernel_from_json(doc: dict) -> Kernel:
    from perfseer.kernel_lang import parse_affine, parse_domain, parse_expr, parse_var
    if doc.get("schema") != KERNEL_SCHEMA:
        raise IRError(f"unsupported kernel schema {doc.get('schema')!r}; expected {KERNEL_SCHEMA}")
    domain = parse_domain(doc["domain"])
    stmts = []
    for s in doc["statements"]:
        stmts.append(Statement(
            id=s["id"],
            lhs=parse_var(s["lhs"]) if s.get("lhs") else None,
            rhs=parse_expr(s["rhs"]) if s.get("rhs") else None,
            within=frozenset(s["within"]),
            depends_on=frozenset(s.get("depends_on", ())),
            is_barrier=bool(s.get("barrier", False)),
            predicates=tuple(parse_affine(p) for p in s.get("predicates", ())),
            counted=bool(s.get("counted", True))))
    args = tuple(ArgDecl(a["name"], a["dtype"], tuple(parse_affine(e) for e in a["shape"]),
                         a.get("address_space", "global")) for a in doc["args"])
    assumptions = []
    for text in doc.get("assumptions", ()):
        assumptions.extend(parse_assumptions(text))
    tags = tuple((i, InameTag.parse(doc["tags"][i])) for i in domain.inames
                 if i in doc.get("tags", {}))
    return validate_kernel(Kernel(domain, tuple(stmts), args, tuple(sorted(assumptions)), tags,
                                  doc.get("name", "kernel"),
                                  bool(doc.get("single_work_item", False))))


def save_kernel(k: Kernel, path) -> None:
    with open(path, "w") as f:
        json.dump(kernel_to_json(k), f, indent=2, sort_keys=True)
        f.write("\n")


def load_kernel(path) -> Kernel:
    path = str(path)
    with open(path) as f:
        text = f.read()
    if path.endswith(".json"):
        return kernel_from_json(json.loads(text))
    from perfseer.kernel_lang import parse_kernel_file
    return parse_kernel_file(text)

# }}}
