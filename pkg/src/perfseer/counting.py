"""Symbolic operation, access and synchronization counting.

Counts are exact :class:`~perfseer.poly.PiecewisePoly` values in the size
parameters. Point counts of nested-affine domains come from iterated
closed-form power sums; :func:`brute_force_count` is the enumeration oracle
every symbolic count is tested against.
"""

from __future__ import annotations

import itertools
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from perfseer.affine import AffineExpr
from perfseer.errors import CountingError
from perfseer.ir import (
    DTYPE_BYTES, Assumption, BinOp, Const, Expr, Kernel, LoopDomain, Neg, Reduce, Statement,
    Var, expr_dtype, iter_vars, launch_geometry,
)
from perfseer.poly import (
    Guard, PiecewisePoly, Poly, UnguardedEvaluation, _clean_guards, exact_divide, sum_over,
)

WORK_ITEM = "work_item"
SUB_GROUP = "sub_group"
WORK_GROUP = "work_group"
KERNEL = "kernel"
GRANULARITIES = (WORK_ITEM, SUB_GROUP, WORK_GROUP, KERNEL)

OP_NAMES = ("add", "mul", "madd", "div", "pow")
SYNC_KINDS = ("barrier_local", "kernel_launch", "group_launch")

BRUTE_FORCE_LIMIT = 10 ** 6


class FootprintError(CountingError):
    """Raised when an index image is not a union of affine progressions."""


# instrumentation: number of domain projections performed (see count_points)
_projections = 0
_projections_lock = threading.Lock()


def projection_count() -> int:
    return _projections


# {{{ keys

@dataclass(frozen=True, order=True)
class OpKind:
    dtype: str
    op: str
    granularity: str = SUB_GROUP

    def __str__(self) -> str:
        return f"op_{self.dtype}_{self.op}"


@dataclass(frozen=True)
class SyncKind:
    kind: str

    def __post_init__(self):
        if self.kind not in SYNC_KINDS:
            raise CountingError(f"unknown sync kind '{self.kind}'")

    @property
    def granularity(self) -> str:
        # sync counts are already per work-item (barriers) or per launch
        return KERNEL

    def __str__(self) -> str:
        return f"sync_{self.kind}"


@dataclass(frozen=True)
class Ratio:
    """Quotient of two counts that is not itself a polynomial."""

    num: PiecewisePoly
    den: PiecewisePoly

    def evaluate(self, bindings: Mapping[str, object]) -> Fraction:
        den = self.den.evaluate(bindings)
        if den == 0:
            raise CountingError(f"AFR denominator {self.den} vanishes at {dict(bindings)}")
        return self.num.evaluate(bindings) / den

    def __str__(self) -> str:
        return f"({self.num})/({self.den})"


def _ratio(num: PiecewisePoly, den: PiecewisePoly):
    pieces = []
    for g1, p1 in num.pieces:
        for g2, p2 in den.pieces:
            if not p2:
                return Ratio(num, den)
            q = exact_divide(p1, p2)
            if q is None:
                return Ratio(num, den)
            pieces.append((g1 + g2, q))
    return PiecewisePoly(tuple((_clean_guards(g), q) for g, q in pieces))


@dataclass(frozen=True)
class AccessPattern:
    """Classification of one array access.

    Strides are polynomials in the parameters (row-major flattening of
    multi-dimensional arrays multiplies subscript coefficients by extents).
    """

    mem_type: str
    direction: str
    dtype: str
    array: str
    lstrides: tuple[tuple[int, Poly], ...]
    gstrides: tuple[tuple[int, Poly], ...]
    loop_stride: Poly | None = None
    afr: PiecewisePoly | Ratio | None = None
    tag: str | None = None
    granularity: str = WORK_ITEM

    @property
    def dtype_bytes(self) -> int:
        return DTYPE_BYTES[self.dtype]

    def lstride(self, axis: int) -> Poly | None:
        return dict(self.lstrides).get(axis)

    def gstride(self, axis: int) -> Poly | None:
        return dict(self.gstrides).get(axis)

    def at(self, bindings: Mapping[str, object]) -> AccessPattern:
        """This pattern with every symbolic field evaluated at ``bindings``."""
        def ev(p):
            return Poly.const(p.evaluate(bindings))
        afr = self.afr
        if afr is not None:
            try:
                afr = PiecewisePoly.from_poly(afr.evaluate(bindings))
            except UnguardedEvaluation:
                afr = None
        return replace(self, lstrides=tuple((a, ev(s)) for a, s in self.lstrides),
                       gstrides=tuple((a, ev(s)) for a, s in self.gstrides),
                       loop_stride=None if self.loop_stride is None else ev(self.loop_stride),
                       afr=afr)

    def __str__(self) -> str:
        def fmt(strides):
            return "{" + ";".join(f"{a}:{s}" for a, s in strides) + "}"
        parts = [f"{self.mem_type}", self.dtype, self.direction, self.array]
        if self.tag:
            parts.insert(0, f"tag:{self.tag}")
        parts.append(f"lstrides:{fmt(self.lstrides)}")
        parts.append(f"gstrides:{fmt(self.gstrides)}")
        if self.loop_stride is not None:
            parts.append(f"loop_stride:{self.loop_stride}")
        parts.append(f"afr:{self.afr}")
        parts.append(self.granularity)
        return "mem_" + "_".join(parts)

    def to_json(self) -> dict:
        return {"mem_type": self.mem_type, "direction": self.direction, "dtype": self.dtype,
                "array": self.array, "tag": self.tag, "granularity": self.granularity,
                "lstrides": {str(a): str(s) for a, s in self.lstrides},
                "gstrides": {str(a): str(s) for a, s in self.gstrides},
                "loop_stride": None if self.loop_stride is None else str(self.loop_stride),
                "afr": None if self.afr is None else str(self.afr)}


def granularity_of(key) -> str:
    return key.granularity


class CountMap:
    """Mapping of count keys to symbolic (or, after evaluation, numeric)
    counts. Values are raw totals at work-item level; the key's
    granularity label tells feature evaluation how to divide them."""

    def __init__(self, entries: Mapping | None = None):
        self.entries: dict = {}
        for key, value in (entries or {}).items():
            self.add(key, value)

    def add(self, key, value) -> None:
        if key in self.entries:
            self.entries[key] = self.entries[key] + value
        else:
            self.entries[key] = value

    def __add__(self, other: CountMap) -> CountMap:
        out = CountMap(self.entries)
        for key, value in other.entries.items():
            out.add(key, value)
        return out

    def scale(self, factor) -> CountMap:
        return CountMap({k: v * factor for k, v in self.entries.items()})

    def __getitem__(self, key):
        return self.entries[key]

    def get(self, key, default=None):
        return self.entries.get(key, default)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def keys(self):
        return self.entries.keys()

    def filter(self, pred) -> CountMap:
        return CountMap({k: v for k, v in self.entries.items() if pred(k)})

    def evaluate(self, bindings: Mapping[str, object]) -> dict:
        """Numeric counts with access keys concretized; keys that become
        equal after evaluation merge."""
        out: dict = {}
        for key, value in self.entries.items():
            number = value.evaluate(bindings) if hasattr(value, "evaluate") else Fraction(value)
            concrete = key.at(bindings) if isinstance(key, AccessPattern) else key
            out[concrete] = out.get(concrete, 0) + number
        return {k: v for k, v in out.items()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountMap):
            return NotImplemented
        return self.entries == other.entries

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v}" for k, v in self.entries.items())
        return f"CountMap({{{body}}})"

# }}}


# {{{ point counting

def _modulus(assumptions: Iterable[Assumption], param: str) -> int:
    from math import gcd
    mod = 1
    for a in assumptions:
        if a.kind == "mod" and a.param == param:
            mod = mod * a.value // gcd(mod, a.value)
    return mod


def _check_integral(expr: AffineExpr, assumptions: Sequence[Assumption], iname: str) -> None:
    if expr.is_integral:
        return
    if expr.constant.denominator == 1 and all(
            (c * _modulus(assumptions, s)).denominator == 1 for s, c in expr.terms):
        return
    raise CountingError(f"bound {expr} of '{iname}' needs divisibility assumption")


def _min_over_outer(expr: AffineExpr, domain: LoopDomain, subset: frozenset[str]) -> AffineExpr:
    """Smallest value of ``expr`` over the (nonempty) outer nest."""
    order = {name: k for k, name in enumerate(domain.inames)}
    for _ in range(len(domain.inames) + 1):
        present = [s for s in expr.symbols if s in order]
        if not present:
            return expr
        inner = max(present, key=order.__getitem__)
        lo, hi = domain.bound(inner)
        expr = expr.substitute({inner: lo if expr.coeff(inner) > 0 else hi})
    raise CountingError(f"cannot bound {expr} over the loop nest")


def count_points(domain: LoopDomain, subset: Iterable[str] | None = None,
                 assumptions: Sequence[Assumption] = ()) -> PiecewisePoly:
    """Number of integer points of ``domain`` projected onto ``subset``.

    Summation runs innermost-out with closed-form power sums. Each summed
    range contributes a guard stating that its trip count is nonnegative
    everywhere in the outer nest.
    """
    global _projections
    with _projections_lock:
        _projections += 1
    subset = frozenset(domain.inames if subset is None else subset)
    unknown = subset - set(domain.inames)
    if unknown:
        raise CountingError(f"count_points: unknown inames {sorted(unknown)}")
    if domain.closure(subset) != subset:
        missing = sorted(domain.closure(subset) - subset)
        raise CountingError(f"count_points: iname subset is not nesting-closed "
                            f"(bounds reference {missing})")
    assumptions = tuple(assumptions)
    names = domain.ordered(subset)
    result = Poly.const(1)
    guards = []
    for name in reversed(names):
        lo, hi = domain.bound(name)
        _check_integral(lo, assumptions, name)
        _check_integral(hi, assumptions, name)
        result = sum_over(result, name, lo.to_poly(), hi.to_poly())
        trip = _min_over_outer(hi - lo + 1, domain, subset)
        guards.append(Guard(trip.to_poly(), "ge"))
    return PiecewisePoly.from_poly(result, guards).simplify(assumptions)


def statement_domain(k: Kernel, s: Statement) -> LoopDomain:
    """The kernel domain with bounds tightened by ``s``'s predicates."""
    if not s.predicates:
        return k.domain
    bounds = dict(zip(k.domain.inames, k.domain.bounds))
    order = {name: i for i, name in enumerate(k.domain.inames)}
    for pred in s.predicates:
        present = [x for x in pred.symbols if x in order]
        if not present:
            raise CountingError(f"statement '{s.id}': predicate {pred} >= 0 has no iname")
        name = max(present, key=order.__getitem__)
        coeff = pred.coeff(name)
        if abs(coeff) != 1:
            raise CountingError(f"statement '{s.id}': predicate {pred} >= 0 needs a unit "
                                f"coefficient on '{name}'")
        rest = pred - AffineExpr.var(name, coeff)
        lo, hi = bounds[name]
        if coeff > 0:
            new, old = -rest, lo
            diff = new - old
        else:
            new, old = rest, hi
            diff = old - new
        if not diff.is_constant:
            raise CountingError(f"statement '{s.id}': cannot compare predicate bound {new} "
                                f"with {old} for '{name}'")
        if diff.constant >= 0:
            bounds[name] = (new, hi) if coeff > 0 else (lo, new)
    return LoopDomain(k.domain.inames, tuple(bounds[n] for n in k.domain.inames))

# }}}


# {{{ operation counting

def _op_dtype(e: Expr, dtypes: Mapping[str, str], default: str) -> str:
    return expr_dtype(e, dtypes) or default


def expr_ops(e: Expr, dtypes: Mapping[str, str], default: str,
             bound: tuple[str, ...] = ()) -> Iterator[tuple[str, str, tuple[str, ...]]]:
    """Yield ``(dtype, op, enclosing reduction inames)`` per arithmetic node.

    At each ``+``/``-`` a multiply operand is fused into one ``madd``
    (preferring the right operand); negation counts as a multiply.
    """
    if isinstance(e, (Const, Var)):
        return
    if isinstance(e, Neg):
        yield _op_dtype(e, dtypes, default), "mul", bound
        yield from expr_ops(e.operand, dtypes, default, bound)
        return
    if isinstance(e, Reduce):
        inner = bound + e.inames
        body = e.body
        dtype = _op_dtype(body, dtypes, default)
        if isinstance(body, BinOp) and body.op == "*":
            yield dtype, "madd", inner
            yield from expr_ops(body.left, dtypes, default, inner)
            yield from expr_ops(body.right, dtypes, default, inner)
        else:
            yield dtype, "add", inner
            yield from expr_ops(body, dtypes, default, inner)
        return
    dtype = _op_dtype(e, dtypes, default)
    if e.op in ("+", "-"):
        for fused, other in ((e.right, e.left), (e.left, e.right)):
            if isinstance(fused, BinOp) and fused.op == "*":
                yield dtype, "madd", bound
                yield from expr_ops(fused.left, dtypes, default, bound)
                yield from expr_ops(fused.right, dtypes, default, bound)
                yield from expr_ops(other, dtypes, default, bound)
                return
        yield dtype, "add", bound
    elif e.op == "*":
        yield dtype, "mul", bound
    else:
        yield dtype, "div", bound
    yield from expr_ops(e.left, dtypes, default, bound)
    yield from expr_ops(e.right, dtypes, default, bound)


def statement_ops(k: Kernel, s: Statement) -> Counter:
    """Per-execution op tally ``{(dtype, op, reduction inames): n}``."""
    if s.is_barrier or s.rhs is None or not s.counted:
        return Counter()
    dtypes = {a.name: a.dtype for a in k.args}
    default = dtypes.get(s.lhs.name, "float32")
    return Counter(expr_ops(s.rhs, dtypes, default))


def _iteration_set(k: Kernel, s: Statement, bound: Iterable[str]) -> frozenset[str]:
    inames = frozenset(s.within) | frozenset(bound)
    closed = k.domain.closure(inames)
    if closed != inames:
        raise CountingError(f"statement '{s.id}': inames {sorted(inames)} are not "
                            f"nesting-closed (missing {sorted(closed - inames)})")
    return inames


def _count_ops_only(k: Kernel, statements: Iterable[Statement]) -> CountMap:
    out = CountMap()
    for s in statements:
        ops = statement_ops(k, s)
        if not ops:
            continue
        dom = statement_domain(k, s)
        for (dtype, op, bound), n in sorted(ops.items()):
            pts = count_points(dom, _iteration_set(k, s, bound), k.assumptions)
            out.add(OpKind(dtype, op, SUB_GROUP), pts * n)
    return out


_cache: dict = {}


def clear_cache() -> None:
    _cache.clear()


def _cached(k: Kernel, what: str, fn):
    key = (k.digest, what)
    try:
        return _cache[key]
    except KeyError:
        value = fn()
        _cache[key] = value
        return value


def count_ops(k: Kernel) -> CountMap:
    """Arithmetic and memory-access counts of ``k`` (cached per kernel)."""
    def compute():
        result = _count_ops_only(k, k.statements)
        for pattern, count in classify_accesses(k):
            result.add(pattern, count)
        return result
    return _cached(k, "ops", compute)


def count_kernel(k: Kernel) -> CountMap:
    """Everything: :func:`count_ops` plus :func:`count_sync`."""
    return _cached(k, "all", lambda: count_ops(k) + count_sync(k))

# }}}


# {{{ access classification

def flat_address(k: Kernel, var: Var) -> Poly:
    decl = k.arg(var.name)
    if len(var.indices) != len(decl.shape):
        raise CountingError(f"'{var.name}' has {len(decl.shape)} axes but is indexed with "
                            f"{len(var.indices)} subscripts")
    total = Poly()
    for idx, stride in zip(var.indices, decl.flat_strides()):
        total = total + idx.to_poly() * stride
    return total


def _coefficient(addr: Poly, iname: str) -> Poly:
    parts = addr.coefficients_in(iname)
    if any(power > 1 for power in parts):
        raise CountingError(f"address {addr} is not affine in '{iname}'")
    return parts.get(1, Poly())


def _accesses(k: Kernel, statements: Iterable[Statement] | None = None
              ) -> Iterator[tuple[Statement, Var, str, tuple[str, ...]]]:
    for s in (k.statements if statements is None else statements):
        if s.is_barrier:
            continue
        if s.lhs is not None:
            yield s, s.lhs, "store", ()
        if s.rhs is None:
            continue
        for var, bound in iter_vars(s.rhs):
            yield s, var, "load", bound


def _is_counted_array(k: Kernel, var: Var) -> bool:
    return k.has_arg(var.name) and k.arg(var.name).address_space in ("global", "local")


def _pattern_shape(k: Kernel, s: Statement, var: Var, direction: str, bound: tuple[str, ...]):
    decl = k.arg(var.name)
    addr = flat_address(k, var)
    tags = k.tags
    local, group = k.local_axes, k.group_axes
    lstrides = tuple((a, _coefficient(addr, local[a])) for a in sorted(local))
    gstrides = tuple((a, _coefficient(addr, group[a])) for a in sorted(group))
    seq = [i for i in k.domain.inames
           if (i in s.within or i in bound) and not (i in tags and tags[i].is_parallel)]
    loop_stride = _coefficient(addr, seq[-1]) if seq else None
    if decl.address_space == "local":
        gran = SUB_GROUP
    else:
        lid0 = dict(lstrides).get(0)
        gran = SUB_GROUP if lid0 is not None and not lid0 else WORK_ITEM
    return AccessPattern(decl.address_space, direction, decl.dtype, var.name, lstrides,
                         gstrides, loop_stride, None, var.tag, gran)


def classify_accesses(k: Kernel) -> list[tuple[AccessPattern, PiecewisePoly]]:
    """One ``(pattern, count)`` per global/local array access, in program
    order. AFR is the access's count over the size of its own index image,
    or ``None`` when that image is not a union of affine progressions."""
    out = []
    for s, var, direction, bound in _accesses(k):
        if not _is_counted_array(k, var):
            continue
        pattern = _pattern_shape(k, s, var, direction, bound)
        dom = statement_domain(k, s)
        count = count_points(dom, _iteration_set(k, s, bound), k.assumptions)
        try:
            fp = _union_size([_image(k, s, var)], k.assumptions)
            fp = (fp * _nonempty_guards(dom, _iteration_set(k, s, bound))).simplify(k.assumptions)
            afr = _ratio(count, fp)
        except FootprintError:
            afr = None
        out.append((replace(pattern, afr=afr), count))
    return out

# }}}


# {{{ footprints

@dataclass(frozen=True)
class _AxisImage:
    base: AffineExpr      # smallest value, affine in params
    step: Fraction
    length: Poly          # number of progression members


def _nonempty_guards(dom: LoopDomain, inames: Iterable[str]) -> PiecewisePoly:
    """One, guarded by every range in ``inames`` being nonempty throughout the
    outer nest. Only then is an access's image the box of its own inames:
    an empty inner range would hide the outer points that enclose it."""
    guards = []
    for name in inames:
        lo, hi = dom.bound(name)
        guards.append(Guard(_min_over_outer(hi - lo, dom, frozenset()).to_poly(), "ge"))
    return PiecewisePoly.from_poly(Poly.const(1), guards)


def _image(k: Kernel, s: Statement, var: Var) -> tuple[_AxisImage, ...]:
    dom = statement_domain(k, s)
    inames = set(dom.inames)
    seen: dict[str, int] = {}
    axes = []
    for d, idx in enumerate(var.indices):
        terms = []
        base = AffineExpr.const(idx.constant)
        for sym, coeff in idx.terms:
            if sym not in inames:
                base = base + AffineExpr.var(sym, coeff)
                continue
            if sym in seen:
                raise FootprintError(f"iname '{sym}' indexes both axis {seen[sym]} and {d} "
                                     f"of '{var.name}'")
            seen[sym] = d
            lo, hi = dom.bound(sym)
            if (lo.symbols | hi.symbols) & inames:
                raise FootprintError(f"bounds of '{sym}' depend on other inames")
            trip = hi - lo + 1
            base = base + lo * coeff
            if coeff < 0:
                base = base + (trip - 1) * coeff
            terms.append((abs(coeff), trip.to_poly()))
        terms.sort(key=lambda t: (t[0], str(t[1])))
        if not terms:
            axes.append(_AxisImage(base, Fraction(1), Poly.const(1)))
            continue
        step, length = terms[0]
        for coeff, trip in terms[1:]:
            ratio = coeff / step
            if ratio.denominator != 1 or not length.is_constant:
                raise FootprintError(f"axis {d} of '{var.name}' is not an affine progression")
            if ratio > length.constant_value:
                raise FootprintError(f"axis {d} of '{var.name}' has gaps")
            length = trip * ratio + (length - ratio)
        axes.append(_AxisImage(base, step, length))
    return tuple(axes)


def _union_size(images: Sequence[tuple[_AxisImage, ...]],
                assumptions: Sequence[Assumption] = ()) -> PiecewisePoly:
    images = list(dict.fromkeys(images))
    if not images:
        return PiecewisePoly.zero()
    ndim = len(images[0])
    guards = []
    # per axis: breakpoints and, per image, the covered cell range
    axis_cells: list[list[Poly]] = []
    coverage: list[list[range]] = [[] for _ in images]
    for d in range(ndim):
        first = images[0][d]
        symbolic = first.base - first.base.constant
        offsets = []
        for img in images:
            ax = img[d]
            if ax.step != first.step or ax.length != first.length or \
                    ax.base - ax.base.constant != symbolic:
                raise FootprintError(f"accesses disagree on the shape of axis {d}")
            off = (ax.base.constant - first.base.constant) / ax.step
            if off.denominator != 1:
                raise FootprintError(f"axis {d}: offsets are not multiples of the step")
            offsets.append(int(off))
        length = first.length
        distinct = sorted(set(offsets))
        spread = distinct[-1] - distinct[0]
        if spread:
            guards.append(Guard(length - spread, "ge"))
        if length.is_constant:
            n = length.constant_value
            points = sorted(set(distinct) | {o + n for o in distinct})
            points_poly = [Poly.const(p) for p in points]
            index = {p: i for i, p in enumerate(points)}
            for j, o in enumerate(offsets):
                coverage[j].append(range(index[o], index[o + n]))
        else:
            points_poly = [Poly.const(o) for o in distinct] + [length + o for o in distinct]
            r = len(distinct)
            for j, o in enumerate(offsets):
                start = distinct.index(o)
                coverage[j].append(range(start, r + start))
        axis_cells.append([points_poly[i + 1] - points_poly[i]
                           for i in range(len(points_poly) - 1)])
    total = Poly()
    for cell in itertools.product(*(range(len(c)) for c in axis_cells)):
        if any(all(cell[d] in cov[d] for d in range(ndim)) for cov in coverage):
            vol = Poly.const(1)
            for d, c in enumerate(cell):
                vol = vol * axis_cells[d][c]
            total = total + vol
    return PiecewisePoly.from_poly(total, guards).simplify(assumptions)


def footprint(k: Kernel, array: str, direction: str | None = None) -> PiecewisePoly:
    """Number of distinct elements of ``array`` touched by ``k``."""
    if not k.has_arg(array):
        raise CountingError(f"footprint: kernel '{k.name}' has no array '{array}'")
    images, guard = [], PiecewisePoly.from_poly(Poly.const(1))
    for s, var, d, bound in _accesses(k):
        if var.name == array and (direction is None or d == direction):
            images.append(_image(k, s, var))
            guard = guard * _nonempty_guards(statement_domain(k, s), _iteration_set(k, s, bound))
    return (_union_size(images, k.assumptions) * guard).simplify(k.assumptions)

# }}}


# {{{ synchronization

def count_sync(k: Kernel) -> CountMap:
    """Barriers per work-item, one kernel launch, and the work-group count."""
    def compute():
        out = CountMap()
        seq = set(k.sequential_inames)
        barrier = PiecewisePoly.zero()
        for s in k.statements:
            if s.is_barrier:
                barrier = barrier + count_points(k.domain, frozenset(s.within) & seq,
                                                 k.assumptions)
        out.add(SyncKind("barrier_local"), barrier)
        out.add(SyncKind("kernel_launch"), PiecewisePoly.from_poly(1))
        out.add(SyncKind("group_launch"), group_count(k))
        return out
    return _cached(k, "sync", compute)


def group_count(k: Kernel) -> PiecewisePoly:
    group = k.group_axes
    if not group:
        return PiecewisePoly.from_poly(1)
    return launch_geometry(k).total_groups_poly()

# }}}


# {{{ brute-force oracle

def _enumerate(domain: LoopDomain, inames: Sequence[str], env: dict, budget: list[int],
               predicates: Sequence[AffineExpr] = ()) -> Iterator[dict]:
    if not inames:
        if all(p.evaluate(env) >= 0 for p in predicates):
            budget[0] -= 1
            if budget[0] < 0:
                raise CountingError(f"brute force: more than {BRUTE_FORCE_LIMIT} points")
            yield env
        return
    name, rest = inames[0], inames[1:]
    lo, hi = domain.bound(name)
    for value in range(int(lo.evaluate(env)), int(hi.evaluate(env)) + 1):
        env[name] = value
        yield from _enumerate(domain, rest, env, budget, predicates)
    env.pop(name, None)


def _numeric_coeff(addr: Poly, iname: str, bindings: Mapping[str, int]) -> Poly:
    base = {s: 0 for s in addr.symbols}
    base.update(bindings)
    bumped = dict(base)
    bumped[iname] = 1
    base[iname] = 0
    return Poly.const(addr.evaluate(bumped) - addr.evaluate(base))


def brute_force_points(domain: LoopDomain, subset: Iterable[str], bindings: Mapping[str, int],
                       predicates: Sequence[AffineExpr] = ()) -> int:
    budget = [BRUTE_FORCE_LIMIT]
    names = domain.ordered(subset)
    return sum(1 for _ in _enumerate(domain, names, dict(bindings), budget, predicates))


def brute_force_count(k: Kernel, bindings: Mapping[str, int], with_sync: bool = True) -> dict:
    """Exact counts at one parameter point by enumerating every domain point.

    Keys match :meth:`CountMap.evaluate`. Strides come from finite
    differences of numeric addresses and AFRs from sets of touched
    addresses, independently of the symbolic machinery.
    """
    k.check_bindings(bindings)
    budget = [BRUTE_FORCE_LIMIT]
    out: dict = defaultdict(int)
    tags = k.tags
    local, group = k.local_axes, k.group_axes
    env0 = dict(bindings)

    for s in k.statements:
        if s.is_barrier:
            continue
        within = k.domain.ordered(s.within)
        ops = statement_ops(k, s)
        accesses = [(var, d, b) for st, var, d, b in _accesses(k, [s]) if _is_counted_array(k, var)]
        bounds_needed = {b for _, _, b in ops} | {b for _, _, b in accesses}
        tallies: dict[tuple[str, ...], int] = {}
        addresses: list[set] = [set() for _ in accesses]
        addr_polys = [flat_address(k, var) for var, _, _ in accesses]
        for env in _enumerate(k.domain, within, dict(env0), budget, s.predicates):
            for b in bounds_needed:
                mine = [j for j, (_, _, vb) in enumerate(accesses) if vb == b]
                n = 0
                for p in _enumerate(k.domain, k.domain.ordered(b), dict(env), budget):
                    n += 1
                    for j in mine:
                        addresses[j].add(addr_polys[j].evaluate(p))
                tallies[b] = tallies.get(b, 0) + n
        for (dtype, op, b), n in ops.items():
            if tallies.get(b, 0):
                out[OpKind(dtype, op, SUB_GROUP)] += n * tallies[b]
        for j, (var, direction, b) in enumerate(accesses):
            count = tallies.get(b, 0)
            if not count:
                continue
            decl = k.arg(var.name)
            addr = addr_polys[j]
            lstrides = tuple((a, _numeric_coeff(addr, local[a], bindings)) for a in sorted(local))
            gstrides = tuple((a, _numeric_coeff(addr, group[a], bindings)) for a in sorted(group))
            seq = [i for i in k.domain.inames
                   if (i in s.within or i in b) and not (i in tags and tags[i].is_parallel)]
            loop = _numeric_coeff(addr, seq[-1], bindings) if seq else None
            if decl.address_space == "local":
                gran = SUB_GROUP
            else:
                lid0 = dict(lstrides).get(0)
                gran = SUB_GROUP if lid0 is not None and not lid0 else WORK_ITEM
            afr = PiecewisePoly.from_poly(Fraction(count, len(addresses[j])))
            key = AccessPattern(decl.address_space, direction, decl.dtype, var.name, lstrides,
                                gstrides, loop, afr, var.tag, gran)
            out[key] += count

    if with_sync:
        seq = set(k.sequential_inames)
        barriers = 0
        for s in k.statements:
            if s.is_barrier:
                barriers += sum(1 for _ in _enumerate(
                    k.domain, k.domain.ordered(set(s.within) & seq), dict(env0), budget))
        out[SyncKind("barrier_local")] = barriers
        out[SyncKind("kernel_launch")] = 1
        groups = 1
        for axis in sorted(group):
            lo, hi = k.domain.bound(group[axis])
            groups *= max(0, int(hi.evaluate(env0)) - int(lo.evaluate(env0)) + 1)
        out[SyncKind("group_launch")] = groups
    return {key: Fraction(v) for key, v in out.items()}


def brute_force_footprint(k: Kernel, array: str, bindings: Mapping[str, int],
                          direction: str | None = None) -> int:
    budget = [BRUTE_FORCE_LIMIT]
    seen = set()
    for s, var, d, b in _accesses(k):
        if var.name != array or (direction is not None and d != direction):
            continue
        names = k.domain.ordered(set(s.within) | set(b))
        for env in _enumerate(k.domain, names, dict(bindings), budget, s.predicates):
            seen.add(tuple(i.evaluate(env) for i in var.indices))
    return len(seen)

# }}}
