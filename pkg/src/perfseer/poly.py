"""Exact multivariate polynomials, guarded piecewise polynomials, and
closed-form summation over affine ranges.

All coefficients are :class:`fractions.Fraction`; nothing is rounded until a
caller asks for a float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

from perfseer.affine import AffineExpr, format_number

Monomial = tuple[tuple[str, int], ...]


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    powers = dict(a)
    for sym, exp in b:
        powers[sym] = powers.get(sym, 0) + exp
    return tuple(sorted(powers.items()))


class Poly:
    """Immutable polynomial with rational coefficients."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Fraction] | None = None):
        clean = {}
        for mono, coeff in (terms or {}).items():
            if coeff != 0:
                clean[mono] = Fraction(coeff)
        self._terms = clean
        self._hash = None

    @staticmethod
    def const(value) -> Poly:
        return Poly({(): Fraction(value)})

    @staticmethod
    def var(name: str) -> Poly:
        return Poly({((name, 1),): Fraction(1)})

    @property
    def terms(self) -> dict[Monomial, Fraction]:
        return dict(self._terms)

    @property
    def symbols(self) -> frozenset[str]:
        return frozenset(s for mono in self._terms for s, _ in mono)

    @property
    def is_constant(self) -> bool:
        return all(not mono for mono in self._terms)

    @property
    def constant_value(self) -> Fraction:
        return self._terms.get((), Fraction(0))

    @property
    def degree(self) -> int:
        return max((sum(e for _, e in mono) for mono in self._terms), default=0)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Poly.const(other)
        if not isinstance(other, Poly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(tuple(sorted(self._terms.items())))
        return self._hash

    def __add__(self, other) -> Poly:
        other = as_poly(other)
        out = dict(self._terms)
        for mono, coeff in other._terms.items():
            out[mono] = out.get(mono, Fraction(0)) + coeff
        return Poly(out)

    __radd__ = __add__

    def __neg__(self) -> Poly:
        return Poly({m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> Poly:
        return self + (-as_poly(other))

    def __rsub__(self, other) -> Poly:
        return as_poly(other) - self

    def __mul__(self, other) -> Poly:
        if isinstance(other, (int, Fraction)):
            return Poly({m: c * other for m, c in self._terms.items()})
        other = as_poly(other)
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                mono = _mono_mul(m1, m2)
                out[mono] = out.get(mono, Fraction(0)) + c1 * c2
        return Poly(out)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Poly:
        if isinstance(other, (int, Fraction)):
            return self * (1 / Fraction(other))
        quotient = exact_divide(self, as_poly(other))
        if quotient is None:
            raise ValueError(f"({self}) is not divisible by ({other})")
        return quotient

    def __pow__(self, exp: int) -> Poly:
        if exp < 0:
            raise ValueError("negative powers are not polynomials")
        result = Poly.const(1)
        base = self
        while exp:
            if exp & 1:
                result = result * base
            base = base * base
            exp >>= 1
        return result

    def coefficients_in(self, sym: str) -> dict[int, Poly]:
        """Split into ``{power: coefficient poly}`` with respect to ``sym``."""
        out: dict[int, dict[Monomial, Fraction]] = {}
        for mono, coeff in self._terms.items():
            power = 0
            rest = []
            for s, e in mono:
                if s == sym:
                    power = e
                else:
                    rest.append((s, e))
            out.setdefault(power, {})[tuple(rest)] = coeff
        return {p: Poly(t) for p, t in out.items()}

    def substitute(self, mapping: Mapping[str, object]) -> Poly:
        if not mapping or not (self.symbols & set(mapping)):
            return self
        subs = {k: as_poly(v) for k, v in mapping.items()}
        result = Poly()
        for mono, coeff in self._terms.items():
            term = Poly.const(coeff)
            for sym, exp in mono:
                factor = subs[sym] ** exp if sym in subs else Poly({((sym, exp),): Fraction(1)})
                term = term * factor
            result = result + term
        return result

    def evaluate(self, bindings: Mapping[str, object]) -> Fraction:
        total = Fraction(0)
        for mono, coeff in self._terms.items():
            term = coeff
            for sym, exp in mono:
                try:
                    term *= Fraction(bindings[sym]) ** exp
                except KeyError:
                    raise KeyError(f"no value bound for '{sym}' in {self}") from None
            total += term
        return total

    def to_affine(self) -> AffineExpr:
        if self.degree > 1:
            raise ValueError(f"{self} is not affine")
        terms = {mono[0][0]: c for mono, c in self._terms.items() if mono}
        return AffineExpr.make(terms, self.constant_value)

    def sorted_terms(self) -> list[tuple[Monomial, Fraction]]:
        def key(item):
            mono = item[0]
            return (-sum(e for _, e in mono), [(s, -e) for s, e in mono])
        return sorted(self._terms.items(), key=key)

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        denom = 1
        for coeff in self._terms.values():
            denom = denom * coeff.denominator // math.gcd(denom, coeff.denominator)
        pieces = []
        for mono, coeff in self.sorted_terms():
            scaled = coeff * denom
            mag = abs(scaled)
            factors = [s if e == 1 else f"{s}^{e}" for s, e in mono]
            if mag != 1 or not factors:
                factors.insert(0, format_number(mag))
            pieces.append(("-" if scaled < 0 else "+", "*".join(factors)))
        text = ("-" if pieces[0][0] == "-" else "") + pieces[0][1]
        for sign, body in pieces[1:]:
            text += f" {sign} {body}"
        if denom == 1:
            return text
        if len(pieces) == 1 and pieces[0][0] == "+":
            return f"{text}/{denom}"
        return f"({text})/{denom}"

    def __repr__(self) -> str:
        return f"Poly({str(self)!r})"


def as_poly(value) -> Poly:
    if isinstance(value, Poly):
        return value
    if isinstance(value, AffineExpr):
        return value.to_poly()
    if isinstance(value, str):
        return Poly.var(value)
    if isinstance(value, (int, Fraction)):
        return Poly.const(value)
    raise TypeError(f"cannot convert {value!r} to a polynomial")


def exact_divide(num: Poly, den: Poly) -> Poly | None:
    """Multivariate division; returns None unless ``den`` divides ``num``."""
    if not den:
        raise ZeroDivisionError("polynomial division by zero")
    if den.is_constant:
        return num * (1 / den.constant_value)
    lead_mono, lead_coeff = den.sorted_terms()[0]
    remainder = num
    quotient = Poly()
    lead_powers = dict(lead_mono)
    for _ in range(10_000):
        if not remainder:
            return quotient
        mono, coeff = remainder.sorted_terms()[0]
        powers = dict(mono)
        if any(powers.get(s, 0) < e for s, e in lead_powers.items()):
            return None
        q_mono = tuple(sorted((s, powers.get(s, 0) - lead_powers.get(s, 0))
                              for s in powers if powers[s] - lead_powers.get(s, 0) > 0))
        q_term = Poly({q_mono: coeff / lead_coeff})
        quotient = quotient + q_term
        remainder = remainder - q_term * den
    return None


# {{{ power sums

@lru_cache(maxsize=None)
def _bernoulli(m: int) -> Fraction:
    # B_1 = +1/2 convention
    values = [Fraction(1)]
    for k in range(1, m + 1):
        acc = Fraction(0)
        for j in range(k):
            acc += math.comb(k + 1, j) * values[j]
        values.append(-acc / (k + 1))
    b = values[m]
    return -b if m == 1 else b


@lru_cache(maxsize=None)
def power_sum(k: int) -> Poly:
    """Return ``P_k(N) = sum_{x=0}^{N} x^k`` as a polynomial in ``N``.

    ``P_k(N) - P_k(N-1) = N^k`` holds identically, so
    ``sum_{x=lo}^{hi} x^k = P_k(hi) - P_k(lo-1)`` for all integers
    ``lo <= hi + 1``.
    """
    n = Poly.var("N")
    if k == 0:
        return n + 1
    total = Poly()
    for j in range(k + 1):
        total = total + n ** (k + 1 - j) * (math.comb(k + 1, j) * _bernoulli(j))
    return total * Fraction(1, k + 1)


def sum_over(expr: Poly, var: str, lo, hi) -> Poly:
    """Closed form of ``sum_{var=lo}^{hi} expr``."""
    lo, hi = as_poly(lo), as_poly(hi)
    result = Poly()
    below = lo - 1
    for power, coeff in expr.coefficients_in(var).items():
        pk = power_sum(power)
        result = result + coeff * (pk.substitute({"N": hi}) - pk.substitute({"N": below}))
    return result

# }}}


# {{{ guards and piecewise polynomials

@dataclass(frozen=True)
class Guard:
    """``expr >= 0`` (kind ``ge``) or ``expr mod modulus == 0`` (kind ``mod``)."""

    expr: Poly
    kind: str = "ge"
    modulus: int = 0

    def holds(self, bindings: Mapping[str, object]) -> bool:
        value = self.expr.evaluate(bindings)
        if self.kind == "ge":
            return value >= 0
        return value.denominator == 1 and value.numerator % self.modulus == 0

    @property
    def is_trivial(self) -> bool:
        if not self.expr.is_constant:
            return False
        return self.holds({})

    def __str__(self) -> str:
        if self.kind == "ge":
            return f"{self.expr} >= 0"
        return f"{self.expr} mod {self.modulus} == 0"


class UnguardedEvaluation(ValueError):
    """Raised when a binding satisfies none of the pieces."""


@dataclass(frozen=True)
class PiecewisePoly:
    """Polynomials valid under conjunctions of parameter guards."""

    pieces: tuple[tuple[tuple[Guard, ...], Poly], ...]

    @staticmethod
    def from_poly(poly, guards: Iterable[Guard] = ()) -> PiecewisePoly:
        return PiecewisePoly(((_clean_guards(guards), as_poly(poly)),))

    @staticmethod
    def zero() -> PiecewisePoly:
        return PiecewisePoly.from_poly(Poly())

    @property
    def is_single(self) -> bool:
        return len(self.pieces) == 1

    @property
    def poly(self) -> Poly:
        """The polynomial of a single-piece value."""
        if len(self.pieces) != 1:
            raise ValueError("value has more than one piece")
        return self.pieces[0][1]

    @property
    def guards(self) -> tuple[Guard, ...]:
        return tuple(g for gs, _ in self.pieces for g in gs)

    def _combine(self, other, op) -> PiecewisePoly:
        other = as_pwpoly(other)
        pieces = []
        for g1, p1 in self.pieces:
            for g2, p2 in other.pieces:
                pieces.append((_clean_guards(g1 + g2), op(p1, p2)))
        return PiecewisePoly(tuple(pieces))

    def __add__(self, other) -> PiecewisePoly:
        return self._combine(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other) -> PiecewisePoly:
        return self._combine(other, lambda a, b: a - b)

    def __mul__(self, other) -> PiecewisePoly:
        return self._combine(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __truediv__(self, other) -> PiecewisePoly:
        if isinstance(other, (int, Fraction)):
            return PiecewisePoly(tuple((g, p * (1 / Fraction(other))) for g, p in self.pieces))
        return self._combine(other, lambda a, b: a / b)

    def map(self, fn) -> PiecewisePoly:
        return PiecewisePoly(tuple((g, fn(p)) for g, p in self.pieces))

    def substitute(self, mapping) -> PiecewisePoly:
        out = []
        for guards, poly in self.pieces:
            new_guards = [Guard(g.expr.substitute(mapping), g.kind, g.modulus) for g in guards]
            out.append((_clean_guards(new_guards), poly.substitute(mapping)))
        return PiecewisePoly(tuple(out))

    def evaluate(self, bindings: Mapping[str, object]) -> Fraction:
        for guards, poly in self.pieces:
            if all(g.holds(bindings) for g in guards):
                return poly.evaluate(bindings)
        shown = ", ".join(f"{k}={v}" for k, v in sorted(bindings.items()))
        raise UnguardedEvaluation(
            f"binding ({shown}) lies outside every piece of {self} "
            "(negative trip count or unmet assumption)")

    def simplify(self, assumptions=()) -> PiecewisePoly:
        """Drop guards implied by single-parameter assumptions."""
        lower = {a.param: a.value for a in assumptions if a.kind == "ge"}
        mods = {(a.param, a.value) for a in assumptions if a.kind == "mod"}
        out = []
        for guards, poly in self.pieces:
            kept = [g for g in guards if not _implied(g, lower, mods)]
            out.append((tuple(kept), poly))
        return PiecewisePoly(tuple(out))

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction, Poly)):
            other = PiecewisePoly.from_poly(other)
        if not isinstance(other, PiecewisePoly):
            return NotImplemented
        return self.pieces == other.pieces

    def __hash__(self) -> int:
        return hash(self.pieces)

    def __str__(self) -> str:
        texts = []
        for guards, poly in self.pieces:
            if guards:
                texts.append(f"{poly} : {' and '.join(str(g) for g in guards)}")
            else:
                texts.append(str(poly))
        if len(texts) == 1 and not self.pieces[0][0]:
            return texts[0]
        return "{ " + "; ".join(texts) + " }"

    def __repr__(self) -> str:
        return f"PiecewisePoly({str(self)!r})"


def _clean_guards(guards: Iterable[Guard]) -> tuple[Guard, ...]:
    seen = []
    for g in guards:
        if g.is_trivial or g in seen:
            continue
        seen.append(g)
    # among ``e + c >= 0`` sharing ``e``, only the smallest ``c`` binds
    strongest: dict = {}
    for g in seen:
        shape = _ge_shape(g)
        if shape is None:
            continue
        direction, offset = shape
        if direction not in strongest or offset < strongest[direction][0]:
            strongest[direction] = (offset, g)
    kept = {id(g) for _, g in strongest.values()}
    seen = [g for g in seen if _ge_shape(g) is None or id(g) in kept]
    seen.sort(key=lambda g: (g.kind, str(g)))
    return tuple(seen)


def _ge_shape(g: Guard):
    """``(direction, offset)`` of a linear ``ge`` guard scaled so that its
    first coefficient has magnitude one, else ``None``."""
    if g.kind != "ge" or g.expr.degree != 1:
        return None
    terms = g.expr.sorted_terms()
    lead = next(abs(c) for mono, c in terms if mono)
    scaled = g.expr / lead
    offset = scaled.terms.get((), Fraction(0))
    return scaled - offset, offset


def _implied(guard: Guard, lower: dict, mods: set) -> bool:
    expr = guard.expr
    syms = expr.symbols
    if len(syms) != 1 or expr.degree > 1:
        return False
    (sym,) = syms
    coeff = expr.coefficients_in(sym).get(1, Poly()).constant_value
    offset = expr.constant_value
    if guard.kind == "mod":
        if offset != 0 or coeff.denominator != 1:
            return False
        return any(p == sym and m % guard.modulus == 0 for p, m in mods)
    if coeff > 0 and sym in lower:
        return coeff * lower[sym] + offset >= 0
    return False


def as_pwpoly(value) -> PiecewisePoly:
    if isinstance(value, PiecewisePoly):
        return value
    return PiecewisePoly.from_poly(as_poly(value))

# }}}
