"""Affine expressions over inames and size parameters."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Union

Number = Union[int, Fraction]


def _frac(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    raise TypeError(f"expected an exact number, got {value!r}")


def format_number(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class AffineExpr:
    """``sum(coeff * symbol) + constant`` with exact rational coefficients.

    Coefficients parsed from source are integers. Rational coefficients only
    arise from :func:`~perfseer.ir.split_iname` bounds such as ``n/16 - 1``,
    which are integral under the kernel's divisibility assumptions.
    """

    terms: tuple[tuple[str, Fraction], ...] = ()
    constant: Fraction = Fraction(0)

    @staticmethod
    def make(terms: Mapping[str, Number] | None = None, constant: Number = 0) -> AffineExpr:
        items = []
        for sym, coeff in (terms or {}).items():
            coeff = _frac(coeff)
            if coeff != 0:
                items.append((sym, coeff))
        items.sort()
        return AffineExpr(tuple(items), _frac(constant))

    @staticmethod
    def const(value: Number) -> AffineExpr:
        return AffineExpr((), _frac(value))

    @staticmethod
    def var(name: str, coeff: Number = 1) -> AffineExpr:
        return AffineExpr.make({name: coeff})

    @property
    def coeffs(self) -> dict[str, Fraction]:
        return dict(self.terms)

    def coeff(self, sym: str) -> Fraction:
        for name, value in self.terms:
            if name == sym:
                return value
        return Fraction(0)

    @property
    def symbols(self) -> frozenset[str]:
        return frozenset(name for name, _ in self.terms)

    @property
    def is_constant(self) -> bool:
        return not self.terms

    @property
    def is_integral(self) -> bool:
        return self.constant.denominator == 1 and all(
            c.denominator == 1 for _, c in self.terms)

    def __add__(self, other) -> AffineExpr:
        other = as_affine(other)
        merged = self.coeffs
        for sym, coeff in other.terms:
            merged[sym] = merged.get(sym, Fraction(0)) + coeff
        return AffineExpr.make(merged, self.constant + other.constant)

    __radd__ = __add__

    def __neg__(self) -> AffineExpr:
        return self * -1

    def __sub__(self, other) -> AffineExpr:
        return self + (-as_affine(other))

    def __rsub__(self, other) -> AffineExpr:
        return as_affine(other) - self

    def __mul__(self, factor) -> AffineExpr:
        if isinstance(factor, AffineExpr):
            if factor.is_constant:
                factor = factor.constant
            elif self.is_constant:
                return factor * self.constant
            else:
                raise ValueError(f"product of non-constant affine expressions "
                                 f"({self}) * ({factor}) is not affine")
        factor = _frac(factor)
        return AffineExpr.make({s: c * factor for s, c in self.terms},
                               self.constant * factor)

    __rmul__ = __mul__

    def substitute(self, mapping: Mapping[str, AffineExpr | Number]) -> AffineExpr:
        result = AffineExpr.const(self.constant)
        for sym, coeff in self.terms:
            if sym in mapping:
                result = result + as_affine(mapping[sym]) * coeff
            else:
                result = result + AffineExpr.var(sym, coeff)
        return result

    def evaluate(self, bindings: Mapping[str, Number]) -> Fraction:
        total = self.constant
        for sym, coeff in self.terms:
            try:
                total += coeff * bindings[sym]
            except KeyError:
                raise KeyError(f"no value bound for '{sym}' in {self}") from None
        return total

    def to_poly(self):
        from perfseer.poly import Poly
        result = Poly.const(self.constant)
        for sym, coeff in self.terms:
            result = result + Poly.var(sym) * coeff
        return result

    def __str__(self) -> str:
        parts: list[str] = []
        for sym, coeff in self.terms:
            mag = abs(coeff)
            if mag == 1:
                body = sym
            elif mag.denominator == 1:
                body = f"{mag.numerator}*{sym}"
            elif mag.numerator == 1:
                body = f"{sym}/{mag.denominator}"
            else:
                body = f"{mag.numerator}*{sym}/{mag.denominator}"
            sign = "-" if coeff < 0 else "+"
            parts.append((sign, body))
        if self.constant != 0 or not parts:
            mag = abs(self.constant)
            parts.append(("-" if self.constant < 0 else "+", format_number(mag)))
        out = ""
        for i, (sign, body) in enumerate(parts):
            if i == 0:
                out = ("-" if sign == "-" else "") + body
            else:
                out += f" {sign} {body}"
        return out

    def __repr__(self) -> str:
        return f"AffineExpr({str(self)!r})"


def as_affine(value) -> AffineExpr:
    if isinstance(value, AffineExpr):
        return value
    if isinstance(value, str):
        return AffineExpr.var(value)
    return AffineExpr.const(value)
