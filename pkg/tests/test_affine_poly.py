from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfseer.affine import AffineExpr
from perfseer.poly import (
    Guard, PiecewisePoly, Poly, UnguardedEvaluation, exact_divide, power_sum, sum_over,
)

n, m = Poly.var("n"), Poly.var("m")

small = st.integers(-6, 6)
coeffs = st.fractions(min_value=-5, max_value=5, max_denominator=4)


@st.composite
def polys(draw, max_terms=4):
    p = Poly()
    for _ in range(draw(st.integers(0, max_terms))):
        term = Poly.const(draw(coeffs))
        for _ in range(draw(st.integers(0, 2))):
            term = term * Poly.var(draw(st.sampled_from("nm")))
        p = p + term
    return p


def test_affine_arithmetic():
    e = AffineExpr.make({"i": 2, "n": -1}, 3)
    assert e.coeff("i") == 2 and e.coeff("j") == 0
    assert e.symbols == frozenset({"i", "n"})
    assert (e - e).is_constant
    assert e.substitute({"i": AffineExpr.var("n")}).evaluate({"n": 4}) == 7
    assert (e * Fraction(1, 2)).evaluate({"i": 1, "n": 1}) == 2
    assert not (AffineExpr.var("n") * Fraction(1, 2)).is_integral


@given(polys(), polys(), small, small)
def test_ring_identities_at_points(a, b, nv, mv):
    env = {"n": nv, "m": mv}
    assert (a + b).evaluate(env) == a.evaluate(env) + b.evaluate(env)
    assert (a * b).evaluate(env) == a.evaluate(env) * b.evaluate(env)
    assert (a - a) == Poly()
    assert a * (b + 1) == a * b + a


@given(polys(max_terms=3), polys(max_terms=2))
def test_exact_divide_inverts_multiplication(a, b):
    if not b:
        return
    assert exact_divide(a * b, b) == a


def test_exact_divide_rejects_non_multiples():
    assert exact_divide(n * n + 1, n) is None
    with pytest.raises(ZeroDivisionError):
        exact_divide(n, Poly())


@settings(max_examples=60)
@given(st.integers(0, 7), st.integers(-3, 20))
def test_power_sum_matches_enumeration(k, upper):
    value = power_sum(k).evaluate({"N": upper})
    # the closed form telescopes, so it also holds for upper < 0
    expected = sum(Fraction(x) ** k for x in range(0, upper + 1)) if upper >= -1 else \
        -sum(Fraction(x) ** k for x in range(upper + 1, 0))
    assert value == expected


@given(polys(max_terms=3), st.integers(-4, 4), st.integers(0, 6))
def test_sum_over_matches_enumeration(body, lo, span):
    hi = lo + span - 1
    closed = sum_over(body * Poly.var("i"), "i", lo, hi)
    brute = sum((body * Poly.var("i")).evaluate({"i": i, "n": 2, "m": -1}) for i in range(lo, hi + 1))
    assert closed.evaluate({"n": 2, "m": -1}) == brute


def test_symbolic_bounds():
    # sum_{i=0}^{n-1} i = n(n-1)/2
    assert sum_over(Poly.var("i"), "i", 0, n - 1) == (n * n - n) * Fraction(1, 2)


def test_poly_printing():
    assert str((n * n - 2 * n * m + 1) * Fraction(1, 2)) == "(-2*m*n + n^2 + 1)/2"
    assert str(4 * n ** 3 - m) == "4*n^3 - m"
    assert str(3 - n) == "-n + 3"
    assert str(Poly()) == "0"


def test_piecewise_evaluation_and_guards():
    g = Guard(n - 4, "ge")
    value = PiecewisePoly.from_poly(n * 2, [g])
    assert value.evaluate({"n": 5}) == 10
    with pytest.raises(UnguardedEvaluation):
        value.evaluate({"n": 3})
    assert Guard(n, "mod", 4).holds({"n": 8}) and not Guard(n, "mod", 4).holds({"n": 6})
    assert PiecewisePoly.from_poly(1, [Guard(Poly.const(2))]).guards == ()


def test_dominated_guards_are_dropped():
    value = PiecewisePoly.from_poly(n, [Guard(n * Fraction(1, 16)), Guard((n - 16) * Fraction(1, 16)),
                                        Guard(n - 1)])
    assert [str(g) for g in value.guards] == ["(n - 16)/16 >= 0"]


def test_piecewise_arithmetic_merges_guards():
    a = PiecewisePoly.from_poly(n, [Guard(n - 1)])
    b = PiecewisePoly.from_poly(m, [Guard(m)])
    total = a + b
    assert total.evaluate({"n": 1, "m": 0}) == 1
    with pytest.raises(UnguardedEvaluation):
        total.evaluate({"n": 1, "m": -1})
    assert (a * 3).evaluate({"n": 2}) == 6
