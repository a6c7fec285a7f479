import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from brsynth.polyalg import (Polynomial, PolynomialSyntaxError, QuotientRing, evaluate,
                             monomials_up_to, parse_polynomial, partial, poly_mul,
                             random_polynomial, reduce_mod_circle)

V2 = ("x1", "x2")


def P(text, variables=V2):
    return parse_polynomial(text, variables)


def to_sympy(p: Polynomial):
    syms = sympy.symbols(p.variables)
    return sum(sympy.Float(c) * sympy.Mul(*[s ** e for s, e in zip(syms, a)]) for a, c in p.terms.items())


def test_monomials_small():
    assert monomials_up_to(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert monomials_up_to(1, 0) == [(0,)]


@pytest.mark.parametrize("n,d", [(3, 4), (2, 5), (4, 3), (1, 7)])
def test_monomial_count_brute_force(n, d):
    brute = [a for a in np.ndindex(*(d + 1,) * n) if sum(a) <= d]
    basis = monomials_up_to(n, d)
    assert len(basis) == len(brute) == math.comb(n + d, n)
    assert set(basis) == set(tuple(a) for a in brute)
    assert basis[0] == (0,) * n
    degs = [sum(a) for a in basis]
    assert degs == sorted(degs)


def test_mul_examples(rng):
    assert poly_mul(P("x1 + 1"), P("x1 - 1")) == P("x1^2 - 1")
    assert poly_mul(P("3*x1 + x2^4"), Polynomial(V2)).is_zero()
    prod = poly_mul(P("1 + 2*x1*x2"), P("3*x2"))
    assert prod == P("3*x2 + 6*x1*x2^2")
    for pt in rng.normal(size=(5, 2)):
        assert np.isclose(prod.evaluate(pt), (1 + 2 * pt[0] * pt[1]) * 3 * pt[1])


def test_mul_mismatched_variables():
    with pytest.raises(ValueError):
        poly_mul(P("x1"), parse_polynomial("y", ("y",)))


def test_mul_against_sympy(rng):
    for _ in range(5):
        p = random_polynomial(V2, 3, rng)
        q = random_polynomial(V2, 4, rng)
        diff = sympy.expand(to_sympy(p * q) - to_sympy(p) * to_sympy(q))
        coefs = sympy.Poly(diff, *sympy.symbols(V2)).coeffs() if diff != 0 else []
        assert all(abs(float(c)) < 1e-10 for c in coefs)
        assert (p * q).degree <= p.degree + q.degree


def test_partial_examples(rng):
    assert partial(P("x1^2*x2"), 0) == P("2*x1*x2")
    assert partial(P("7"), 0).is_zero()
    tv = ("t", "x1", "x2")
    p = parse_polynomial("t^3 + t*x2", tv)
    d = partial(p, "t")
    assert d == parse_polynomial("3*t^2 + x2", tv)
    h = 1e-6
    for pt in rng.normal(size=(5, 3)):
        e = np.array([h, 0, 0])
        fd = (p.evaluate(pt + e) - p.evaluate(pt - e)) / (2 * h)
        assert abs(fd - d.evaluate(pt)) <= 1e-6 * max(1.0, abs(fd))


def test_partial_product_rule(rng):
    for _ in range(5):
        p = random_polynomial(V2, 3, rng)
        q = random_polynomial(V2, 3, rng)
        lhs = partial(p * q, 1)
        rhs = partial(p, 1) * q + p * partial(q, 1)
        assert lhs.allclose(rhs, atol=1e-10)


def test_reduce_examples():
    ring = QuotientRing(((0, 1),))
    v = ("s", "c", "x2")
    assert reduce_mod_circle(parse_polynomial("s^2*x2 + c^2*x2", v), ring) == parse_polynomial("x2", v)
    assert reduce_mod_circle(parse_polynomial("c^4", v), ring) == parse_polynomial("1 - 2*s^2 + s^4", v)


def test_reduce_random_on_circle(rng):
    ring = QuotientRing(((0, 1),))
    v = ("s", "c", "x2")
    for _ in range(3):
        p = random_polynomial(v, 6, rng)
        r = reduce_mod_circle(p, ring)
        assert all(a[1] <= 1 for a in r.terms)
        assert reduce_mod_circle(r, ring) == r
        th = rng.uniform(-np.pi, np.pi, 100)
        pts = np.column_stack([np.sin(th), np.cos(th), rng.normal(size=100)])
        pv, rv = p.evaluate(pts), r.evaluate(pts)
        assert np.all(np.abs(pv - rv) <= 1e-9 * (1 + np.abs(pv)))


def test_evaluate_examples(rng):
    assert evaluate(P("x1^2 + x2"), (2, 1)) == 5
    assert evaluate(Polynomial(V2), (3.0, -1.0)) == 0
    v = tuple(f"x{i}" for i in range(3))
    p = random_polynomial(v, 8, rng)
    pt = rng.uniform(-1, 1, 3)
    naive = sum(c * np.prod([pt[i] ** e for i, e in enumerate(a)]) for a, c in p.terms.items())
    assert abs(p.evaluate(pt) - naive) <= 1e-12 * max(1.0, abs(naive))


def test_no_zero_terms_and_vec_length():
    p = P("x1 - x1 + x2^3")
    assert all(c != 0 for c in p.terms.values())
    assert p.degree == 3
    assert len(p.vec(monomials_up_to(2, p.degree))) == math.comb(2 + 3, 2)
    assert P("x1").__add__(P("-x1")).terms == {}


def test_parse_syntax():
    v = ("s", "c")
    assert parse_polynomial("-9.8 + 4.9*s^2", v) == parse_polynomial("4.9 * s ^ 2 - 9.8", v)
    assert parse_polynomial("2*s^1*1", v) == parse_polynomial("2*s", v)
    assert parse_polynomial("a*s", v, {"a": 3}) == parse_polynomial("3*s", v)
    for bad, col in [("s +* c", 4), ("s^x", 3), ("", 1), ("s/c", 2), ("q", 1)]:
        with pytest.raises(PolynomialSyntaxError) as exc:
            parse_polynomial(bad, v)
        assert exc.value.column == col


def test_text_round_trip(rng):
    p = random_polynomial(("t", "x1", "x2"), 4, rng)
    assert parse_polynomial(p.to_text(), p.variables).allclose(p, atol=1e-15)


coef = st.floats(-10, 10, allow_nan=False).filter(lambda c: c == 0 or abs(c) > 1e-3)
polys = st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)), coef, max_size=6).map(
    lambda d: Polynomial(V2, d))
points = st.tuples(st.floats(-2, 2), st.floats(-2, 2))


@settings(max_examples=60, deadline=None)
@given(polys, polys, polys, points)
def test_ring_axioms(p, q, r, pt):
    def close(a, b):
        return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b)) * 1e3
    assert close(((p * q) * r).evaluate(pt), (p * (q * r)).evaluate(pt))
    assert close((p * (q + r)).evaluate(pt), (p * q + p * r).evaluate(pt))
    assert close((p + q).evaluate(pt), (q + p).evaluate(pt))


@settings(max_examples=60, deadline=None)
@given(polys, st.floats(-np.pi, np.pi))
def test_reduce_preserves_circle_values(p, th):
    ring = QuotientRing(((0, 1),))
    pt = (np.sin(th), np.cos(th))
    a, b = p.evaluate(pt), reduce_mod_circle(p, ring).evaluate(pt)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))
