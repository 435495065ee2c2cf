"""Polynomial arithmetic, parsing and evaluation."""

import math

import numpy as np
import pytest

from sosreach.poly import Polynomial, PolyError, VarSet, monomial_basis

VS = VarSet(("t", "x", "y"))


def p(text):
    return Polynomial.parse(text, VS)


# ---------------------------------------------------------------------------
# construction and canonical form
# ---------------------------------------------------------------------------

def test_zero_and_constant():
    z = Polynomial.zero(VS)
    assert z.terms == {}
    assert z.degree() == -1
    c = Polynomial.constant(VS, 2.5)
    assert c.terms == {(0, 0, 0): 2.5}
    assert c.degree() == 0


def test_variable_and_monomial():
    x = Polynomial.variable(VS, "x")
    assert x.terms == {(0, 1, 0): 1.0}
    m = Polynomial.monomial(VS, (1, 2, 0), 3.0)
    assert m.terms == {(1, 2, 0): 3.0}
    with pytest.raises(PolyError):
        Polynomial.variable(VS, "nope")


def test_cancellation_is_trimmed():
    x = Polynomial.variable(VS, "x")
    assert (x - x).terms == {}
    # relative trim: tiny coefficients vanish next to large ones
    q = Polynomial.constant(VS, 1e20) + Polynomial.constant(VS, 1.0)
    assert q.terms == {(0, 0, 0): 1e20}


def test_varset_immutable_and_lookup():
    assert VS.index("y") == 2
    assert "x" in VS
    assert "z" not in VS
    with pytest.raises(PolyError):
        VarSet(("a", "a"))


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def test_add_mul_known_product():
    # (x + y)(x - y) = x^2 - y^2
    x, y = Polynomial.variable(VS, "x"), Polynomial.variable(VS, "y")
    prod = (x + y) * (x - y)
    assert prod.terms == {(0, 2, 0): 1.0, (0, 0, 2): -1.0}


def test_scalar_ops():
    x = Polynomial.variable(VS, "x")
    assert (x * 3.0).terms == {(0, 1, 0): 3.0}
    assert (-x).terms == {(0, 1, 0): -1.0}
    assert (x + 1.0).terms == {(0, 1, 0): 1.0, (0, 0, 0): 1.0}


def test_power():
    q = p("x + 1")
    # binomial coefficients of (x+1)^4
    quart = q ** 4
    assert quart.terms[(0, 4, 0)] == pytest.approx(1.0)
    assert quart.terms[(0, 3, 0)] == pytest.approx(4.0)
    assert quart.terms[(0, 2, 0)] == pytest.approx(6.0)
    assert quart.terms[(0, 1, 0)] == pytest.approx(4.0)
    assert quart.terms[(0, 0, 0)] == pytest.approx(1.0)
    assert (q ** 0).terms == {(0, 0, 0): 1.0}


def test_degree():
    assert p("x^2*y + t").degree() == 3
    assert p("7").degree() == 0


# ---------------------------------------------------------------------------
# calculus, substitution, embedding
# ---------------------------------------------------------------------------

def test_diff():
    q = p("x^3 + 2*t*x - 5")
    dx = q.diff("x")
    assert dx.terms == {(0, 2, 0): 3.0, (1, 0, 0): 2.0}
    assert p("7").diff("x").terms == {}


def test_subs_number():
    q = p("x^2 + t*x + 1")
    r = q.subs("x", 2.0)
    assert r.terms == {(0, 0, 0): 5.0, (1, 0, 0): 2.0}


def test_subs_polynomial():
    q = p("x^2")
    r = q.subs("x", p("t + 1"))
    assert r.terms == {(2, 0, 0): 1.0, (1, 0, 0): 2.0, (0, 0, 0): 1.0}


def test_embed_into_larger_varset():
    small = VarSet(("x",))
    big = VarSet(("t", "x", "y"))
    q = Polynomial.parse("x^2 - 1", small).embed(big)
    assert q.varset == big
    assert q.terms == {(0, 2, 0): 1.0, (0, 0, 0): -1.0}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_eval_matches_direct():
    q = p("2*t*x^2 - 0.5*y + 3")
    t, x, y = 0.3, -1.2, 2.0
    assert q.eval([t, x, y]) == pytest.approx(2 * t * x * x - 0.5 * y + 3)


def test_relative_trim_drops_tiny_coefficients():
    # coefficients below 1e-14 of the largest magnitude are dropped
    q = Polynomial.constant(VS, 1e16) + Polynomial.variable(VS, "x")
    assert q.terms == {(0, 0, 0): 1e16}
    # at comparable scale both survive
    q = Polynomial.constant(VS, 1.0) + Polynomial.variable(VS, "x") * 1e-10
    assert len(q.terms) == 2


def test_eval_exact_cancellation():
    q = p("x^2 - y^2")
    assert q.eval([0.0, 1e8, 1e8]) == 0.0


def test_eval_batch_matches_pointwise():
    rng = np.random.default_rng(0)
    q = p("t^2*x - 3*y^3 + x*y + 1")
    pts = rng.uniform(-2, 2, size=(50, 3))
    batch = q.eval_batch(pts)
    for i in range(50):
        assert batch[i] == pytest.approx(q.eval(pts[i]), abs=1e-10)


# ---------------------------------------------------------------------------
# parsing and printing
# ---------------------------------------------------------------------------

def test_parse_roundtrip_random():
    rng = np.random.default_rng(7)
    for _ in range(25):
        terms = {}
        for _ in range(rng.integers(1, 6)):
            e = tuple(int(v) for v in rng.integers(0, 4, size=3))
            terms[e] = float(rng.standard_normal())
        q = Polynomial(VS, terms)
        assert Polynomial.parse(str(q), VS).terms == q.terms


def test_parse_syntax_variants():
    assert p("x**2").terms == p("x^2").terms
    assert p("-x + 2").terms == {(0, 1, 0): -1.0, (0, 0, 0): 2.0}
    assert p("(x + 1)*(x - 1)").terms == p("x^2 - 1").terms
    with pytest.raises(PolyError):
        p("x +")
    with pytest.raises(PolyError):
        p("z^2")


def test_str_grlex_descending():
    assert str(p("1 + x + x^2")) == "x^2 + x + 1.0"


# ---------------------------------------------------------------------------
# monomial bases
# ---------------------------------------------------------------------------

def test_monomial_basis_counts():
    # C(n + d, d) monomials in n variables up to degree d
    basis = monomial_basis(VS, ("x", "y"), 3)
    assert len(basis) == math.comb(2 + 3, 3)
    # graded order: degrees never decrease
    degs = [sum(e) for e in basis]
    assert degs == sorted(degs)


def test_monomial_basis_respects_active_subset():
    basis = monomial_basis(VS, ("x",), 2)
    assert all(e[0] == 0 and e[2] == 0 for e in basis)
    assert len(basis) == 3
