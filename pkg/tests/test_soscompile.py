"""SOS program assembly: affine expressions, Gram parametrization,
conic compilation, extraction and round-trip residuals."""

import numpy as np
import pytest

from sosreach.poly import Polynomial, VarSet, monomial_basis
from sosreach.sosprog import (AffExpr, BilinearityError, LinPoly, SosProgram,
                              compile_program, default_gram_basis, extract,
                              gram_matrix, residual, svec_index)

VS = VarSet(("x", "y"))


def p(text):
    return Polynomial.parse(text, VS)


# ---------------------------------------------------------------------------
# AffExpr / LinPoly layer
# ---------------------------------------------------------------------------

def test_affexpr_arithmetic():
    a = AffExpr.of_var(0)
    b = AffExpr.of_var(1)
    e = a * 2.0 + b - 1.5
    assert e.value(np.array([2.0, 3.0])) == pytest.approx(2 * 2 + 3 - 1.5)
    assert not e.is_const()
    assert AffExpr(const=4.0).is_const()


def test_linpoly_bilinearity_detected():
    prog = SosProgram(VS)
    u = prog.new_poly_var("u", ("x",), 1).expr()
    v = prog.new_poly_var("v", ("x",), 1).expr()
    with pytest.raises(BilinearityError):
        u.mul_aff(v.terms[next(iter(v.terms))])


def test_linpoly_roundtrip_and_diff():
    q = p("x^2*y - 3*x + 2")
    lp = LinPoly.from_poly(q)
    assert lp.is_const()
    assert lp.constant_part().terms == q.terms
    assert lp.diff("x").constant_part().terms == q.diff("x").terms
    assert lp.subs_value("y", 2.0).constant_part().terms == \
        q.subs("y", 2.0).terms


def test_linpoly_free_mul_poly():
    prog = SosProgram(VS)
    u = prog.new_poly_var("u", ("x",), 1).expr()
    prod = u.mul_poly(p("x"))
    # (a + b x) * x = a x + b x^2: support shifts by one in x
    assert sorted(prod.terms) == [(1, 0), (2, 0)]


# ---------------------------------------------------------------------------
# Gram bases
# ---------------------------------------------------------------------------

def test_default_gram_basis_halves_degree():
    lp = LinPoly.from_poly(p("x^4 + x^2*y^2 + 1"))
    basis = default_gram_basis(lp, ("x", "y"))
    assert max(sum(e) for e in basis) == 2
    assert (0, 0) in basis


def test_default_gram_basis_prunes_pure_square():
    # x^4 alone needs only monomials of exact degree 2 in x
    lp = LinPoly.from_poly(p("x^4"))
    basis = default_gram_basis(lp, ("x", "y"))
    assert all(e[0] >= 1 or sum(e) == 2 for e in basis)
    assert (2, 0) in basis


def test_svec_index_upper_triangle():
    n = 4
    seen = set()
    for i in range(n):
        for j in range(i, n):
            seen.add(svec_index(i, j, n))
    assert seen == set(range(n * (n + 1) // 2))
    assert svec_index(2, 1, n) == svec_index(1, 2, n)


# ---------------------------------------------------------------------------
# compile / extract round trip
# ---------------------------------------------------------------------------

def _sos_value_roundtrip(rng):
    """[DERIVED] oracle: p = z' Q z for a random PSD Q must compile to a
    feasible program whose extracted Gram reproduces p with tiny residual."""
    basis = monomial_basis(VS, ("x", "y"), 2)
    G = rng.standard_normal((len(basis), len(basis)))
    Q = G @ G.T
    poly = Polynomial.zero(VS)
    for i, ei in enumerate(basis):
        for j, ej in enumerate(basis):
            e = tuple(a + b for a, b in zip(ei, ej))
            poly = poly + Polynomial.monomial(VS, e, Q[i, j])
    prog = SosProgram(VS)
    prog.add_sos(LinPoly.from_poly(poly), ("x", "y"), "roundtrip")
    cp = compile_program(prog)

    from sosreach import sdp
    sol = sdp.solve(cp)
    assert sol.status == sdp.OPTIMAL
    c = prog.sos_constraints[0]
    Qhat = gram_matrix(sol.y, cp.gram_offsets[0], cp.psd_dims[0])
    return residual(poly, Qhat, list(c.gram_basis))


def test_sos_roundtrip_100_random_psd():
    rng = np.random.default_rng(42)
    worst = max(_sos_value_roundtrip(rng) for _ in range(100))
    assert worst < 1e-8


def test_compile_deterministic_layout():
    def build():
        prog = SosProgram(VS)
        g = prog.new_scalar("g")
        lp = LinPoly.from_poly(p("x^2 + 1")) - \
            LinPoly.from_poly(p("1")).mul_aff(g)
        prog.add_sos(lp, ("x",), "c")
        prog.maximize(g)
        return compile_program(prog).serialize()

    assert build() == build()


def test_extract_scalar_and_poly_values():
    prog = SosProgram(VS)
    g = prog.new_scalar("g")
    u = prog.new_poly_var("u", ("x",), 1)
    # u - g*x is constrained only through compile; fabricate a solution vector
    cp = compile_program(prog)
    y = np.zeros(cp.n_vars())
    y[0] = 2.5                      # scalar g
    ex = extract(prog, cp, y)
    assert ex.scalars[prog.scalar_names.index("g")] == pytest.approx(2.5)
    assert "u" in ex.polys


def test_uncoverable_decision_monomial_pinned_to_zero():
    # a free polynomial variable multiplied into an odd monomial cannot be
    # covered by any Gram product; compile must pin it via equality rather
    # than fail, and a solve must return it as (near) zero
    prog = SosProgram(VS)
    u = prog.new_poly_var("u", ("x",), 1).expr()    # a + b x
    expr = LinPoly.from_poly(p("x^2 + 1")) + u.mul_poly(p("y"))
    prog.add_sos(expr, ("x", "y"), "pin")
    cp = compile_program(prog)

    from sosreach import sdp
    sol = sdp.solve(cp)
    assert sol.status == sdp.OPTIMAL
    ex = extract(prog, cp, sol.y)
    for coeff in ex.polys["u"].terms.values():
        assert abs(coeff) < 1e-7


def test_unsatisfiable_constant_monomial_raises():
    # odd monomial with a fixed nonzero coefficient can never be SOS-matched
    prog = SosProgram(VS)
    prog.add_sos(LinPoly.from_poly(p("x^2 + y + 1")), ("x",), "bad")
    with pytest.raises(Exception):
        compile_program(prog)
