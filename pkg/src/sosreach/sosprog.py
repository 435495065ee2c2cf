"""Sum-of-squares programs and their compilation to standard-form conic problems.

An :class:`SosProgram` collects scalar decision variables, polynomial decision
variables (each basis-monomial coefficient is a scalar decision variable), SOS
membership constraints whose expressions are *affine* in the decision
variables, and linear equalities/inequalities on scalars.  ``compile``
translates it to a :class:`ConicProblem`:

    minimize    c' y
    subject to  A y = b
                y = (free block, nonnegative block, svec'd Gram blocks)

Each SOS constraint contributes one PSD Gram block Q over a monomial basis z
together with coefficient-matching equalities  expr(xi) == z(xi)' Q z(xi).
Gram symmetry is folded: only upper-triangle entries are variables.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .poly import Polynomial, PolyError, VarSet, grlex_key, monomial_basis


class SosError(ValueError):
    pass


class BilinearityError(SosError):
    """Raised when a constraint expression is not affine in the decision
    variables (e.g. a product of two free polynomials slipped in)."""


# ---------------------------------------------------------------------------
# Affine expressions in the program's scalar decision variables
# ---------------------------------------------------------------------------

class AffExpr:
    """const + sum_i lin[i] * var_i over decision-variable indices."""

    __slots__ = ("lin", "const")

    def __init__(self, lin: Optional[dict] = None, const: float = 0.0):
        self.lin = lin or {}
        self.const = float(const)

    @staticmethod
    def of_var(i: int) -> "AffExpr":
        return AffExpr({i: 1.0})

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return AffExpr(dict(self.lin), self.const + other)
        lin = dict(self.lin)
        for i, c in other.lin.items():
            lin[i] = lin.get(i, 0.0) + c
        return AffExpr(lin, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return AffExpr({i: -c for i, c in self.lin.items()}, -self.const)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return AffExpr(dict(self.lin), self.const - other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        if isinstance(s, AffExpr):
            if not self.lin:
                return s * self.const
            if not s.lin:
                return self * s.const
            raise BilinearityError("product of two decision-dependent expressions")
        return AffExpr({i: c * s for i, c in self.lin.items()}, self.const * s)

    __rmul__ = __mul__

    def is_const(self) -> bool:
        return not self.lin

    def value(self, y: np.ndarray) -> float:
        return self.const + sum(c * y[i] for i, c in self.lin.items())


# ---------------------------------------------------------------------------
# Polynomials with affine decision-variable coefficients
# ---------------------------------------------------------------------------

class LinPoly:
    """Polynomial over a varset whose coefficients are :class:`AffExpr`."""

    __slots__ = ("varset", "terms")

    def __init__(self, varset: VarSet, terms: Optional[dict] = None):
        self.varset = varset
        self.terms = terms or {}

    @staticmethod
    def from_poly(p: Polynomial, varset: Optional[VarSet] = None) -> "LinPoly":
        if varset is not None and p.varset != varset:
            p = p.embed(varset)
        return LinPoly(p.varset, {e: AffExpr(const=c) for e, c in p.terms.items()})

    def copy(self) -> "LinPoly":
        return LinPoly(self.varset, dict(self.terms))

    def _check(self, other):
        if self.varset != other.varset:
            raise PolyError("varset mismatch")

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = LinPoly.from_poly(other, self.varset)
        self._check(other)
        out = dict(self.terms)
        for e, a in other.terms.items():
            out[e] = out[e] + a if e in out else a
        return LinPoly(self.varset, out)

    def __neg__(self):
        return LinPoly(self.varset, {e: -a for e, a in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, Polynomial):
            other = LinPoly.from_poly(other, self.varset)
        return self + (-other)

    def mul_poly(self, p: Polynomial) -> "LinPoly":
        """Multiply by a constant (decision-free) polynomial."""
        if p.varset != self.varset:
            p = p.embed(self.varset)
        out: dict = {}
        for e1, a in self.terms.items():
            for e2, c in p.terms.items():
                e = tuple(i + j for i, j in zip(e1, e2))
                contrib = a * c
                out[e] = out[e] + contrib if e in out else contrib
        return LinPoly(self.varset, out)

    def mul_aff(self, a: AffExpr) -> "LinPoly":
        return LinPoly(self.varset, {e: c * a for e, c in self.terms.items()})

    def scale(self, s: float) -> "LinPoly":
        return LinPoly(self.varset, {e: a * s for e, a in self.terms.items()})

    def diff(self, name: str) -> "LinPoly":
        i = self.varset.index(name)
        out: dict = {}
        for e, a in self.terms.items():
            if e[i] == 0:
                continue
            d = list(e)
            d[i] -= 1
            contrib = a * float(e[i])
            d = tuple(d)
            out[d] = out[d] + contrib if d in out else contrib
        return LinPoly(self.varset, out)

    def subs_value(self, name: str, value: float) -> "LinPoly":
        i = self.varset.index(name)
        out: dict = {}
        for e, a in self.terms.items():
            d = list(e)
            k = d[i]
            d[i] = 0
            d = tuple(d)
            contrib = a * (value ** k)
            out[d] = out[d] + contrib if d in out else contrib
        return LinPoly(self.varset, out)

    def support(self) -> list:
        return [e for e, a in self.terms.items()
                if a.lin or a.const != 0.0]

    def degree(self) -> int:
        sup = self.support()
        return max((sum(e) for e in sup), default=-1)

    def to_polynomial(self, y: np.ndarray) -> Polynomial:
        return Polynomial(self.varset, {e: a.value(y) for e, a in self.terms.items()})

    def constant_part(self) -> Polynomial:
        return Polynomial(self.varset, {e: a.const for e, a in self.terms.items()
                                        if a.const != 0.0})

    def is_const(self) -> bool:
        return all(a.is_const() for a in self.terms.values())


# ---------------------------------------------------------------------------
# Program structure
# ---------------------------------------------------------------------------

@dataclass
class PolyVar:
    name: str
    varset: VarSet
    basis: list          # exponent tuples
    var_index: list      # decision-variable index per basis monomial

    def expr(self) -> LinPoly:
        return LinPoly(self.varset,
                       {e: AffExpr.of_var(i) for e, i in zip(self.basis, self.var_index)})


@dataclass
class SosConstraint:
    name: str
    expression: LinPoly
    gram_vars: tuple      # variable names spanning the Gram basis
    gram_basis: list      # exponent tuples; filled at compile time if None


@dataclass
class ConicProblem:
    """Standard-form conic program over y = (free, nonneg, svec Gram blocks)."""

    c: np.ndarray
    A: "np.ndarray"          # dense equality matrix
    b: np.ndarray
    n_free: int
    n_nonneg: int
    psd_dims: list           # Gram block sizes, in order
    var_names: list          # one label per scalar variable
    gram_offsets: list       # start index of each Gram block's svec variables
    constraint_names: list   # SOS constraint name per Gram block

    def n_vars(self) -> int:
        return len(self.c)

    def serialize(self) -> str:
        """Documented sparse text format for external debugging."""
        out = io.StringIO()
        out.write("conicproblem v1\n")
        out.write(f"vars {self.n_vars()} free {self.n_free} nonneg {self.n_nonneg}\n")
        out.write("psd " + " ".join(str(d) for d in self.psd_dims) + "\n")
        out.write("objective " + " ".join(
            f"{i}:{v!r}" for i, v in enumerate(self.c) if v != 0.0) + "\n")
        out.write(f"equalities {self.A.shape[0]}\n")
        for r in range(self.A.shape[0]):
            cols = " ".join(f"{j}:{self.A[r, j]!r}"
                            for j in np.nonzero(self.A[r])[0])
            out.write(f"eq {r} rhs {self.b[r]!r} {cols}\n")
        return out.getvalue()


def svec_index(i: int, j: int, n: int) -> int:
    """Index of upper-triangle entry (i<=j) in row-major svec order."""
    if i > j:
        i, j = j, i
    return i * n - i * (i - 1) // 2 + (j - i)


class SosProgram:
    """Container for polynomial decision variables, SOS constraints and a
    linear objective; compiled to a :class:`ConicProblem` by :func:`compile_program`."""

    def __init__(self, varset: VarSet):
        self.varset = varset
        self.n_scalars = 0
        self.scalar_names: list = []
        self.polyvars: dict = {}
        self.sos_constraints: list = []
        self.equalities: list = []      # AffExpr == 0
        self.inequalities: list = []    # AffExpr >= 0
        self.objective: Optional[AffExpr] = None   # minimized
        self.gram_degree_cap: Optional[int] = None

    # -- declarations -------------------------------------------------

    def new_scalar(self, name: str) -> AffExpr:
        i = self.n_scalars
        self.n_scalars += 1
        self.scalar_names.append(name)
        return AffExpr.of_var(i)

    def new_poly_var(self, name: str, active: Sequence[str], degree: int) -> PolyVar:
        basis = monomial_basis(self.varset, active, degree)
        idx = []
        for e in basis:
            idx.append(self.n_scalars)
            self.scalar_names.append(f"{name}[{e}]")
            self.n_scalars += 1
        pv = PolyVar(name, self.varset, basis, idx)
        self.polyvars[name] = pv
        return pv

    def add_sos(self, expression: LinPoly, gram_vars: Sequence[str], name: str,
                gram_basis: Optional[list] = None):
        self.sos_constraints.append(
            SosConstraint(name, expression, tuple(gram_vars), gram_basis))

    def add_eq(self, expr: AffExpr):
        self.equalities.append(expr)

    def add_ineq(self, expr: AffExpr):
        self.inequalities.append(expr)

    def minimize(self, expr: AffExpr):
        self.objective = expr

    def maximize(self, expr: AffExpr):
        self.objective = -expr


# ---------------------------------------------------------------------------
# Gram parametrization
# ---------------------------------------------------------------------------

def default_gram_basis(expression: LinPoly, gram_vars: Sequence[str],
                       degree_cap: Optional[int] = None) -> list:
    """Monomials of degree <= ceil(deg/2) in ``gram_vars``, pruned to the
    bounding box of half the expression's potential support.

    The pruning is the bounding-box relaxation of the Newton-polytope
    reduction: a basis monomial m can appear in some decomposition only if
    2m lies inside the Newton polytope of the expression, hence inside its
    exponent bounding box and total-degree interval.
    """
    vs = expression.varset
    sup = expression.support()
    if not sup:
        return [monomial_basis(vs, gram_vars, 0)[0]]
    deg = max(sum(e) for e in sup)
    mindeg = min(sum(e) for e in sup)
    half = (deg + 1) // 2
    if degree_cap is not None:
        half = min(half, degree_cap)
    lo_t = mindeg // 2
    hi = [0] * len(vs)
    for e in sup:
        for i, k in enumerate(e):
            hi[i] = max(hi[i], k)
    basis = []
    for m in monomial_basis(vs, gram_vars, half):
        if sum(m) < lo_t:
            continue
        # per-variable exponent upper bound from the support bounding box
        if any(2 * m[i] > hi[i] for i in range(len(vs))):
            continue
        basis.append(m)
    basis.sort(key=grlex_key)
    return basis


def gram_parametrize(expression: LinPoly, basis: list):
    """Return (pair map, combined support) for expr == z' Q z matching.

    ``pairs[m]`` lists ((i, j), mult) with mult 1 on the diagonal and 2 off
    it, covering every product monomial m = basis[i] + basis[j], i <= j.
    Raises :class:`SosError` naming a missing monomial if the basis cannot
    cover the expression support.
    """
    pairs: dict = {}
    for i, bi in enumerate(basis):
        for j in range(i, len(basis)):
            m = tuple(a + b for a, b in zip(bi, basis[j]))
            pairs.setdefault(m, []).append(((i, j), 1.0 if i == j else 2.0))
    for m in expression.support():
        if m not in pairs:
            coeff = expression.terms[m]
            if coeff.is_const():
                raise SosError(
                    f"gram basis cannot produce monomial {m} required by the expression")
            # decision-dependent coefficient: no SOS form can carry this
            # monomial, so matching will pin it to zero
            pairs[m] = []
    return pairs


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def compile_program(prog: SosProgram) -> ConicProblem:
    """Deterministically translate an :class:`SosProgram` into a
    :class:`ConicProblem`.  Identical programs produce identical layouts."""
    n_free = prog.n_scalars
    var_names = list(prog.scalar_names)

    # slack variables for scalar inequalities
    n_nonneg = len(prog.inequalities)
    slack_base = n_free
    for k in range(n_nonneg):
        var_names.append(f"_slack[{k}]")

    # Gram blocks
    gram_offsets = []
    psd_dims = []
    constraint_names = []
    bases = []
    offset = n_free + n_nonneg
    for c in prog.sos_constraints:
        basis = c.gram_basis
        if basis is None:
            basis = default_gram_basis(c.expression, c.gram_vars,
                                       prog.gram_degree_cap)
            c.gram_basis = basis
        p = len(basis)
        gram_offsets.append(offset)
        psd_dims.append(p)
        constraint_names.append(c.name)
        bases.append(basis)
        for i in range(p):
            for j in range(i, p):
                var_names.append(f"{c.name}.Q[{i},{j}]")
        offset += p * (p + 1) // 2
    n_total = offset

    rows = []
    rhs = []

    def add_row(lin_pairs, const):
        row = np.zeros(n_total)
        for idx, v in lin_pairs:
            row[idx] += v
        rows.append(row)
        rhs.append(-const)

    # scalar equalities: expr == 0
    for e in prog.equalities:
        add_row(list(e.lin.items()), e.const)
    # scalar inequalities: expr - slack == 0, slack >= 0
    for k, e in enumerate(prog.inequalities):
        add_row(list(e.lin.items()) + [(slack_base + k, -1.0)], e.const)

    # coefficient matching per SOS constraint
    for c, base, off, p in zip(prog.sos_constraints, bases, gram_offsets, psd_dims):
        pairs = gram_parametrize(c.expression, base)
        for m in sorted(pairs, key=grlex_key):
            coeff = c.expression.terms.get(m)
            lin = []
            const = 0.0
            if coeff is not None:
                lin.extend(coeff.lin.items())
                const = coeff.const
            # expr coeff - sum Q terms == 0
            for (i, j), mult in pairs[m]:
                lin.append((off + svec_index(i, j, p), -mult))
            add_row(lin, const)

    A = np.array(rows) if rows else np.zeros((0, n_total))
    b = np.array(rhs)

    cvec = np.zeros(n_total)
    if prog.objective is not None:
        for i, v in prog.objective.lin.items():
            cvec[i] = v

    return ConicProblem(c=cvec, A=A, b=b, n_free=n_free, n_nonneg=n_nonneg,
                        psd_dims=psd_dims, var_names=var_names,
                        gram_offsets=gram_offsets,
                        constraint_names=constraint_names)


# ---------------------------------------------------------------------------
# Solution pull-back
# ---------------------------------------------------------------------------

@dataclass
class Extraction:
    polys: dict            # PolyVar name -> Polynomial
    scalars: np.ndarray    # first n_free decision values
    grams: dict            # constraint name -> (basis, Q matrix)
    residuals: dict        # constraint name -> max-norm identity residual
    min_eigs: dict         # constraint name -> smallest Gram eigenvalue


def gram_matrix(y: np.ndarray, offset: int, p: int) -> np.ndarray:
    Q = np.zeros((p, p))
    k = offset
    for i in range(p):
        for j in range(i, p):
            Q[i, j] = Q[j, i] = y[k]
            k += 1
    return Q


def residual(expression: Polynomial, Q: np.ndarray, basis: list) -> float:
    """Max-norm of the coefficient vector of expression - z' Q z."""
    diff = dict(expression.terms)
    p = len(basis)
    for i in range(p):
        for j in range(p):
            m = tuple(a + b for a, b in zip(basis[i], basis[j]))
            diff[m] = diff.get(m, 0.0) - Q[i, j]
    return max((abs(v) for v in diff.values()), default=0.0)


def extract(prog: SosProgram, cp: ConicProblem, y: np.ndarray) -> Extraction:
    polys = {name: pv.expr().to_polynomial(y) for name, pv in prog.polyvars.items()}
    grams = {}
    residuals = {}
    min_eigs = {}
    for c, off, p in zip(prog.sos_constraints, cp.gram_offsets, cp.psd_dims):
        Q = gram_matrix(y, off, p)
        grams[c.name] = (c.gram_basis, Q)
        expr = c.expression.to_polynomial(y)
        residuals[c.name] = residual(expr, Q, c.gram_basis)
        min_eigs[c.name] = float(np.linalg.eigvalsh(Q)[0]) if p else 0.0
    return Extraction(polys=polys, scalars=y[:cp.n_free].copy(), grams=grams,
                      residuals=residuals, min_eigs=min_eigs)
