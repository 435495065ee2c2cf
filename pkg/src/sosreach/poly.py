"""Sparse multivariate polynomial arithmetic with a fixed variable ordering.

Polynomials are stored as a map from exponent tuples to float coefficients
over an immutable :class:`VarSet`.  All arithmetic keeps the representation
canonical: zero coefficients are never stored, and coefficients whose
magnitude falls below ``TRIM_REL * max|c|`` are dropped after each ring
operation (they sit below the noise floor of the downstream SDP solver).
"""

from __future__ import annotations

import math
import re
from typing import Iterable, Sequence

import numpy as np

# Relative magnitude below which coefficients are trimmed after arithmetic.
TRIM_REL = 1e-14


class PolyError(ValueError):
    pass


class VarSet:
    """Ordered, immutable collection of distinct variable names."""

    __slots__ = ("names", "_index")

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise PolyError(f"duplicate variable names in {names}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __setattr__(self, *a):
        raise AttributeError("VarSet is immutable")

    # immutable: share the instance under copy/pickle
    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return (VarSet, (self.names,))

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, VarSet) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"VarSet{self.names}"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise PolyError(f"unknown variable {name!r} in {self.names}") from None

    def contains(self, name: str) -> bool:
        return name in self._index


def grlex_key(exps: tuple) -> tuple:
    """Graded-lex sort key: total degree first, then lexicographic."""
    return (sum(exps), exps)


class Polynomial:
    """Immutable sparse polynomial over a :class:`VarSet`.

    ``terms`` maps exponent tuples (aligned with the varset ordering) to
    nonzero float coefficients.  Degree of the zero polynomial is -1.
    """

    __slots__ = ("varset", "terms")

    def __init__(self, varset: VarSet, terms: dict):
        object.__setattr__(self, "varset", varset)
        object.__setattr__(self, "terms", _canonical(terms, len(varset)))

    def __setattr__(self, *a):
        raise AttributeError("Polynomial is immutable")

    # immutable: share the instance under copy; rebuild under pickle
    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return (Polynomial, (self.varset, dict(self.terms)))

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(varset: VarSet) -> "Polynomial":
        return Polynomial(varset, {})

    @staticmethod
    def constant(varset: VarSet, c: float) -> "Polynomial":
        return Polynomial(varset, {(0,) * len(varset): float(c)})

    @staticmethod
    def variable(varset: VarSet, name: str) -> "Polynomial":
        i = varset.index(name)
        e = [0] * len(varset)
        e[i] = 1
        return Polynomial(varset, {tuple(e): 1.0})

    @staticmethod
    def monomial(varset: VarSet, exps: Sequence[int], c: float = 1.0) -> "Polynomial":
        exps = tuple(int(e) for e in exps)
        if len(exps) != len(varset):
            raise PolyError("exponent tuple length does not match varset")
        if any(e < 0 for e in exps):
            raise PolyError("negative exponent")
        return Polynomial(varset, {exps: float(c)})

    # -- basic queries ------------------------------------------------

    def degree(self) -> int:
        if not self.terms:
            return -1
        return max(sum(e) for e in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, exps: Sequence[int]) -> float:
        return self.terms.get(tuple(exps), 0.0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def var_degree(self, name: str) -> int:
        i = self.varset.index(name)
        return max((e[i] for e in self.terms), default=0)

    # -- arithmetic ---------------------------------------------------

    def _check_same(self, other: "Polynomial"):
        if self.varset != other.varset:
            raise PolyError(f"varset mismatch: {self.varset} vs {other.varset}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.varset, other)
        self._check_same(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.varset, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.varset, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.varset, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.varset, {e: c * other for e, c in self.terms.items()})
        self._check_same(other)
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.varset, out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise PolyError("polynomial powers must be nonnegative integers")
        result = Polynomial.constant(self.varset, 1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base if n > 1 else base
            n >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.varset == other.varset and self.terms == other.terms

    def __hash__(self):
        return hash((self.varset, frozenset(self.terms.items())))

    # -- calculus / evaluation ----------------------------------------

    def diff(self, name: str) -> "Polynomial":
        i = self.varset.index(name)
        out: dict = {}
        for e, c in self.terms.items():
            if e[i] == 0:
                continue
            d = list(e)
            d[i] -= 1
            out[tuple(d)] = out.get(tuple(d), 0.0) + c * e[i]
        return Polynomial(self.varset, out)

    def eval(self, point: Sequence[float]) -> float:
        if len(point) != len(self.varset):
            raise PolyError("point dimension does not match varset")
        # compensated summation across terms
        return math.fsum(
            c * math.prod(p ** k for p, k in zip(point, e) if k)
            for e, c in self.terms.items()
        )

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation at ``points`` of shape (N, nvars)."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        if points.shape[1] != len(self.varset):
            raise PolyError("point dimension does not match varset")
        if not self.terms:
            return np.zeros(points.shape[0])
        exps = np.array(list(self.terms.keys()), dtype=float)
        coeffs = np.array(list(self.terms.values()))
        # (N, nterms): product over variables of x_v ** e_v
        mono = np.prod(points[:, None, :] ** exps[None, :, :], axis=2)
        return mono @ coeffs

    def subs(self, name: str, value) -> "Polynomial":
        """Substitute a variable by a number or a polynomial over the same varset."""
        i = self.varset.index(name)
        if isinstance(value, (int, float)):
            value = Polynomial.constant(self.varset, value)
        elif value.varset != self.varset:
            value = value.embed(self.varset)
        result = Polynomial.zero(self.varset)
        powers = {0: Polynomial.constant(self.varset, 1.0)}

        def vpow(k):
            if k not in powers:
                powers[k] = vpow(k - 1) * value
            return powers[k]

        for e, c in self.terms.items():
            rest = list(e)
            k = rest[i]
            rest[i] = 0
            result = result + Polynomial(self.varset, {tuple(rest): c}) * vpow(k)
        return result

    def embed(self, varset: VarSet) -> "Polynomial":
        """Re-express over a larger varset containing all used variables."""
        if varset == self.varset:
            return self
        mapping = []
        for i, n in enumerate(self.varset.names):
            if varset.contains(n):
                mapping.append(varset.index(n))
            elif any(e[i] for e in self.terms):
                raise PolyError(f"variable {n!r} used but absent from target varset")
            else:
                mapping.append(None)
        out: dict = {}
        for e, c in self.terms.items():
            ne = [0] * len(varset)
            for i, k in enumerate(e):
                if k:
                    ne[mapping[i]] = k
            ne = tuple(ne)
            out[ne] = out.get(ne, 0.0) + c
        return Polynomial(varset, out)

    # -- printing / parsing -------------------------------------------

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, key=grlex_key, reverse=True):
            c = self.terms[e]
            factors = []
            for n, k in zip(self.varset.names, e):
                if k == 1:
                    factors.append(n)
                elif k > 1:
                    factors.append(f"{n}^{k}")
            body = "*".join(factors)
            mag = repr(abs(c))
            if body:
                term = body if mag == "1.0" else f"{mag}*{body}"
            else:
                term = mag
            parts.append(("- " if c < 0 else "+ ") + term)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

    __repr__ = __str__

    @staticmethod
    def parse(text: str, varset: VarSet) -> "Polynomial":
        return _Parser(text, varset).parse()


def _canonical(terms: dict, nvars: int) -> dict:
    out = {}
    maxc = max((abs(c) for c in terms.values()), default=0.0)
    floor = TRIM_REL * maxc
    for e, c in terms.items():
        if len(e) != nvars:
            raise PolyError("exponent tuple length does not match varset")
        if c != 0.0 and abs(c) > floor:
            out[e] = float(c)
    return out


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op>\*\*|[-+*^()]))"
)


class _Parser:
    """Recursive-descent parser for the infix syntax, e.g. ``2*x1^2*t - 0.5``."""

    def __init__(self, text: str, varset: VarSet):
        self.varset = varset
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None:
                if text[pos:].strip():
                    raise PolyError(f"cannot tokenize {text[pos:]!r}")
                break
            self.tokens.append(m.group("num") or m.group("name") or m.group("op"))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def parse(self) -> Polynomial:
        p = self.expr()
        if self.peek() is not None:
            raise PolyError(f"unexpected token {self.peek()!r}")
        return p

    def expr(self) -> Polynomial:
        sign = 1.0
        while self.peek() in ("+", "-"):
            if self.next() == "-":
                sign = -sign
        p = self.term() * sign
        while self.peek() in ("+", "-"):
            op = self.next()
            p = p + self.term() * (1.0 if op == "+" else -1.0)
        return p

    def term(self) -> Polynomial:
        p = self.factor()
        while self.peek() == "*":
            self.next()
            p = p * self.factor()
        return p

    def factor(self) -> Polynomial:
        base = self.atom()
        if self.peek() in ("^", "**"):
            self.next()
            exp = self.next()
            if exp is None or not exp.isdigit():
                raise PolyError("exponent must be a nonnegative integer")
            base = base ** int(exp)
        return base

    def atom(self) -> Polynomial:
        t = self.next()
        if t is None:
            raise PolyError("unexpected end of input")
        if t == "(":
            p = self.expr()
            if self.next() != ")":
                raise PolyError("unbalanced parentheses")
            return p
        if t == "-":
            return -self.atom()
        if t[0].isdigit() or t[0] == ".":
            return Polynomial.constant(self.varset, float(t))
        return Polynomial.variable(self.varset, t)


def monomial_basis(varset: VarSet, active: Sequence[str], degree: int) -> list:
    """All exponent tuples of total degree <= ``degree`` in the ``active``
    variables (others fixed at exponent 0), in graded-lex order."""
    if degree < 0:
        raise PolyError("degree must be nonnegative")
    idx = [varset.index(n) for n in active]
    out = []

    def rec(pos, remaining, current):
        if pos == len(idx):
            out.append(tuple(current))
            return
        for k in range(remaining + 1):
            current[idx[pos]] = k
            rec(pos + 1, remaining - k, current)
        current[idx[pos]] = 0

    rec(0, degree, [0] * len(varset))
    out.sort(key=grlex_key)
    return out
