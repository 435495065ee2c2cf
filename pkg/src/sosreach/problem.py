"""Problem specifications for backward-reachability synthesis.

A :class:`ProblemSpec` bundles the control-affine polynomial dynamics
``xdot = f(t,x,w,d) + g(t,x,w,d) u``, the horizon, the target tube and/or
terminal target set, the input polytope ``A(t,x) u <= b(t,x)``, and the
disturbance/uncertainty bounds.  All polynomials live over the single
ambient varset ``(t, x..., w..., d...)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .poly import Polynomial, VarSet

TIME_VAR = "t"


class SpecError(ValueError):
    pass


@dataclass
class Degrees:
    """Template degrees for the decision polynomials."""

    V: int = 2
    k: int = 1
    s: int = 2
    overrides: dict = field(default_factory=dict)   # multiplier name -> degree

    def for_multiplier(self, name: str) -> int:
        base = name.split("[")[0]
        return self.overrides.get(name, self.overrides.get(base, self.s))


@dataclass
class ProblemSpec:
    name: str
    state_names: list
    input_dim: int
    f: list                       # n polynomials
    g: list                       # n x m polynomials
    t0: float
    T: float
    tube: list = field(default_factory=list)   # r_j(t,x) <= 0 on [t0, T]
    terminal: Optional[Polynomial] = None      # r_T(x) <= 0 at t = T
    A_rows: list = field(default_factory=list)  # n_p rows, each m polynomials
    b_rows: list = field(default_factory=list)
    w_names: list = field(default_factory=list)
    delta_names: list = field(default_factory=list)
    R: float = 0.0
    q: Optional[Polynomial] = None             # energy-release profile in t
    w_bar: float = 0.0                         # 0 disables the Linf bound on w
    delta_bar: float = 0.0                     # ball bound on delta; 0 = none
    delta_box: Optional[list] = None           # per-component |d_c| bounds
    eps: float = 1e-4
    degrees: Degrees = field(default_factory=Degrees)
    k_depends: tuple = ("t", "x")              # subset of {"t","x","w","delta"}
    x_eq: Optional[list] = None
    sample_box: Optional[list] = None          # [(lo, hi)] per state
    notes: str = ""

    def __post_init__(self):
        self.validate()

    # -- derived structure --------------------------------------------

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return self.input_dim

    @property
    def n_p(self) -> int:
        return len(self.A_rows)

    @property
    def nw(self) -> int:
        return len(self.w_names)

    @property
    def ndelta(self) -> int:
        return len(self.delta_names)

    @property
    def varset(self) -> VarSet:
        return VarSet((TIME_VAR, *self.state_names, *self.w_names,
                       *self.delta_names))

    @property
    def tx_vars(self) -> tuple:
        return (TIME_VAR, *self.state_names)

    @property
    def x_vars(self) -> tuple:
        return tuple(self.state_names)

    def k_vars(self) -> tuple:
        out = []
        if "t" in self.k_depends:
            out.append(TIME_VAR)
        if "x" in self.k_depends:
            out.extend(self.state_names)
        if "w" in self.k_depends:
            out.extend(self.w_names)
        if "delta" in self.k_depends:
            out.extend(self.delta_names)
        return tuple(out)

    def has_uncertainty_vars(self) -> bool:
        return self.nw > 0 or self.ndelta > 0

    def equilibrium(self) -> np.ndarray:
        if self.x_eq is not None:
            return np.asarray(self.x_eq, dtype=float)
        return np.zeros(self.n)

    def level(self, t: float, gamma: float) -> float:
        """Funnel level gamma + R^2 q(t) at time t."""
        if self.R > 0.0 and self.q is not None:
            qt = self.q.eval(self._point_t(t))
            return gamma + self.R ** 2 * qt
        return gamma

    def level_poly(self, gamma: float) -> Polynomial:
        vs = self.varset
        lev = Polynomial.constant(vs, gamma)
        if self.R > 0.0 and self.q is not None:
            lev = lev + self.q.embed(vs) * self.R ** 2
        return lev

    def h_poly(self) -> Polynomial:
        """Interval certificate h(t) = (t - t0)(T - t), nonnegative on [t0, T]."""
        vs = self.varset
        t = Polynomial.variable(vs, TIME_VAR)
        return (t - self.t0) * (self.T - t)

    def _point_t(self, t: float) -> list:
        pt = [0.0] * len(self.q.varset)
        pt[self.q.varset.index(TIME_VAR)] = t
        return pt

    # -- validation ---------------------------------------------------

    def validate(self):
        if self.T < self.t0:
            raise SpecError("terminal time precedes initial time")
        if len(self.f) != self.n:
            raise SpecError("drift dimension does not match state count")
        if any(len(row) != self.m for row in self.g):
            raise SpecError("input matrix column count does not match input_dim")
        if len(self.g) != self.n:
            raise SpecError("input matrix row count does not match state count")
        if len(self.A_rows) != len(self.b_rows):
            raise SpecError("input polytope rows of A and b differ in count")
        if any(len(row) != self.m for row in self.A_rows):
            raise SpecError("input polytope row width does not match input_dim")
        if not self.tube and self.terminal is None:
            raise SpecError("neither a target tube nor a terminal set is given")
        if not set(self.k_depends) <= {"t", "x", "w", "delta"}:
            raise SpecError(f"unknown k dependence in {self.k_depends}")
        if not ({"t", "x"} & set(self.k_depends)):
            raise SpecError("k must depend on at least t or x")
        if self.eps <= 0:
            raise SpecError("eps must be positive")
        if self.R < 0 or self.w_bar < 0 or self.delta_bar < 0:
            raise SpecError("uncertainty bounds must be nonnegative")
        if self.R > 0:
            if self.nw == 0:
                raise SpecError("R > 0 requires disturbance channels")
            if self.q is None:
                raise SpecError("R > 0 requires the energy profile q(t)")
            q0 = self.q.eval(self._point_t(self.t0))
            qT = self.q.eval(self._point_t(self.T))
            if abs(q0) > 1e-9:
                raise SpecError(f"q(t0) = {q0}, expected 0")
            if abs(qT - 1.0) > 1e-9:
                raise SpecError(f"q(T) = {qT}, expected 1")
        if self.delta_box is not None and len(self.delta_box) != self.ndelta:
            raise SpecError("delta_box length does not match delta channel count")
        if self.x_eq is not None and len(self.x_eq) != self.n:
            raise SpecError("x_eq dimension does not match state count")
        if self.sample_box is not None and len(self.sample_box) != self.n:
            raise SpecError("sample_box dimension does not match state count")
        vs = self.varset
        for p in self._all_polys():
            if p.varset != vs:
                raise SpecError("all spec polynomials must share the ambient varset")

    def _all_polys(self):
        yield from self.f
        for row in self.g:
            yield from row
        yield from self.tube
        if self.terminal is not None:
            yield self.terminal
        for row in self.A_rows:
            yield from row
        yield from self.b_rows

    # -- identity -----------------------------------------------------

    def content_hash(self) -> str:
        parts = [self.name, repr(self.state_names), repr(self.w_names),
                 repr(self.delta_names), str(self.input_dim),
                 repr((self.t0, self.T, self.R, self.w_bar, self.delta_bar,
                       self.delta_box, self.eps, self.k_depends)),
                 repr((self.degrees.V, self.degrees.k, self.degrees.s,
                       sorted(self.degrees.overrides.items())))]
        parts.extend(str(p) for p in self._all_polys())
        if self.q is not None:
            parts.append(str(self.q))
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


@dataclass
class LevelSet:
    """Sub-level set {x : V(t, x) <= level} at a fixed time."""

    V: Polynomial
    t: float
    level: float

    def values(self, states: np.ndarray, spec: ProblemSpec) -> np.ndarray:
        pts = ambient_points(spec, self.t, states)
        return self.V.eval_batch(pts)

    def contains(self, states: np.ndarray, spec: ProblemSpec) -> np.ndarray:
        return self.values(states, spec) <= self.level


def ambient_points(spec: ProblemSpec, t, states: np.ndarray,
                   w: Optional[np.ndarray] = None,
                   delta: Optional[np.ndarray] = None) -> np.ndarray:
    """Assemble (N, nvars) evaluation points in ambient varset order."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    N = states.shape[0]
    pts = np.zeros((N, 1 + spec.n + spec.nw + spec.ndelta))
    pts[:, 0] = t
    pts[:, 1:1 + spec.n] = states
    if w is not None and spec.nw:
        pts[:, 1 + spec.n:1 + spec.n + spec.nw] = w
    if delta is not None and spec.ndelta:
        pts[:, 1 + spec.n + spec.nw:] = delta
    return pts
