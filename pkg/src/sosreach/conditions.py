"""Construction of the S-procedure certificate conditions.

This module is the single source of truth for the polynomial identities
behind the synthesis subproblems and the independent certificate checker.
Every condition is assembled as a :class:`~sosreach.sosprog.LinPoly`; with
all inputs decision-free the result collapses to a plain polynomial, which
is how the verifier reuses the same code path.

Condition names are stable strings ("dissipation", "tube[j]", "sat[i]",
"terminal", "growth", "sos:<mult>", "pos:<mult>") shared across synthesis,
certificates and verification reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .poly import Polynomial
from .problem import TIME_VAR, ProblemSpec
from .sosprog import BilinearityError, LinPoly


@dataclass
class MultiplierInfo:
    name: str
    scope: tuple          # variable names spanning the multiplier
    degree: int
    eps_floor: bool = False       # membership is (s - eps) in SOS
    fixed_in_vstep: bool = False  # bilinear partner of V


@dataclass
class Condition:
    name: str
    expression: LinPoly
    scope: tuple          # gram variables for the SOS membership


def lp_mul(a: LinPoly, b: LinPoly) -> LinPoly:
    """Product of two LinPolys, at most one decision-dependent."""
    if a.is_const():
        return b.mul_poly(a.constant_part())
    if b.is_const():
        return a.mul_poly(b.constant_part())
    raise BilinearityError(
        "product of two free polynomial expressions; fix one side first")


def dissipation_scope(spec: ProblemSpec) -> tuple:
    if spec.has_uncertainty_vars():
        return (TIME_VAR, *spec.state_names, *spec.w_names, *spec.delta_names)
    return spec.tx_vars


def saturation_scope(spec: ProblemSpec) -> tuple:
    scope = [TIME_VAR, *spec.state_names]
    if "w" in spec.k_depends:
        scope.extend(spec.w_names)
    if "delta" in spec.k_depends:
        scope.extend(spec.delta_names)
    return tuple(scope)


def delta_bound_terms(spec: ProblemSpec) -> list:
    """(suffix, bound polynomial) pairs for the parametric-uncertainty set.

    Ball form gives a single d'd - delta_bar^2; the per-component box form
    gives one d_c^2 - bound_c^2 per channel.
    """
    vs = spec.varset
    out = []
    if spec.ndelta == 0:
        return out
    if spec.delta_box is not None:
        for c, (dname, bound) in enumerate(zip(spec.delta_names, spec.delta_box)):
            d = Polynomial.variable(vs, dname)
            out.append((f"[{c}]", d * d - float(bound) ** 2))
    elif spec.delta_bar > 0.0:
        ball = Polynomial.zero(vs)
        for dname in spec.delta_names:
            d = Polynomial.variable(vs, dname)
            ball = ball + d * d
        out.append(("", ball - spec.delta_bar ** 2))
    return out


def w_norm_sq(spec: ProblemSpec) -> Polynomial:
    vs = spec.varset
    p = Polynomial.zero(vs)
    for wname in spec.w_names:
        w = Polynomial.variable(vs, wname)
        p = p + w * w
    return p


def multiplier_infos(spec: ProblemSpec) -> dict:
    """Complete inventory of S-procedure multipliers this spec requires."""
    deg = spec.degrees
    have_h = spec.T > spec.t0
    sd = dissipation_scope(spec)
    ss = saturation_scope(spec)
    sat_robust_w = spec.nw > 0 and spec.w_bar > 0.0 and "w" in spec.k_depends
    sat_robust_d = bool(delta_bound_terms(spec)) and "delta" in spec.k_depends

    out = {}

    def add(name, scope, eps_floor=False, fixed=False):
        out[name] = MultiplierInfo(name, tuple(scope), deg.for_multiplier(name),
                                   eps_floor=eps_floor, fixed_in_vstep=fixed)

    add("s3", sd, fixed=True)
    if have_h:
        add("s2", sd)
    for j in range(len(spec.tube)):
        add(f"s4[{j}]", spec.tx_vars, eps_floor=True)
        if have_h:
            add(f"s7[{j}]", spec.tx_vars)
    if spec.terminal is not None:
        add("sa", spec.x_vars, eps_floor=True)
    for i in range(spec.n_p):
        add(f"s5[{i}]", ss, fixed=True)
        if have_h:
            add(f"s6[{i}]", ss)
        if sat_robust_w:
            add(f"s11[{i}]", ss)
        if sat_robust_d:
            for suffix, _ in delta_bound_terms(spec):
                add(f"s10[{i}]{suffix}", ss)
    if spec.nw > 0 and spec.w_bar > 0.0:
        add("s8", sd)
    for suffix, _ in delta_bound_terms(spec):
        add(f"s9{suffix}", sd)
    return out


def growth_multiplier_info(spec: ProblemSpec) -> MultiplierInfo:
    return MultiplierInfo("s1", spec.x_vars, spec.degrees.for_multiplier("s1"))


def conditions(spec: ProblemSpec, V: LinPoly, k: list, s: dict, gamma: float,
               V_prev: Optional[Polynomial] = None) -> list:
    """The main certificate conditions (each must be SOS).

    ``V``: storage function; ``k``: control components; ``s``: multipliers by
    name; ``gamma``: level.  If ``V_prev`` is given the level-set growth
    condition is appended (it uses ``s["s1"]``).
    """
    vs = spec.varset
    have_h = spec.T > spec.t0
    h = spec.h_poly()
    lev = spec.level_poly(gamma)
    sd = dissipation_scope(spec)
    ss = saturation_scope(spec)
    dterms = delta_bound_terms(spec)

    Vminus = V - lev
    out = []

    # dissipation: -(dV/dt + dV/dx (f + g k) [- w'w]) + s3 (V - lev)
    #              - s2 h + s8 (w'w - wbar^2) + s9 (d'd - dbar^2)
    Vdot = V.diff(TIME_VAR)
    for i, xname in enumerate(spec.state_names):
        closed = LinPoly.from_poly(spec.f[i], vs)
        for j in range(spec.m):
            closed = closed + lp_mul(LinPoly.from_poly(spec.g[i][j], vs), k[j])
        Vdot = Vdot + lp_mul(V.diff(xname), closed)
    expr = -Vdot + lp_mul(s["s3"], Vminus)
    if spec.nw > 0:
        expr = expr + w_norm_sq(spec)
    if have_h:
        expr = expr - s["s2"].mul_poly(h)
    if "s8" in s:
        expr = expr + s["s8"].mul_poly(w_norm_sq(spec) - spec.w_bar ** 2)
    for suffix, bound in dterms:
        expr = expr + s[f"s9{suffix}"].mul_poly(bound)
    out.append(Condition("dissipation", expr, sd))

    # target tube rows: -s4 r + V - lev - s7 h
    for j, r in enumerate(spec.tube):
        expr = -lp_mul(s[f"s4[{j}]"], LinPoly.from_poly(r, vs)) + Vminus
        if have_h:
            expr = expr - s[f"s7[{j}]"].mul_poly(h)
        out.append(Condition(f"tube[{j}]", expr, spec.tx_vars))

    # terminal target set: -sa r_T + V(T,.) - lev(T)
    if spec.terminal is not None:
        VT = V.subs_value(TIME_VAR, spec.T)
        expr = (-lp_mul(s["sa"], LinPoly.from_poly(spec.terminal, vs))
                + VT - Polynomial.constant(vs, spec.level(spec.T, gamma)))
        out.append(Condition("terminal", expr, spec.x_vars))

    # input polytope rows: b_i - A_i k + s5 (V - lev) - s6 h
    #                      + s11 (w'w - wbar^2) + s10 (d'd - dbar^2)
    for i in range(spec.n_p):
        expr = LinPoly.from_poly(spec.b_rows[i], vs)
        for j in range(spec.m):
            expr = expr - lp_mul(LinPoly.from_poly(spec.A_rows[i][j], vs), k[j])
        expr = expr + lp_mul(s[f"s5[{i}]"], Vminus)
        if have_h:
            expr = expr - s[f"s6[{i}]"].mul_poly(h)
        if f"s11[{i}]" in s:
            expr = expr + s[f"s11[{i}]"].mul_poly(w_norm_sq(spec) - spec.w_bar ** 2)
        for suffix, bound in dterms:
            name = f"s10[{i}]{suffix}"
            if name in s:
                expr = expr + s[name].mul_poly(bound)
        out.append(Condition(f"sat[{i}]", expr, ss))

    # level-set growth: -(V(t0,.) - gamma) + s1 (V_prev(t0,.) - gamma)
    if V_prev is not None:
        Vt0 = V.subs_value(TIME_VAR, spec.t0)
        prev0 = V_prev.subs(TIME_VAR, spec.t0) - gamma
        expr = -(Vt0 - Polynomial.constant(vs, gamma)) + lp_mul(
            s["s1"], LinPoly.from_poly(prev0, vs))
        out.append(Condition("growth", expr, spec.x_vars))

    return out


def membership_conditions(spec: ProblemSpec, s: dict, infos: dict) -> list:
    """SOS memberships for the multipliers themselves (with eps floors)."""
    vs = spec.varset
    out = []
    for name, expr in s.items():
        info = infos.get(name)
        if info is None:
            continue
        if info.eps_floor:
            out.append(Condition(f"pos:{name}",
                                 expr - Polynomial.constant(vs, spec.eps),
                                 info.scope))
        else:
            out.append(Condition(f"sos:{name}", expr.copy(), info.scope))
    return out


def sigma_poly(spec: ProblemSpec, scope: tuple, half_degree: int) -> Polynomial:
    """(1 + sum of squares of scope variables)^half_degree; every term has
    even exponents, so it carries an explicit diagonal SOS decomposition."""
    vs = spec.varset
    base = Polynomial.constant(vs, 1.0)
    for name in scope:
        v = Polynomial.variable(vs, name)
        base = base + v * v
    return base ** max(half_degree, 0)


def sigma_diag(sigma: Polynomial) -> list:
    """Diagonal SOS decomposition [(monomial exponents, weight)] with
    sigma = sum weight * (monomial)^2."""
    out = []
    for e, c in sigma.terms.items():
        if any(k % 2 for k in e):
            raise ValueError("sigma must have even exponents only")
        out.append((tuple(k // 2 for k in e), c))
    return out
