"""Built-in problem specifications.

Each builder returns a :class:`NamedSpec` carrying the problem data, a short
provenance note, and two degree presets: "desk" (small templates that solve
in seconds-to-minutes on a laptop) and "paper" (the larger templates used in
the original studies of these benchmarks; expect hours).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .poly import Polynomial, VarSet
from .problem import Degrees, ProblemSpec

BUILTIN = ("toy_integrator", "toy_integrator_disturbed", "dubins",
           "dubins_obstacle", "pendubot", "pursuer_evader")


@dataclass
class NamedSpec:
    name: str
    spec: ProblemSpec
    notes: str = ""
    desk_degrees: Degrees = field(default_factory=Degrees)
    paper_degrees: Optional[Degrees] = None
    sim_x0: Optional[list] = None      # a representative closed-loop seed


def _apply_scale(spec_kwargs: dict, scale: str, desk: Degrees,
                 paper: Optional[Degrees]):
    if scale == "desk" or paper is None:
        spec_kwargs["degrees"] = desk
    elif scale == "paper":
        spec_kwargs["degrees"] = paper
    else:
        raise ValueError(f"unknown degree scale {scale!r}")


def get(name: str, **kwargs) -> NamedSpec:
    """Look up a builtin spec by name."""
    builders = {
        "toy_integrator": toy_integrator,
        "toy_integrator_disturbed": lambda **kw: toy_integrator(
            disturbed=True, **kw),
        "dubins": dubins,
        "dubins_obstacle": lambda **kw: dubins(obstacle=True, **kw),
        "pendubot": pendubot,
        "pursuer_evader": pursuer_evader,
    }
    if name not in builders:
        raise KeyError(f"unknown builtin spec {name!r}; choose from {BUILTIN}")
    return builders[name](**kwargs)


# ---------------------------------------------------------------------------
# 1-D saturated integrator (analytic oracle)
# ---------------------------------------------------------------------------

def toy_integrator(T: float = 1.0, disturbed: bool = False,
                   scale: str = "desk") -> NamedSpec:
    """Single integrator xdot = u (+ w), |u| <= 1, target |x| <= 0.2.

    The exact backward reachable set over horizon T is |x0| <= 0.2 + T: the
    saturated control u = -sign(x) moves the state distance T.  With the
    disturbance variant the dynamics gain an additive w with energy budget
    R^2 = 0.01 released as q(t) = t^2/T^2 and amplitude bound 0.141.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    wnames = ["w1"] if disturbed else []
    vs = VarSet(("t", "x1", *wnames))
    x = Polynomial.variable(vs, "x1")
    one = Polynomial.constant(vs, 1.0)
    f = [Polynomial.variable(vs, "w1") if disturbed else Polynomial.zero(vs)]
    kwargs = dict(
        name="toy_integrator_disturbed" if disturbed else "toy_integrator",
        state_names=["x1"], input_dim=1,
        f=f, g=[[one]], t0=0.0, T=float(T),
        terminal=x * x - 0.04,
        A_rows=[[one], [-one]], b_rows=[one, one],
        eps=1e-3,
        sample_box=[(-(0.2 + T) * 1.5, (0.2 + T) * 1.5)],
        notes="1-D saturated integrator; exact reachable radius 0.2 + T",
    )
    if disturbed:
        t = Polynomial.variable(vs, "t")
        kwargs.update(w_names=wnames, R=0.1, q=t * t * (1.0 / T ** 2),
                      w_bar=0.141)
    desk = Degrees(V=2, k=2, s=2)
    _apply_scale(kwargs, scale, desk, None)
    return NamedSpec(name=kwargs["name"], spec=ProblemSpec(**kwargs),
                     notes=kwargs["notes"], desk_degrees=desk,
                     sim_x0=[0.19])


# ---------------------------------------------------------------------------
# Dubin's car in chained-form coordinates
# ---------------------------------------------------------------------------

def dubins_coordinates(a: float, b: float, theta: float) -> np.ndarray:
    """Map planar-car coordinates (position a, b; heading theta) to the
    chained-form states used by the polynomial model."""
    x1 = theta
    x2 = a * np.cos(theta) + b * np.sin(theta)
    x3 = 2.0 * (a * np.sin(theta) - b * np.cos(theta)) - theta * x2
    return np.array([x1, x2, x3])


def dubins(obstacle: bool = False, scale: str = "desk") -> NamedSpec:
    """Planar car in chained-form coordinates: x1' = u1, x2' = u2,
    x3' = x2 u1 - x1 u2, with u in [-1, 1]^2, horizon [0, 4], target ball
    of radius 0.2.  The obstacle variant additionally requires the funnel to
    avoid the ball of radius 0.5 centered at (1.5, 0, 0) at all times."""
    vs = VarSet(("t", "x1", "x2", "x3"))
    x1 = Polynomial.variable(vs, "x1")
    x2 = Polynomial.variable(vs, "x2")
    x3 = Polynomial.variable(vs, "x3")
    one = Polynomial.constant(vs, 1.0)
    zero = Polynomial.zero(vs)
    g = [[one, zero], [zero, one], [x2, -x1]]
    tube = []
    name = "dubins"
    notes = "planar car, chained-form coordinates, target ball radius 0.2"
    if obstacle:
        # keep-out ball: require 0.5^2 - |x - c|^2 <= 0 along the funnel
        obs = (x1 - 1.5) ** 2 + x2 * x2 + x3 * x3 - 0.25
        tube = [-obs]
        name = "dubins_obstacle"
        notes += "; keep-out ball radius 0.5 at (1.5, 0, 0)"
    kwargs = dict(
        name=name, state_names=["x1", "x2", "x3"], input_dim=2,
        f=[zero, zero, zero], g=g, t0=0.0, T=4.0,
        tube=tube,
        terminal=x1 * x1 + x2 * x2 + x3 * x3 - 0.04,
        A_rows=[[one, zero], [-one, zero], [zero, one], [zero, -one]],
        b_rows=[one, one, one, one],
        eps=1e-3,
        sample_box=[(-4.5, 4.5)] * 3,
        notes=notes,
    )
    desk = Degrees(V=2, k=1, s=2)
    paper = Degrees(V=6, k=2, s=2)
    _apply_scale(kwargs, scale, desk, paper)
    return NamedSpec(name=name, spec=ProblemSpec(**kwargs), notes=notes,
                     desk_degrees=desk, paper_degrees=paper,
                     sim_x0=[-0.8, 1.4, 0.3])


# ---------------------------------------------------------------------------
# Pendubot (two-link underactuated pendulum, cubic least-squares model)
# ---------------------------------------------------------------------------

def pendubot(scale: str = "desk") -> NamedSpec:
    """Two-link underactuated pendulum about its upright equilibrium, cubic
    polynomial model, torque bound |u| <= 1, horizon [0, 4]; the target is
    an axis-aligned ellipsoid around the origin."""
    vs = VarSet(("t", "x1", "x2", "x3", "x4"))
    x1 = Polynomial.variable(vs, "x1")
    x2 = Polynomial.variable(vs, "x2")
    x3 = Polynomial.variable(vs, "x3")
    x4 = Polynomial.variable(vs, "x4")
    zero = Polynomial.zero(vs)
    f2 = (x1 ** 3 * -10.656 + x1 ** 2 * x3 * 11.531 + x1 * x3 ** 2 * 7.885
          + x2 ** 2 * x3 * 0.797 + x2 * x3 * x4 * 0.841 + x3 ** 3 * 21.049
          + x3 * x4 ** 2 * 0.420 + x1 * 66.523 + x3 * -24.511)
    f4 = (x1 ** 3 * 10.996 + x1 ** 2 * x3 * -48.915 + x1 * x3 ** 2 * -6.404
          + x2 ** 2 * x3 * -2.396 + x2 * x3 * x4 * -1.594 + x3 ** 3 * -51.909
          + x3 * x4 ** 2 * -0.797 + x1 * -68.642 + x3 * 103.978)
    g2 = x3 * x3 * -10.096 + Polynomial.constant(vs, 44.252)
    g4 = x3 * x3 * 37.802 + Polynomial.constant(vs, -83.912)
    rT = (x1 * x1 * (1.0 / 0.1 ** 2) + x2 * x2 * (1.0 / 0.35 ** 2)
          + x3 * x3 * (1.0 / 0.1 ** 2) + x4 * x4 * (1.0 / 0.35 ** 2)
          - 1.0)
    one = Polynomial.constant(vs, 1.0)
    notes = ("two-link underactuated pendulum, cubic least-squares model on "
             "the unit angle box; ellipsoidal target")
    kwargs = dict(
        name="pendubot", state_names=["x1", "x2", "x3", "x4"], input_dim=1,
        f=[x2, f2, x4, f4], g=[[zero], [g2], [zero], [g4]],
        t0=0.0, T=4.0, terminal=rT,
        A_rows=[[one], [-one]], b_rows=[one, one],
        eps=1e-4,
        sample_box=[(-1.0, 1.0), (-3.5, 3.5), (-1.0, 1.0), (-4.5, 4.5)],
        notes=notes,
    )
    desk = Degrees(V=2, k=1, s=2)
    paper = Degrees(V=4, k=4, s=4)
    _apply_scale(kwargs, scale, desk, paper)
    return NamedSpec(name="pendubot", spec=ProblemSpec(**kwargs), notes=notes,
                     desk_degrees=desk, paper_degrees=paper,
                     sim_x0=[-0.35, 2.6, 0.35, -4.0])


# ---------------------------------------------------------------------------
# Pursuer-evader game (evader steering as bounded uncertainty)
# ---------------------------------------------------------------------------

def pursuer_evader(delta_cos_bound: float = 0.05,
                   scale: str = "desk") -> NamedSpec:
    """Relative-coordinate pursuit: the pursuer steers with u_p in [-1, 1]
    while the evader's steering u_e in [-0.5, 0.5] is treated as a bounded
    parameter.  Trigonometric terms are replaced by low-order fits valid on
    the half-pi heading range; ``delta_cos_bound`` covers the cosine fit
    error (0 drops that channel).  Target: unit ball in 2.6 seconds.

    Dynamics (unit speeds): x1' = -0.4298 x3^2 + d_cos + u_e x2,
    x2' = -0.1511 x3^3 + x3 - u_e x1, x3' = u_p - u_e.
    """
    if delta_cos_bound < 0:
        raise ValueError("delta_cos_bound must be nonnegative")
    dnames = ["ue"] + (["dc"] if delta_cos_bound > 0 else [])
    vs = VarSet(("t", "x1", "x2", "x3", *dnames))
    x1 = Polynomial.variable(vs, "x1")
    x2 = Polynomial.variable(vs, "x2")
    x3 = Polynomial.variable(vs, "x3")
    ue = Polynomial.variable(vs, "ue")
    zero = Polynomial.zero(vs)
    one = Polynomial.constant(vs, 1.0)
    # v_e = v_p = 1: the constants cancel in the first component after the
    # cosine substitution -0.4298 x3^2 + 1 (+ d_cos)
    f1 = x3 * x3 * -0.4298 + ue * x2
    if delta_cos_bound > 0:
        f1 = f1 + Polynomial.variable(vs, "dc")
    f2 = x3 ** 3 * -0.1511 + x3 - ue * x1
    f3 = -ue
    box = [0.5] + ([float(delta_cos_bound)] if delta_cos_bound > 0 else [])
    notes = ("pursuit in relative coordinates; evader steering and cosine "
             "fit error carried as box-bounded parameters")
    kwargs = dict(
        name="pursuer_evader", state_names=["x1", "x2", "x3"], input_dim=1,
        f=[f1, f2, f3], g=[[zero], [zero], [one]],
        t0=0.0, T=2.6,
        terminal=x1 * x1 + x2 * x2 + x3 * x3 - 1.0,
        A_rows=[[one], [-one]], b_rows=[one, one],
        delta_names=dnames, delta_box=box,
        eps=1e-3,
        sample_box=[(-4.0, 4.0)] * 3,
        notes=notes,
    )
    desk = Degrees(V=2, k=1, s=2)
    paper = Degrees(V=6, k=2, s=2)
    _apply_scale(kwargs, scale, desk, paper)
    return NamedSpec(name="pursuer_evader", spec=ProblemSpec(**kwargs),
                     notes=notes, desk_degrees=desk, paper_degrees=paper,
                     sim_x0=[0.5, 0.5, 0.0])
