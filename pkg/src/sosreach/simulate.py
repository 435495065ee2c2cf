"""Closed-loop simulation of the polynomial dynamics under a synthesized
control law, with disturbance signal generators, Monte-Carlo validation of
certified funnels, and level-set export for external plotting.

Integration is fixed-step classical RK4: traces are short-horizon and the
dynamics polynomial, so determinism beats adaptivity here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .certify import SamplerError, sample_funnel
from .poly import Polynomial
from .problem import ProblemSpec, ambient_points

TUBE_MARGIN = 1e-7
SAT_MARGIN = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass
class Trace:
    t: np.ndarray                 # (N+1,)
    x: np.ndarray                 # (N+1, n)
    u: np.ndarray                 # (N+1, m)  raw control-law output
    w: np.ndarray                 # (N+1, nw)
    delta: np.ndarray             # (N+1, ndelta)
    tube_margin: np.ndarray       # (N+1,)  max_j r_j(t, x(t)); -inf if no tube
    terminal_margin: float        # r_T(x(T)); -inf if no terminal set
    saturation_hit: bool = False
    tube_exit_time: Optional[float] = None
    blew_up: bool = False

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise SimulationError("trace time grid must be strictly increasing")
        n = len(self.t)
        for arr in (self.x, self.u, self.w, self.delta, self.tube_margin):
            if len(arr) != n:
                raise SimulationError("trace column lengths are inconsistent")

    def in_tube(self) -> bool:
        ok = self.tube_exit_time is None and not self.blew_up
        if math.isfinite(self.terminal_margin):
            ok = ok and self.terminal_margin <= TUBE_MARGIN
        return ok


# ---------------------------------------------------------------------------
# Disturbance / uncertainty signals
# ---------------------------------------------------------------------------

@dataclass
class DisturbanceSignal:
    """A deterministic map t -> vector, with budget metadata.

    Kinds: "zero"; "piecewise-constant-random" (value held constant at
    ``rate`` Hz, scaled by the envelope); "user" (arbitrary callable).
    """

    dim: int
    kind: str = "zero"
    fn: Optional[Callable] = None

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "zero" or self.fn is None:
            return np.zeros(self.dim)
        return np.asarray(self.fn(t), dtype=float).reshape(self.dim)


def zero_signal(dim: int) -> DisturbanceSignal:
    return DisturbanceSignal(dim=dim, kind="zero")


def user_signal(dim: int, fn: Callable) -> DisturbanceSignal:
    return DisturbanceSignal(dim=dim, kind="user", fn=fn)


def _held_table(rng, n_holds: int, dim: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n_holds, dim))


def random_w_signal(spec: ProblemSpec, seed: int, sample: int = 0,
                    rate: float = 50.0) -> DisturbanceSignal:
    """Budget-respecting random disturbance.

    A uniform(-1, 1) vector held piecewise constant at ``rate`` Hz is scaled
    by the envelope R * sqrt(q'(t)), which keeps the running energy under
    R^2 q(t) pointwise; the result is clipped to the L-infinity bound when
    one is declared.  ``sample`` selects an independent substream so batches
    partition deterministically.
    """
    if spec.nw == 0:
        return zero_signal(0)
    if spec.R <= 0.0 or spec.q is None:
        return zero_signal(spec.nw)
    rng = np.random.Generator(np.random.Philox(key=seed, counter=sample))
    span = spec.T - spec.t0
    n_holds = max(int(math.ceil(span * rate)), 1)
    table = _held_table(rng, n_holds, spec.nw)
    qdot = spec.q.diff("t")
    vs = spec.q.varset
    ti = vs.index("t")

    def fn(t: float) -> np.ndarray:
        tt = min(max(t, spec.t0), spec.T)
        idx = min(int((tt - spec.t0) * rate), n_holds - 1)
        pt = [0.0] * len(vs)
        pt[ti] = tt
        envelope = spec.R * math.sqrt(max(qdot.eval(pt), 0.0))
        w = envelope * table[idx]
        if spec.w_bar > 0.0:
            norm = float(np.linalg.norm(w))
            if norm > spec.w_bar:
                w = w * (spec.w_bar / norm)
        return w

    return DisturbanceSignal(dim=spec.nw, kind="piecewise-constant-random",
                             fn=fn)


def random_delta_signal(spec: ProblemSpec, seed: int, sample: int = 0,
                        rate: float = 50.0) -> DisturbanceSignal:
    """Admissible piecewise-constant parametric uncertainty (box or ball)."""
    if spec.ndelta == 0:
        return zero_signal(0)
    rng = np.random.Generator(np.random.Philox(key=seed + 1, counter=sample))
    span = spec.T - spec.t0
    n_holds = max(int(math.ceil(span * rate)), 1)
    table = _held_table(rng, n_holds, spec.ndelta)
    if spec.delta_box is not None:
        table = table * np.asarray(spec.delta_box, dtype=float)
    elif spec.delta_bar > 0.0:
        norms = np.linalg.norm(table, axis=1, keepdims=True)
        table = np.where(norms > 1.0, table / np.maximum(norms, 1e-300), table)
        table = table * spec.delta_bar
    else:
        table = table * 0.0

    def fn(t: float) -> np.ndarray:
        tt = min(max(t, spec.t0), spec.T)
        idx = min(int((tt - spec.t0) * rate), n_holds - 1)
        return table[idx]

    return DisturbanceSignal(dim=spec.ndelta,
                             kind="piecewise-constant-random", fn=fn)


def l2_budget(trace: Trace) -> np.ndarray:
    """Running disturbance energy int_{t0}^{t} w'w by trapezoidal quadrature."""
    if trace.w.shape[1] == 0:
        return np.zeros(len(trace.t))
    sq = np.sum(trace.w ** 2, axis=1)
    out = np.zeros(len(trace.t))
    dt = np.diff(trace.t)
    out[1:] = np.cumsum(0.5 * dt * (sq[:-1] + sq[1:]))
    return out


def budget_violation(trace: Trace, spec: ProblemSpec) -> float:
    """Worst excess of the realized energy over the declared budget R^2 q(t)."""
    if spec.nw == 0 or spec.R <= 0.0 or spec.q is None:
        return 0.0
    energy = l2_budget(trace)
    vs = spec.q.varset
    ti = vs.index("t")
    worst = -math.inf
    for t, e in zip(trace.t, energy):
        pt = [0.0] * len(vs)
        pt[ti] = t
        worst = max(worst, e - spec.R ** 2 * spec.q.eval(pt))
    return worst


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def _rhs_batch(spec: ProblemSpec, k: list, t: float, X: np.ndarray,
               w: np.ndarray, d: np.ndarray):
    """Vectorized closed-loop vector field; returns (Xdot, U)."""
    pts = ambient_points(spec, t, X, w=w, delta=d)
    U = np.stack([kj.eval_batch(pts) for kj in k], axis=1) if spec.m else \
        np.zeros((X.shape[0], 0))
    Xdot = np.stack([spec.f[i].eval_batch(pts) for i in range(spec.n)], axis=1)
    for i in range(spec.n):
        for j in range(spec.m):
            Xdot[:, i] += spec.g[i][j].eval_batch(pts) * U[:, j]
    return Xdot, U


def _sat_excess(spec: ProblemSpec, t: float, X: np.ndarray,
                w: np.ndarray, d: np.ndarray, U: np.ndarray) -> np.ndarray:
    """max_i (A(t,x) u - b)_i per sample; -inf when no polytope is given."""
    if spec.n_p == 0:
        return np.full(X.shape[0], -math.inf)
    pts = ambient_points(spec, t, X, w=w, delta=d)
    worst = np.full(X.shape[0], -math.inf)
    for i in range(spec.n_p):
        lhs = -spec.b_rows[i].eval_batch(pts)
        for j in range(spec.m):
            lhs += spec.A_rows[i][j].eval_batch(pts) * U[:, j]
        worst = np.maximum(worst, lhs)
    return worst


def _tube_margin(spec: ProblemSpec, t: float, X: np.ndarray) -> np.ndarray:
    if not spec.tube:
        return np.full(X.shape[0], -math.inf)
    pts = ambient_points(spec, t, X)
    worst = np.full(X.shape[0], -math.inf)
    for r in spec.tube:
        worst = np.maximum(worst, r.eval_batch(pts))
    return worst


def _time_grid(spec: ProblemSpec, dt: Optional[float]):
    span = spec.T - spec.t0
    if dt is None:
        dt = span / 2000.0 if span > 0 else 1.0
    if dt <= 0:
        raise SimulationError("dt must be positive")
    n_steps = max(int(round(span / dt)), 1) if span > 0 else 0
    return np.linspace(spec.t0, spec.T, n_steps + 1)


def integrate_batch(spec: ProblemSpec, k: list, X0: np.ndarray,
                    dt: Optional[float] = None,
                    w_signals: Optional[list] = None,
                    d_signals: Optional[list] = None) -> list:
    """RK4 integration of a batch of initial states; one Trace each.

    ``k`` is the list of control-law polynomials (e.g. ``cert.k``).  Signals
    are per-trace; defaults are zero.  A non-finite state freezes that trace
    at its last finite value and sets the blow-up flag.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    N, n = X0.shape
    if n != spec.n:
        raise SimulationError("initial state dimension mismatch")
    k = [kj.embed(spec.varset) for kj in k]
    w_signals = w_signals or [zero_signal(spec.nw) for _ in range(N)]
    d_signals = d_signals or [zero_signal(spec.ndelta) for _ in range(N)]
    tgrid = _time_grid(spec, dt)
    steps = len(tgrid) - 1

    X = X0.copy()
    alive = np.ones(N, dtype=bool)
    xs = np.empty((steps + 1, N, n))
    us = np.empty((steps + 1, N, spec.m))
    ws = np.empty((steps + 1, N, spec.nw))
    ds = np.empty((steps + 1, N, spec.ndelta))
    tube = np.empty((steps + 1, N))
    sat = np.full(N, -math.inf)

    w_zero = all(sig.kind == "zero" for sig in w_signals)
    d_zero = all(sig.kind == "zero" for sig in d_signals)
    w0 = np.zeros((N, spec.nw))
    d0 = np.zeros((N, spec.ndelta))

    def signals_at(t):
        w = w0 if w_zero else \
            np.array([sig(t) for sig in w_signals]).reshape(N, spec.nw)
        d = d0 if d_zero else \
            np.array([sig(t) for sig in d_signals]).reshape(N, spec.ndelta)
        return w, d

    for istep in range(steps + 1):
        t = tgrid[istep]
        w, d = signals_at(t)
        _, U = _rhs_batch(spec, k, t, X, w, d)
        xs[istep], us[istep], ws[istep], ds[istep] = X, U, w, d
        tube[istep] = _tube_margin(spec, t, X)
        sat = np.maximum(sat, _sat_excess(spec, t, X, w, d, U))
        if istep == steps:
            break
        h = tgrid[istep + 1] - t
        wm, dm = signals_at(t + 0.5 * h)
        w1, d1 = signals_at(t + h)
        k1, _ = _rhs_batch(spec, k, t, X, w, d)
        k2, _ = _rhs_batch(spec, k, t + 0.5 * h, X + 0.5 * h * k1, wm, dm)
        k3, _ = _rhs_batch(spec, k, t + 0.5 * h, X + 0.5 * h * k2, wm, dm)
        k4, _ = _rhs_batch(spec, k, t + h, X + h * k3, w1, d1)
        Xn = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        bad = ~np.all(np.isfinite(Xn), axis=1)
        alive &= ~bad
        X = np.where(alive[:, None], Xn, X)

    traces = []
    term_pts = ambient_points(spec, spec.T, xs[-1])
    term = spec.terminal.eval_batch(term_pts) if spec.terminal is not None \
        else np.full(N, -math.inf)
    for s in range(N):
        exits = np.nonzero(tube[:, s] > TUBE_MARGIN)[0]
        traces.append(Trace(
            t=tgrid.copy(), x=xs[:, s], u=us[:, s], w=ws[:, s],
            delta=ds[:, s], tube_margin=tube[:, s],
            terminal_margin=float(term[s]),
            saturation_hit=bool(sat[s] > SAT_MARGIN),
            tube_exit_time=float(tgrid[exits[0]]) if exits.size else None,
            blew_up=not bool(alive[s])))
    return traces


def integrate(spec: ProblemSpec, cert, x0, dt: Optional[float] = None,
              w_signal: Optional[DisturbanceSignal] = None,
              d_signal: Optional[DisturbanceSignal] = None) -> Trace:
    """Single closed-loop trace under the certificate's control law."""
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise SimulationError("initial state must be finite")
    return integrate_batch(
        spec, cert.k, x0[None, :], dt=dt,
        w_signals=[w_signal] if w_signal is not None else None,
        d_signals=[d_signal] if d_signal is not None else None)[0]


# ---------------------------------------------------------------------------
# Monte-Carlo validation
# ---------------------------------------------------------------------------

def monte_carlo(spec: ProblemSpec, cert, n: int, seed: int = 0,
                dt: Optional[float] = None, disturbed: bool = True,
                box: Optional[list] = None) -> dict:
    """Propagate ``n`` initial states sampled from the certified initial-time
    level set and summarize tube membership, terminal membership, saturation
    flags and disturbance budgets."""
    if n < 1:
        raise SimulationError("n must be at least 1")
    _, X0 = sample_funnel(spec, cert, n, seed, box=box, t_fixed=spec.t0)
    w_signals = None
    d_signals = None
    if disturbed:
        if spec.nw and spec.R > 0.0:
            w_signals = [random_w_signal(spec, seed, sample=s)
                         for s in range(n)]
        if spec.ndelta:
            d_signals = [random_delta_signal(spec, seed, sample=s)
                         for s in range(n)]
    traces = integrate_batch(spec, cert.k, X0, dt=dt, w_signals=w_signals,
                             d_signals=d_signals)
    exits = sum(0 if tr.in_tube() else 1 for tr in traces)
    worst_tube = max(float(tr.tube_margin.max()) for tr in traces)
    worst_term = max(tr.terminal_margin for tr in traces)
    worst_budget = max(budget_violation(tr, spec) for tr in traces)
    return {
        "n": n,
        "exits": exits,
        "exit_fraction": exits / n,
        "worst_tube_margin": worst_tube,
        "worst_terminal_margin": worst_term,
        "saturation_hits": sum(tr.saturation_hit for tr in traces),
        "blow_ups": sum(tr.blew_up for tr in traces),
        "worst_budget_excess": worst_budget,
        "traces": traces,
    }


# ---------------------------------------------------------------------------
# Level-set export
# ---------------------------------------------------------------------------

@dataclass
class LevelSlice:
    """Grid of V(t, .) values on a 1-D or 2-D coordinate slice, plus the
    level; zero contour of ``values - level`` is the level-set boundary."""

    axes: tuple                  # names of the free state coordinates
    grids: tuple                 # 1 or 2 arrays of grid coordinates
    values: np.ndarray           # (n1,) or (n1, n2) V values
    level: float
    t: float
    fixed: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"# level-set slice at t = {self.t!r}, level = {self.level!r}"]
        for name, val in sorted(self.fixed.items()):
            lines.append(f"# fixed {name} = {val!r}")
        lines.append("# columns: " + " ".join(self.axes) + " V")
        if len(self.axes) == 1:
            for a, v in zip(self.grids[0], self.values):
                lines.append(f"{float(a)!r} {float(v)!r}")
        else:
            for i, a in enumerate(self.grids[0]):
                for b, v in zip(self.grids[1], self.values[i]):
                    lines.append(f"{float(a)!r} {float(b)!r} {float(v)!r}")
                lines.append("")          # gnuplot block separator
        return "\n".join(lines) + "\n"


def export_levelset(spec: ProblemSpec, cert, t: float, axes: list,
                    bounds: list, resolution: int = 101,
                    fixed: Optional[dict] = None) -> LevelSlice:
    """Evaluate V(t, .) on a coordinate-aligned grid slice.

    ``axes``: 1 or 2 state names left free; ``bounds``: (lo, hi) per free
    axis; remaining states are pinned to ``fixed`` (default: equilibrium).
    """
    if not 1 <= len(axes) <= 2:
        raise SimulationError("slice must leave 1 or 2 coordinates free")
    if len(bounds) != len(axes):
        raise SimulationError("one (lo, hi) pair required per free axis")
    for a in axes:
        if a not in spec.state_names:
            raise SimulationError(f"unknown state coordinate {a!r}")
    xeq = spec.equilibrium()
    fixed = dict(fixed or {})
    fixed_full = {name: fixed.get(name, float(xeq[i]))
                  for i, name in enumerate(spec.state_names)
                  if name not in axes}
    grids = tuple(np.linspace(lo, hi, resolution) for lo, hi in bounds)
    if len(axes) == 1:
        states = np.tile([fixed_full.get(nm, 0.0) for nm in spec.state_names],
                         (resolution, 1))
        states[:, spec.state_names.index(axes[0])] = grids[0]
    else:
        aa, bb = np.meshgrid(grids[0], grids[1], indexing="ij")
        states = np.tile([fixed_full.get(nm, 0.0) for nm in spec.state_names],
                         (resolution * resolution, 1))
        states[:, spec.state_names.index(axes[0])] = aa.ravel()
        states[:, spec.state_names.index(axes[1])] = bb.ravel()
    pts = ambient_points(spec, t, states)
    vals = cert.V.eval_batch(pts)
    if len(axes) == 2:
        vals = vals.reshape(resolution, resolution)
    return LevelSlice(axes=tuple(axes), grids=grids, values=vals,
                      level=spec.level(t, cert.gamma), t=t,
                      fixed=fixed_full)
