"""Iterative bilinear alternation for BRS inner-approximation synthesis.

The level step maximizes the certified level by bisection over SDP
feasibility with the storage function held fixed; the storage step updates
the storage function (and its multipliers) at the fixed level, control law
and bilinear multipliers, maximizing a uniform feasibility margin and
enforcing level-set growth.  Alternating the two never decreases the level.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sdp
from .conditions import (Condition, conditions, dissipation_scope,
                         growth_multiplier_info, membership_conditions,
                         multiplier_infos, sigma_diag, sigma_poly)
from .poly import Polynomial, VarSet
from .problem import TIME_VAR, ProblemSpec
from .sosprog import (AffExpr, LinPoly, SosProgram, compile_program, extract,
                      gram_matrix, svec_index)

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    pass


class InfeasibleAtGammaLo(SynthesisError):
    """The level step's lower bracket is already infeasible: the supplied
    storage function (or the templates) admit no certificate."""


class InitializationError(SynthesisError):
    pass


@dataclass
class SynthesisOptions:
    n_iter: int = 4
    bisect_tol: float = 1e-4          # absolute tolerance on the level
    bracket_cap: float = 2.0 ** 20
    margin_cap: float = 1.0
    feas_margin: float = -1e-7        # probe feasible iff margin >= this
                                      # (slightly negative: several conditions
                                      # are pinched to margin 0 at optimum)
    stall_tol: float = 1e-4           # relative level gain considered a stall
    stall_iters: int = 2
    solver: sdp.SolveOptions = field(default_factory=sdp.SolveOptions)
    verify: bool = True


@dataclass
class StepResult:
    gamma: float
    polys: dict               # name -> Polynomial (k components, multipliers)
    grams: dict               # condition name -> (basis, Q)
    margin: float
    solve_seconds: float = 0.0


@dataclass
class Certificate:
    spec_name: str
    spec_hash: str
    V: Polynomial
    k: list
    gamma: float
    multipliers: dict
    grams: dict
    gamma_history: list
    margins: list
    V_prev: Optional[Polynomial] = None
    tolerances: dict = field(default_factory=dict)
    status: str = "ok"
    timings: list = field(default_factory=list)   # (label, seconds)

    def level_at(self, spec: ProblemSpec, t: float) -> float:
        return spec.level(t, self.gamma)


# ---------------------------------------------------------------------------
# Stage program assembly
# ---------------------------------------------------------------------------

def _make_stage_program(spec: ProblemSpec, *, gamma: float,
                        V_fixed: Optional[Polynomial],
                        fixed_polys: Optional[dict] = None,
                        V_prev: Optional[Polynomial] = None,
                        margin_cap: float = 1.0):
    """Build the SOS program for one convex subproblem.

    ``V_fixed`` given -> level-step probe (control law and multipliers free);
    ``V_fixed`` None  -> storage step (``fixed_polys`` must carry the control
    components ``k[j]`` and the bilinear multipliers s3/s5, and ``V_prev``
    activates the growth condition).
    Returns (program, sigma map, mu AffExpr).
    """
    vs = spec.varset
    prog = SosProgram(vs)
    infos = multiplier_infos(spec)
    fixed_polys = fixed_polys or {}

    free_membership_names = []

    if V_fixed is not None:
        V = LinPoly.from_poly(V_fixed, vs)
    else:
        V = prog.new_poly_var("V", spec.tx_vars, spec.degrees.V).expr()

    k = []
    for j in range(spec.m):
        key = f"k[{j}]"
        if key in fixed_polys:
            k.append(LinPoly.from_poly(fixed_polys[key], vs))
        else:
            k.append(prog.new_poly_var(key, spec.k_vars(), spec.degrees.k).expr())

    s = {}
    for name, info in infos.items():
        if name in fixed_polys:
            s[name] = LinPoly.from_poly(fixed_polys[name], vs)
        else:
            s[name] = prog.new_poly_var(name, info.scope, info.degree).expr()
            free_membership_names.append(name)

    all_infos = dict(infos)
    if V_prev is not None:
        ginfo = growth_multiplier_info(spec)
        all_infos[ginfo.name] = ginfo
        s[ginfo.name] = prog.new_poly_var(ginfo.name, ginfo.scope,
                                          ginfo.degree).expr()
        free_membership_names.append(ginfo.name)

    conds = conditions(spec, V, k, s, gamma, V_prev=V_prev)
    conds += membership_conditions(
        spec, {n: s[n] for n in free_membership_names}, all_infos)

    if V_fixed is None and spec.terminal is not None:
        # Anchor the storage step: keep the equilibrium inside the terminal
        # level slice whenever it lies strictly inside the target.  Without
        # this the margin objective can push V above gamma everywhere, which
        # certifies an empty (vacuous) funnel.
        pt = np.zeros(len(vs))
        pt[0] = spec.T
        pt[1:1 + spec.n] = spec.equilibrium()
        if spec.terminal.eval(pt) < 0:
            v_at = V
            for name, val in zip(vs.names, pt):
                v_at = v_at.subs_value(name, float(val))
            v_expr = v_at.terms.get((0,) * len(vs), AffExpr())
            prog.add_ineq((-v_expr) + gamma)   # V(T, x_eq) <= gamma

    mu = prog.new_scalar("margin")
    prog.add_ineq((-mu) + margin_cap)          # mu <= cap
    sigmas = {}
    for c in conds:
        d = c.expression.degree()
        if d < 0:
            continue
        sigma = sigma_poly(spec, c.scope, (d + 1) // 2)
        sigmas[c.name] = sigma
        expr = c.expression - LinPoly.from_poly(sigma, vs).mul_aff(mu)
        prog.add_sos(expr, c.scope, c.name)
    prog.maximize(mu)
    return prog, sigmas, mu


def _iterate_feasible(cp, y: np.ndarray, tol_eq: float = 1e-6,
                      tol_cone: float = -1e-9) -> bool:
    """Direct primal-feasibility check of a solver iterate: equality
    residual, orthant part, and Gram block eigenvalues."""
    if cp.A.shape[0]:
        scale = 1.0 + float(np.abs(cp.b).max(initial=0.0))
        if float(np.abs(cp.A @ y - cp.b).max(initial=0.0)) > tol_eq * scale:
            return False
    nn = y[cp.n_free:cp.n_free + cp.n_nonneg]
    if nn.size and float(nn.min()) < tol_cone:
        return False
    for off, p in zip(cp.gram_offsets, cp.psd_dims):
        if sdp.min_eig(gram_matrix(y, off, p)) < tol_cone:
            return False
    return True


def _solve_stage(spec, prog, sigmas, opts: SynthesisOptions):
    """Compile, solve, and pull back one stage program.

    Returns (margin, polys, grams, status).  The margin contribution is folded
    back into each Gram so that the stored matrices decompose the *unrelaxed*
    condition expressions.
    """
    cp = compile_program(prog)
    sol = sdp.solve(cp, opts.solver)
    if sol.status == sdp.MAX_ITER:
        retry = sdp.solve(cp, opts.solver.relaxed())
        if retry.status == sdp.OPTIMAL:
            sol = retry
        else:
            # the interior-point iterate at the iteration cap is often
            # genuinely primal feasible; accept it if that can be checked
            # directly (extraction and re-verification still guard the result)
            cand = retry if retry.y is not None else sol
            if cand.y is not None and _iterate_feasible(cp, cand.y):
                sol = cand
            else:
                return None, None, None, retry.status
    if sol.status != sdp.OPTIMAL and sol.status != sdp.MAX_ITER:
        return None, None, None, sol.status
    ex = extract(prog, cp, sol.y)
    mu = float(ex.scalars[prog.scalar_names.index("margin")])

    grams = {}
    for c, off, p in zip(prog.sos_constraints, cp.gram_offsets, cp.psd_dims):
        basis = c.gram_basis
        Q = gram_matrix(sol.y, off, p)
        sigma = sigmas.get(c.name)
        if sigma is not None:
            index = {b: i for i, b in enumerate(basis)}
            for mono, weight in sigma_diag(sigma):
                Q[index[mono], index[mono]] += mu * weight
        grams[c.name] = (list(basis), Q)

    return mu, ex.polys, grams, sdp.OPTIMAL


# ---------------------------------------------------------------------------
# Level step (bisection over feasibility)
# ---------------------------------------------------------------------------

def gamma_step(spec: ProblemSpec, V_fixed: Polynomial, gamma_lo: float,
               gamma_hi: Optional[float] = None,
               opts: Optional[SynthesisOptions] = None) -> StepResult:
    """Maximize the certified level at fixed storage function by bisection.

    The feasibility oracle is the sign of the maximized uniform margin; an
    ambiguous solve is retried once with relaxed tolerances and then treated
    conservatively as infeasible.
    """
    opts = opts or SynthesisOptions()
    t_start = time.monotonic()
    cache = {}

    def probe(gamma: float):
        if gamma in cache:
            return cache[gamma]
        prog, sigmas, _ = _make_stage_program(
            spec, gamma=gamma, V_fixed=V_fixed, margin_cap=opts.margin_cap)
        mu, polys, grams, status = _solve_stage(spec, prog, sigmas, opts)
        feasible = status == sdp.OPTIMAL and mu >= opts.feas_margin
        result = (feasible, polys, grams, mu)
        cache[gamma] = result
        return result

    feasible, polys, grams, mu = probe(gamma_lo)
    if not feasible:
        raise InfeasibleAtGammaLo(
            f"level step infeasible at the lower bracket {gamma_lo!r} "
            f"(margin {mu!r}); the initial storage function or the template "
            "degrees admit no certificate")
    best = (gamma_lo, polys, grams, mu)

    if gamma_hi is None:
        step = max(abs(gamma_lo), 16 * opts.bisect_tol)
        lo = gamma_lo
        hi = lo + step
        cap = opts.bracket_cap * (abs(gamma_lo) + 1.0)
        while True:
            feasible, polys, grams, mu = probe(hi)
            if feasible:
                best = (hi, polys, grams, mu)
                lo = hi
                step *= 2.0
                hi = lo + step
                if hi > cap:
                    log.warning("level bracket cap reached at %g", hi)
                    break
            else:
                break
        gamma_hi = hi
        gamma_lo = lo
    else:
        if gamma_hi < gamma_lo:
            raise SynthesisError("upper bracket below lower bracket")

    while gamma_hi - gamma_lo > opts.bisect_tol:
        mid = 0.5 * (gamma_lo + gamma_hi)
        feasible, polys, grams, mu = probe(mid)
        if feasible:
            best = (mid, polys, grams, mu)
            gamma_lo = mid
        else:
            gamma_hi = mid

    gamma, polys, grams, mu = best
    return StepResult(gamma=gamma, polys=polys, grams=grams, margin=mu,
                      solve_seconds=time.monotonic() - t_start)


# ---------------------------------------------------------------------------
# Storage step
# ---------------------------------------------------------------------------

def v_step(spec: ProblemSpec, gamma: float, gamma_result: StepResult,
           V_prev: Polynomial,
           opts: Optional[SynthesisOptions] = None) -> StepResult:
    """Update the storage function at fixed level, control law and bilinear
    multipliers; maximizes the uniform feasibility margin and enforces that
    the new initial-time level set contains the previous one."""
    opts = opts or SynthesisOptions()
    t_start = time.monotonic()
    infos = multiplier_infos(spec)
    fixed = {}
    for j in range(spec.m):
        fixed[f"k[{j}]"] = gamma_result.polys[f"k[{j}]"]
    for name, info in infos.items():
        if info.fixed_in_vstep:
            fixed[name] = gamma_result.polys[name]

    prog, sigmas, _ = _make_stage_program(
        spec, gamma=gamma, V_fixed=None, fixed_polys=fixed, V_prev=V_prev,
        margin_cap=opts.margin_cap)
    mu, polys, grams, status = _solve_stage(spec, prog, sigmas, opts)
    if status != sdp.OPTIMAL:
        raise SynthesisError(
            f"storage step failed with status {status!r} at level {gamma!r}; "
            "this contradicts feasibility of the preceding level step")
    if mu < -1e-7:
        raise SynthesisError(
            f"storage step margin {mu!r} is negative; numerical inconsistency")
    return StepResult(gamma=gamma, polys=polys, grams=grams, margin=mu,
                      solve_seconds=time.monotonic() - t_start)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _linearization(spec: ProblemSpec):
    """Jacobian A = df/dx and input matrix B = g at (t0, x_eq, 0, 0)."""
    xeq = spec.equilibrium()
    vs = spec.varset
    pt = np.zeros(len(vs))
    pt[0] = spec.t0
    pt[1:1 + spec.n] = xeq
    A = np.zeros((spec.n, spec.n))
    B = np.zeros((spec.n, spec.m))
    for i in range(spec.n):
        for jx, xname in enumerate(spec.state_names):
            A[i, jx] = spec.f[i].diff(xname).eval(pt)
        for j in range(spec.m):
            B[i, j] = spec.g[i][j].eval(pt)
    return A, B, xeq


def _quadratic_form(spec: ProblemSpec, P: np.ndarray, xeq: np.ndarray) -> Polynomial:
    vs = spec.varset
    out = Polynomial.zero(vs)
    xs = [Polynomial.variable(vs, n) - float(c)
          for n, c in zip(spec.state_names, xeq)]
    for i in range(spec.n):
        for j in range(spec.n):
            if P[i, j] != 0.0:
                out = out + xs[i] * xs[j] * float(P[i, j])
    return out


def _target_quadratic(spec: ProblemSpec, xeq: np.ndarray) -> np.ndarray:
    """Half the Hessian of the terminal (or first tube) constraint at x_eq,
    symmetrized; identity when that is not positive definite."""
    r = spec.terminal if spec.terminal is not None else spec.tube[0]
    vs = spec.varset
    pt = np.zeros(len(vs))
    pt[0] = spec.T
    pt[1:1 + spec.n] = xeq
    H = np.zeros((spec.n, spec.n))
    for i, ni in enumerate(spec.state_names):
        for j, nj in enumerate(spec.state_names):
            H[i, j] = r.diff(ni).diff(nj).eval(pt)
    H = 0.5 * (H + H.T) / 2.0
    if np.linalg.eigvalsh(H)[0] > 1e-9:
        return H
    return np.eye(spec.n)


def probe_level(spec: ProblemSpec, V0: Polynomial, safety: float = 0.25,
                n_dirs: int = 64, seed: int = 0) -> float:
    """A level whose sub-level set of V0 sits strictly inside the target:
    scan rays from the equilibrium for the nearest target-boundary crossing
    and take a safety fraction of the smallest V0 value encountered."""
    xeq = spec.equilibrium()
    rng = np.random.default_rng(seed)
    dirs = [np.eye(spec.n)[i] * sgn for i in range(spec.n) for sgn in (1, -1)]
    extra = rng.standard_normal((n_dirs, spec.n))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True) + 1e-300
    dirs.extend(extra)

    constraints = list(spec.tube)
    if spec.terminal is not None:
        constraints.append(spec.terminal)
    t_samples = np.linspace(spec.t0, spec.T, 9)
    vs = spec.varset

    def worst(x):
        pt = np.zeros(len(vs))
        pt[1:1 + spec.n] = x
        vals = []
        for r in constraints:
            for t in t_samples:
                pt[0] = t
                vals.append(r.eval(pt))
        return max(vals)

    vpt = np.zeros(len(vs))
    vpt[0] = spec.t0
    best = math.inf
    for d in dirs:
        lo_s, hi_s = 0.0, 1e-6
        while worst(xeq + hi_s * d) < 0 and hi_s < 1e6:
            lo_s = hi_s
            hi_s *= 2.0
        if lo_s == 0.0:
            continue
        for _ in range(40):
            mid = 0.5 * (lo_s + hi_s)
            if worst(xeq + mid * d) < 0:
                lo_s = mid
            else:
                hi_s = mid
        vpt[1:1 + spec.n] = xeq + lo_s * d
        best = min(best, V0.eval(vpt))
    if not math.isfinite(best) or best <= 0:
        best = 1.0
    return safety * best


def initialize_V0(spec: ProblemSpec,
                  opts: Optional[SynthesisOptions] = None):
    """Quadratic initial storage function and a feasible starting level.

    Tries the Riccati solution of the linearization with identity weights;
    falls back to the target set's quadratic form.  The starting level is
    probed for feasibility, shrinking by powers of 10 (up to 6 attempts).
    """
    opts = opts or SynthesisOptions()
    A, B, xeq = _linearization(spec)
    P = None
    try:
        from scipy.linalg import solve_continuous_are

        P = solve_continuous_are(A, B, np.eye(spec.n), np.eye(spec.m))
        if not np.all(np.isfinite(P)) or np.linalg.eigvalsh(P)[0] <= 1e-9:
            P = None
    except Exception:
        P = None
    if P is None:
        P = _target_quadratic(spec, xeq)
    Vq = _quadratic_form(spec, P, xeq)

    gamma0 = probe_level(spec, Vq)
    span = spec.T - spec.t0
    vs = spec.varset
    t = Polynomial.variable(vs, TIME_VAR)
    # candidate storage functions: the plain quadratic, then variants with a
    # uniform decay in time (a shrinking funnel absorbs bounded adversarial
    # rates that a static shape cannot dominate near its minimum)
    candidates = [Vq]
    if span > 0:
        for c_frac in (0.5, 1.0, 2.0, 4.0):
            decay = (Polynomial.constant(vs, spec.T) - t) * (
                c_frac * gamma0 / span)
            candidates.append(Vq + decay)

    last_error: Optional[Exception] = None
    for V0 in candidates:
        for attempt in range(4):
            gamma_try = gamma0 * 10.0 ** (-attempt)
            try:
                gamma_step(spec, V0, gamma_try,
                           gamma_hi=gamma_try,   # single feasibility probe
                           opts=opts)
                return V0, gamma_try
            except InfeasibleAtGammaLo as e:
                last_error = e
    raise InitializationError(
        f"no feasible starting level found for {spec.name}; last probe: "
        f"{last_error}")


# ---------------------------------------------------------------------------
# Full alternation
# ---------------------------------------------------------------------------

def synthesize(spec: ProblemSpec, opts: Optional[SynthesisOptions] = None,
               V0: Optional[Polynomial] = None,
               gamma0: Optional[float] = None) -> Certificate:
    """Run the alternation for up to ``opts.n_iter`` iterations and return a
    verified :class:`Certificate` with a nondecreasing level history."""
    opts = opts or SynthesisOptions()
    if V0 is None:
        V0, gamma0 = initialize_V0(spec, opts)
    elif gamma0 is None:
        gamma0 = probe_level(spec, V0)
    V0 = V0.embed(spec.varset)

    V = V0
    gamma_lo = gamma0
    history: list = []
    margins: list = []
    timings: list = []
    cert: Optional[Certificate] = None
    status = "ok"

    for it in range(opts.n_iter):
        try:
            g = gamma_step(spec, V, gamma_lo, opts=opts)
            v = v_step(spec, g.gamma, g, V_prev=V, opts=opts)
        except (SynthesisError, sdp.SdpError) as e:
            if cert is None:
                raise
            status = f"warning: stopped at iteration {it + 1}: {e}"
            break
        timings.append((f"gamma-step {it + 1}", g.solve_seconds))
        timings.append((f"v-step {it + 1}", v.solve_seconds))
        history.append(g.gamma)
        margins.append(v.margin)
        cert = _assemble(spec, g, v, V, history, margins, timings, opts)
        gamma_lo = g.gamma
        V = v.polys["V"]
        if len(history) > opts.stall_iters:
            recent = history[-opts.stall_iters - 1:]
            scale = max(abs(recent[-1]), 1e-12)
            gains = [(b - a) / scale for a, b in zip(recent, recent[1:])]
            if all(gain < opts.stall_tol for gain in gains):
                log.info("level growth stalled after %d iterations", it + 1)
                break

    if cert is None:
        raise SynthesisError("no iteration completed")
    cert.status = status

    if opts.verify:
        from .certify import check_algebraic

        report = check_algebraic(cert, spec)
        if report.verdict != "certified":
            cert.status = (f"warning: internal re-verification failed "
                           f"({report.verdict})")
    return cert


def _assemble(spec, g: StepResult, v: StepResult, V_prev, history, margins,
              timings, opts) -> Certificate:
    infos = multiplier_infos(spec)
    mults = {}
    for name, info in infos.items():
        source = g if info.fixed_in_vstep else v
        mults[name] = source.polys[name]
    if "s1" in v.polys:
        mults["s1"] = v.polys["s1"]
    grams = dict(v.grams)
    # bilinear multipliers keep their level-step membership grams
    for name, info in infos.items():
        if info.fixed_in_vstep:
            key = f"sos:{name}"
            if key in g.grams:
                grams[key] = g.grams[key]
    k = [v.polys.get(f"k[{j}]", g.polys[f"k[{j}]"]) for j in range(spec.m)]
    return Certificate(
        spec_name=spec.name,
        spec_hash=spec.content_hash(),
        V=v.polys["V"],
        k=k,
        gamma=g.gamma,
        multipliers=mults,
        grams=grams,
        gamma_history=list(history),
        margins=list(margins),
        V_prev=V_prev,
        tolerances={"bisect_tol": opts.bisect_tol,
                    "solver_tol": opts.solver.tol_gap},
        timings=list(timings),
    )
