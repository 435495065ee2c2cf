"""Independent verification of synthesis certificates.

Nothing here trusts the SDP solver: condition polynomials are rebuilt from
the problem spec and the certificate's own multipliers, matched against the
stored Gram matrices coefficient-by-coefficient, the Grams are checked for
positive semidefiniteness, and every set containment is probed by dense
deterministic sampling of the funnel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sdp
from .conditions import (conditions, delta_bound_terms,
                         growth_multiplier_info, membership_conditions,
                         multiplier_infos, w_norm_sq)
from .poly import Polynomial
from .problem import TIME_VAR, ProblemSpec, ambient_points
from .sosprog import LinPoly, residual

CERTIFIED = "certified"
TOLERANCE_FAIL = "tolerance-fail"
SAMPLE_FAIL = "sample-fail"

SAMPLE_MARGIN = 1e-7
MIN_ACCEPT_RATE = 1e-4


class MalformedCertificate(ValueError):
    pass


class SamplerError(RuntimeError):
    pass


@dataclass
class VerificationReport:
    residuals: dict = field(default_factory=dict)
    min_eigs: dict = field(default_factory=dict)
    containments: dict = field(default_factory=dict)  # name -> stats dict
    verdict: str = CERTIFIED
    tol_res: float = 1e-6
    tol_psd: float = 1e-6
    notes: list = field(default_factory=list)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        out = VerificationReport(tol_res=self.tol_res, tol_psd=self.tol_psd)
        out.residuals = {**self.residuals, **other.residuals}
        out.min_eigs = {**self.min_eigs, **other.min_eigs}
        out.containments = {**self.containments, **other.containments}
        out.notes = self.notes + other.notes
        verdicts = {self.verdict, other.verdict}
        if TOLERANCE_FAIL in verdicts:
            out.verdict = TOLERANCE_FAIL
        elif SAMPLE_FAIL in verdicts:
            out.verdict = SAMPLE_FAIL
        return out

    def to_text(self) -> str:
        lines = [f"verdict {self.verdict}"]
        for name in sorted(self.residuals):
            lines.append(f"identity {name} residual {self.residuals[name]:.3e} "
                         f"min-eig {self.min_eigs.get(name, float('nan')):.3e}")
        for name, st in sorted(self.containments.items()):
            lines.append(
                f"containment {name} samples {st['samples']} violations "
                f"{st['violations']} worst {st['worst']:.3e}")
        for note in self.notes:
            lines.append(f"note {note}")
        return "\n".join(lines) + "\n"


def _certificate_conditions(cert, spec: ProblemSpec):
    vs = spec.varset
    infos = multiplier_infos(spec)
    missing = [n for n in infos if n not in cert.multipliers]
    if missing:
        raise MalformedCertificate(f"certificate lacks multipliers {missing}")
    s = {n: LinPoly.from_poly(cert.multipliers[n], vs) for n in infos}
    V = LinPoly.from_poly(cert.V, vs)
    k = [LinPoly.from_poly(kj, vs) for kj in cert.k]
    V_prev = None
    all_infos = dict(infos)
    if cert.V_prev is not None and "s1" in cert.multipliers:
        V_prev = cert.V_prev.embed(vs)
        ginfo = growth_multiplier_info(spec)
        all_infos[ginfo.name] = ginfo
        s["s1"] = LinPoly.from_poly(cert.multipliers["s1"], vs)
    conds = conditions(spec, V, k, s, cert.gamma, V_prev=V_prev)
    conds += membership_conditions(spec, s, all_infos)
    return conds


def check_algebraic(cert, spec: ProblemSpec, tol_res: float = 1e-6,
                    tol_psd: float = 1e-6) -> VerificationReport:
    """Exact-identity residuals and Gram PSD checks for every condition."""
    report = VerificationReport(tol_res=tol_res, tol_psd=tol_psd)
    for cond in _certificate_conditions(cert, spec):
        expr = cond.expression.constant_part()
        entry = cert.grams.get(cond.name)
        if entry is None:
            report.residuals[cond.name] = math.inf
            report.min_eigs[cond.name] = -math.inf
            report.notes.append(f"missing gram for {cond.name}")
            continue
        basis, Q = entry
        report.residuals[cond.name] = residual(expr, np.asarray(Q), list(basis))
        report.min_eigs[cond.name] = sdp.min_eig(np.asarray(Q)) if len(basis) \
            else 0.0
    scale_res = max(report.residuals.values(), default=0.0)
    scale_eig = min(report.min_eigs.values(), default=0.0)
    if scale_res > tol_res or scale_eig < -tol_psd:
        report.verdict = TOLERANCE_FAIL
    return report


# ---------------------------------------------------------------------------
# Funnel sampling
# ---------------------------------------------------------------------------

def funnel_box(spec: ProblemSpec, cert, pad: float = 1.5) -> list:
    """Bounding box for the funnel via ray marching from the equilibrium,
    intersected with the spec's declared sampling box when one is given (the
    declared box covers the largest plausible funnel; the certificate's own
    level set can be far smaller, and a loose box starves rejection
    sampling)."""
    xeq = spec.equilibrium()
    t_grid = np.linspace(spec.t0, spec.T, 17)
    levels = np.array([spec.level(t, cert.gamma) for t in t_grid])

    def inside(x):
        pts = np.array([np.concatenate(([t], x, np.zeros(spec.nw + spec.ndelta)))
                        for t in t_grid])
        return np.any(cert.V.eval_batch(pts) <= levels)

    rng = np.random.default_rng(12345)
    dirs = [np.eye(spec.n)[i] * sgn for i in range(spec.n) for sgn in (1, -1)]
    extra = rng.standard_normal((8 * spec.n, spec.n))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True) + 1e-300
    dirs.extend(extra)
    half = np.zeros(spec.n)
    for d in dirs:
        lo, hi = 0.0, 1e-3
        while inside(xeq + hi * d) and hi < 1e6:
            lo = hi
            hi *= 2.0
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if inside(xeq + mid * d):
                lo = mid
            else:
                hi = mid
        half = np.maximum(half, np.abs(hi * d))
    half = np.maximum(half * pad, 1e-6)
    box = [(xeq[i] - half[i], xeq[i] + half[i]) for i in range(spec.n)]
    if spec.sample_box is not None:
        box = [(max(lo, slo), min(hi, shi))
               for (lo, hi), (slo, shi) in zip(box, spec.sample_box)]
    return box


def sample_funnel(spec: ProblemSpec, cert, n: int, seed: int,
                  box: Optional[list] = None, t_fixed: Optional[float] = None):
    """Deterministically sample (t, x) with x in the funnel level set.

    Uses counter-based Philox streams so the result is independent of any
    batching or worker partitioning.  Raises :class:`SamplerError` when the
    acceptance rate drops below MIN_ACCEPT_RATE.
    """
    box = box or funnel_box(spec, cert)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    ts: list = []
    xs: list = []
    tried = 0
    batch = max(4 * n, 1024)
    block = 0
    while len(ts) < n:
        rng = np.random.Generator(np.random.Philox(key=seed, counter=block))
        block += 1
        t_cand = (rng.uniform(spec.t0, spec.T, size=batch)
                  if t_fixed is None else np.full(batch, float(t_fixed)))
        x_cand = rng.uniform(lo, hi, size=(batch, spec.n))
        pts = ambient_points(spec, 0.0, x_cand)
        pts[:, 0] = t_cand
        vals = cert.V.eval_batch(pts)
        levels = np.array([spec.level(t, cert.gamma) for t in t_cand])
        keep = vals <= levels
        tried += batch
        ts.extend(t_cand[keep])
        xs.extend(x_cand[keep])
        if tried >= 20 * batch and len(ts) / tried < MIN_ACCEPT_RATE:
            raise SamplerError(
                f"funnel sampler acceptance rate {len(ts) / tried:.2e} below "
                f"{MIN_ACCEPT_RATE:.0e}; supply a tighter sample box")
    return np.array(ts[:n]), np.array(xs[:n])


def _uncertainty_samples(spec: ProblemSpec, n: int, seed: int):
    """Admissible (w, delta) draws; zero columns when a channel is absent or
    pinned (w_bar = 0 restricts w samples to 0)."""
    rng = np.random.Generator(np.random.Philox(key=seed + 1))
    w = np.zeros((n, spec.nw))
    d = np.zeros((n, spec.ndelta))
    if spec.nw and spec.w_bar > 0.0:
        raw = rng.standard_normal((n, spec.nw))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True) + 1e-300
        radius = spec.w_bar * rng.uniform(0, 1, size=(n, 1)) ** (1.0 / spec.nw)
        w = raw * radius
    if spec.ndelta:
        if spec.delta_box is not None:
            for c, bound in enumerate(spec.delta_box):
                d[:, c] = rng.uniform(-bound, bound, size=n)
        elif spec.delta_bar > 0.0:
            raw = rng.standard_normal((n, spec.ndelta))
            raw /= np.linalg.norm(raw, axis=1, keepdims=True) + 1e-300
            radius = spec.delta_bar * rng.uniform(0, 1, size=(n, 1)) ** (
                1.0 / spec.ndelta)
            d = raw * radius
    return w, d


def check_containments(cert, spec: ProblemSpec, n_samples: int = 10000,
                       seed: int = 0,
                       box: Optional[list] = None) -> VerificationReport:
    """Sampled verification of the funnel's defining containments: tube and
    terminal membership, input-polytope satisfaction, and the pointwise
    dissipation inequality (via exact polynomial derivatives)."""
    report = VerificationReport()
    vs = spec.varset

    ts, xs = sample_funnel(spec, cert, n_samples, seed, box=box)
    w, d = _uncertainty_samples(spec, n_samples, seed)
    pts = ambient_points(spec, 0.0, xs, w=w, delta=d)
    pts[:, 0] = ts

    def record(name, margins):
        viol = int(np.sum(margins > SAMPLE_MARGIN))
        report.containments[name] = {
            "samples": int(margins.size),
            "violations": viol,
            "worst": float(margins.max()) if margins.size else 0.0,
        }

    # tube rows r_j(t, x) <= 0 inside the funnel
    for j, r in enumerate(spec.tube):
        record(f"tube[{j}]", r.eval_batch(pts))

    # terminal set at t = T with the terminal level
    if spec.terminal is not None:
        tsT, xsT = sample_funnel(spec, cert, n_samples, seed + 7, box=box,
                                 t_fixed=spec.T)
        ptsT = ambient_points(spec, spec.T, xsT)
        record("terminal", spec.terminal.eval_batch(ptsT))

    # input polytope A(t,x) k <= b(t,x)
    if spec.n_p:
        u = np.stack([kj.eval_batch(pts) for kj in cert.k], axis=1)
        for i in range(spec.n_p):
            lhs = np.zeros(n_samples)
            for j in range(spec.m):
                lhs += spec.A_rows[i][j].eval_batch(pts) * u[:, j]
            record(f"sat[{i}]", lhs - spec.b_rows[i].eval_batch(pts))

    # dissipation dV/dt + dV/dx (f + g k) <= w'w, exact derivatives
    Vfull = cert.V.embed(vs)
    vdot = Vfull.diff(TIME_VAR)
    for i, xname in enumerate(spec.state_names):
        closed = spec.f[i]
        for j in range(spec.m):
            closed = closed + spec.g[i][j] * cert.k[j].embed(vs)
        vdot = vdot + Vfull.diff(xname) * closed
    rhs = w_norm_sq(spec) if spec.nw else Polynomial.zero(vs)
    record("dissipation", (vdot - rhs).eval_batch(pts))

    if any(st["violations"] for st in report.containments.values()):
        report.verdict = SAMPLE_FAIL
    return report


def verify(cert, spec: ProblemSpec, n_samples: int = 10000, seed: int = 0,
           tol_res: float = 1e-6, tol_psd: float = 1e-6,
           box: Optional[list] = None) -> VerificationReport:
    """Full verification: algebraic identities plus sampled containments."""
    alg = check_algebraic(cert, spec, tol_res=tol_res, tol_psd=tol_psd)
    cont = check_containments(cert, spec, n_samples=n_samples, seed=seed,
                              box=box)
    return alg.merge(cont)
