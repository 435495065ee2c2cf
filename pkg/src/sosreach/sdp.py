"""Conic problem solving behind a pluggable backend interface.

The default backend wraps CVXOPT's ``conelp`` primal-dual interior-point
solver.  Problems arrive in the :class:`~sosreach.sosprog.ConicProblem`
standard form

    minimize    c' y
    subject to  A y = b,  y = (free, nonneg, svec Gram blocks)

and are mapped to CVXOPT's ``min c'x  s.t.  Gx + s = h, Ax = b, s in K``
with x = y, the orthant part of K selecting the nonneg block and one dense
's' cone per Gram block.  Alternative solvers can be plugged in by
registering a callable with the same signature as :func:`solve`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .sosprog import ConicProblem, svec_index

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max-iter"
NUMERICAL_FAILURE = "numerical-failure"


class SdpError(ValueError):
    pass


@dataclass
class SolveOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 100

    def relaxed(self, factor: float = 100.0) -> "SolveOptions":
        return SolveOptions(self.tol_feas * factor, self.tol_gap * factor,
                            self.max_iter)


@dataclass
class ConicSolution:
    status: str
    y: Optional[np.ndarray] = None
    dual: Optional[np.ndarray] = None
    objective: Optional[float] = None
    dual_objective: Optional[float] = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)


def min_eig(M: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SdpError("matrix must be square")
    if M.shape[0] == 0:
        return 0.0
    scale = max(1.0, np.abs(M).max())
    if np.abs(M - M.T).max() > 1e-12 * scale:
        raise SdpError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def solve(cp: ConicProblem, opts: Optional[SolveOptions] = None,
          backend: Optional[Callable] = None) -> ConicSolution:
    """Solve a :class:`ConicProblem`.

    Returns a :class:`ConicSolution`; ``status == "optimal"`` guarantees the
    reported KKT residuals are below the requested tolerances.  Infeasible /
    unbounded verdicts come from the interior-point solver's certificates.
    """
    opts = opts or SolveOptions()
    if backend is not None:
        return backend(cp, opts)
    return _cvxopt_backend(cp, opts)


def _cvxopt_backend(cp: ConicProblem, opts: SolveOptions) -> ConicSolution:
    from cvxopt import matrix, solvers, spmatrix

    n = cp.n_vars()
    # cone rows: orthant then PSD blocks (full p*p entries each)
    rows_l = cp.n_nonneg
    dims = {"l": rows_l, "q": [], "s": list(cp.psd_dims)}
    total_rows = rows_l + sum(p * p for p in cp.psd_dims)
    if total_rows == 0:
        # pure linear equality problem; add a dummy orthant row 0 >= -1
        dims["l"] = 1
        G = spmatrix([], [], [], (1, n))
        h = matrix([1.0])
    else:
        gi, gj, gv = [], [], []
        for k in range(rows_l):
            gi.append(k)
            gj.append(cp.n_free + k)
            gv.append(-1.0)
        row = rows_l
        for off, p in zip(cp.gram_offsets, cp.psd_dims):
            for jcol in range(p):
                for irow in range(p):
                    gi.append(row + jcol * p + irow)
                    gj.append(off + svec_index(irow, jcol, p))
                    gv.append(-1.0)
            row += p * p
        G = spmatrix(gv, gi, gj, (total_rows, n))
        h = matrix(np.zeros(total_rows))

    A, b = cp.A, cp.b

    solver_opts = {
        "show_progress": False,
        "maxiters": opts.max_iter,
        "abstol": opts.tol_gap,
        "reltol": opts.tol_gap,
        "feastol": opts.tol_feas,
        "refinement": 1,
    }

    def run(Am, bm):
        return solvers.conelp(
            matrix(cp.c), G, h, dims,
            matrix(Am) if Am.size else matrix(np.zeros((0, n))),
            matrix(bm), options=solver_opts)

    try:
        try:
            sol = run(A, b)
        except ValueError:
            # typically "Rank(A) < p": drop dependent equality rows and retry
            Ar, br = _reduce_rows(A, b)
            sol = run(Ar, br)
    except (ZeroDivisionError, ArithmeticError):
        return ConicSolution(status=NUMERICAL_FAILURE)

    status = sol["status"]
    if status == "optimal":
        y = np.array(sol["x"]).ravel()
        dual = np.array(sol["y"]).ravel() if sol["y"] is not None else None
        return ConicSolution(
            status=OPTIMAL, y=y, dual=dual,
            objective=float(sol["primal objective"]),
            dual_objective=float(sol["dual objective"]),
            iterations=sol.get("iterations", 0),
            residuals={
                "primal": float(sol["primal infeasibility"] or 0.0),
                "dual": float(sol["dual infeasibility"] or 0.0),
                "gap": float(sol["relative gap"] or 0.0),
            })
    if status == "primal infeasible":
        return ConicSolution(status=INFEASIBLE)
    if status == "dual infeasible":
        return ConicSolution(status=UNBOUNDED)
    # "unknown": iteration cap or numerical trouble; pass back the iterate so
    # callers can decide, but flag it
    y = np.array(sol["x"]).ravel() if sol["x"] is not None else None
    return ConicSolution(status=MAX_ITER, y=y,
                         objective=float(sol["primal objective"])
                         if sol["primal objective"] is not None else None,
                         dual_objective=float(sol["dual objective"])
                         if sol["dual objective"] is not None else None)


def _reduce_rows(A: np.ndarray, b: np.ndarray):
    """Drop linearly dependent rows of [A | b] via QR with column pivoting."""
    if A.shape[0] == 0:
        return A, b
    from scipy.linalg import qr

    Ab = np.hstack([A, b[:, None]])
    _, _, piv = qr(Ab.T, mode="economic", pivoting=True)
    r = np.linalg.matrix_rank(Ab, tol=1e-10 * max(1.0, np.abs(Ab).max()))
    keep = sorted(piv[:r])
    return A[keep], b[keep]
