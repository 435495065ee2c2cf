"""Closed-loop integration, disturbance signals and level-set export."""

import math

import numpy as np
import pytest

from sosreach import models, simulate, synthesis
from sosreach.poly import Polynomial, VarSet
from sosreach.problem import Degrees, ProblemSpec
from sosreach.synthesis import Certificate


@pytest.fixture(scope="module")
def toy():
    return models.toy_integrator(T=1.0).spec


@pytest.fixture(scope="module")
def toy_cert(toy):
    return synthesis.synthesize(toy, synthesis.SynthesisOptions(n_iter=2))


def _decay_spec():
    """Uncontrolled linear decay xdot = -x with exact solution x0 e^{-t}."""
    vs = VarSet(("t", "x1"))
    x = Polynomial.variable(vs, "x1")
    return ProblemSpec(
        name="decay", state_names=["x1"], input_dim=1,
        f=[-x], g=[[Polynomial.zero(vs)]], t0=0.0, T=1.0,
        terminal=x * x - 100.0, degrees=Degrees())


def _stub_cert(spec, V, k, gamma):
    return Certificate(spec_name=spec.name, spec_hash=spec.content_hash(),
                       V=V, k=k, gamma=gamma, multipliers={}, grams={},
                       gamma_history=[gamma], margins=[0.0])


# ---------------------------------------------------------------------------
# RK4 integration
# ---------------------------------------------------------------------------

def test_rk4_fourth_order_convergence():
    # halving dt shrinks the terminal error by about 2^4 on a smooth run
    spec = _decay_spec()
    k = [Polynomial.zero(spec.varset)]
    x0 = np.array([[1.0]])
    exact = math.exp(-1.0)
    errs = []
    for dt in (0.2, 0.1, 0.05):
        tr = simulate.integrate_batch(spec, k, x0, dt=dt)[0]
        errs.append(abs(tr.x[-1, 0] - exact))
    for e1, e2 in zip(errs, errs[1:]):
        assert 8.0 <= e1 / e2 <= 32.0


def test_fixed_point_constant_trace(toy, toy_cert):
    # the control law vanishes at the origin of the symmetric toy problem
    tr = simulate.integrate(toy, toy_cert, [0.0], dt=0.01)
    assert np.max(np.abs(tr.x)) < 1e-9
    assert tr.in_tube() and not tr.saturation_hit


def test_certified_boundary_reaches_target(toy, toy_cert):
    # [DERIVED] scaled saturated integrator: from any certified x0 the
    # closed loop must land inside |x| <= 0.2 at T = 1
    lead = toy_cert.V.terms.get((0, 2))
    const = toy_cert.V.terms.get((0, 0), 0.0)
    radius = math.sqrt((toy_cert.gamma - const) / lead) * 0.999
    for x0 in (radius, -radius):
        tr = simulate.integrate(toy, toy_cert, [x0])
        assert abs(tr.x[-1, 0]) <= 0.2 + 1e-6
        assert not tr.saturation_hit


def test_blowup_flagged():
    vs = VarSet(("t", "x1"))
    x = Polynomial.variable(vs, "x1")
    spec = ProblemSpec(name="escape", state_names=["x1"], input_dim=1,
                       f=[x * x], g=[[Polynomial.zero(vs)]], t0=0.0, T=5.0,
                       terminal=x * x - 1e6)
    with np.errstate(all="ignore"):
        tr = simulate.integrate_batch(spec, [Polynomial.zero(vs)],
                                      np.array([[2.0]]), dt=0.01)[0]
    assert tr.blew_up
    assert not tr.in_tube()
    assert np.all(np.isfinite(tr.x))      # frozen at the last finite value


def test_saturation_flag_on_clamp(toy):
    # a control law exceeding the polytope must raise the flag
    big = Polynomial.constant(toy.varset, 2.0)
    tr = simulate.integrate_batch(toy, [big], np.array([[0.0]]), dt=0.1)[0]
    assert tr.saturation_hit


def test_trace_grid_must_increase(toy):
    with pytest.raises(simulate.SimulationError):
        simulate.Trace(t=np.array([0.0, 0.0]), x=np.zeros((2, 1)),
                       u=np.zeros((2, 1)), w=np.zeros((2, 0)),
                       delta=np.zeros((2, 0)), tube_margin=np.zeros(2),
                       terminal_margin=-1.0)


# ---------------------------------------------------------------------------
# disturbance signals and budgets
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def disturbed():
    return models.toy_integrator(T=1.0, disturbed=True).spec


def test_random_signal_budgets(disturbed):
    spec = disturbed
    k = [Polynomial.zero(spec.varset)]
    for sample in range(5):
        sig = simulate.random_w_signal(spec, seed=5, sample=sample)
        tr = simulate.integrate_batch(spec, k, np.array([[0.0]]), dt=1e-3,
                                      w_signals=[sig])[0]
        # trapezoidal accounting of the realized energy against R^2 q(t)
        assert simulate.budget_violation(tr, spec) <= 1e-6
        assert np.max(np.abs(tr.w)) <= spec.w_bar + 1e-9


def test_random_signal_deterministic_substreams(disturbed):
    a = simulate.random_w_signal(disturbed, seed=1, sample=0)
    b = simulate.random_w_signal(disturbed, seed=1, sample=0)
    c = simulate.random_w_signal(disturbed, seed=1, sample=1)
    ts = np.linspace(0, 1, 17)
    va = np.array([a(t) for t in ts])
    assert np.array_equal(va, np.array([b(t) for t in ts]))
    assert not np.array_equal(va, np.array([c(t) for t in ts]))


def test_zero_signal():
    sig = simulate.zero_signal(2)
    assert np.array_equal(sig(0.3), np.zeros(2))


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def test_monte_carlo_toy_all_in_tube(toy, toy_cert):
    summary = simulate.monte_carlo(toy, toy_cert, n=100, seed=0)
    assert summary["exits"] == 0
    assert summary["saturation_hits"] == 0
    assert summary["worst_terminal_margin"] <= 1e-7


def test_monte_carlo_single_sample_at_minimizer(toy, toy_cert):
    summary = simulate.monte_carlo(toy, toy_cert, n=1, seed=4)
    assert summary["exits"] == 0


def test_monte_carlo_flags_inflated_certificate(toy, toy_cert):
    import copy

    bad = copy.deepcopy(toy_cert)
    lead = bad.V.terms.get((0, 2))
    const = bad.V.terms.get((0, 0), 0.0)
    bad.gamma = lead * 4.0 + const       # claims radius-2 initial set
    summary = simulate.monte_carlo(toy, bad, n=100, seed=0,
                                   box=[(-2.5, 2.5)])
    assert summary["exits"] > 0


# ---------------------------------------------------------------------------
# level-set export
# ---------------------------------------------------------------------------

def _ellipse_setup():
    vs = VarSet(("t", "x1", "x2"))
    x1 = Polynomial.variable(vs, "x1")
    x2 = Polynomial.variable(vs, "x2")
    one = Polynomial.constant(vs, 1.0)
    spec = ProblemSpec(name="ellipse", state_names=["x1", "x2"], input_dim=1,
                       f=[Polynomial.zero(vs)] * 2,
                       g=[[one], [one]], t0=0.0, T=1.0,
                       terminal=x1 * x1 + x2 * x2 - 1.0)
    V = x1 * x1 * 2.0 + x2 * x2 * 3.0
    cert = _stub_cert(spec, V, [Polynomial.zero(vs)], 1.0)
    return spec, cert


def _zero_crossing(grid, vals, level):
    sgn = vals - level
    idx = np.nonzero(np.diff(np.sign(sgn)))[0]
    return [0.5 * (grid[i] + grid[i + 1]) for i in idx]


def test_levelset_ellipse_axes():
    # [DERIVED] V = 2 x1^2 + 3 x2^2 at level 1 has semi-axes 1/sqrt(2),
    # 1/sqrt(3)
    spec, cert = _ellipse_setup()
    for axis, lam in (("x1", 2.0), ("x2", 3.0)):
        sl = simulate.export_levelset(spec, cert, 0.0, [axis],
                                      [(-1.0, 1.0)], resolution=2001)
        crossings = _zero_crossing(sl.grids[0], sl.values, sl.level)
        expected = 1.0 / math.sqrt(lam)
        assert len(crossings) == 2
        assert max(abs(abs(c) - expected) for c in crossings) < 2e-3


def test_levelset_2d_grid_and_text():
    spec, cert = _ellipse_setup()
    sl = simulate.export_levelset(spec, cert, 0.5, ["x1", "x2"],
                                  [(-1, 1), (-1, 1)], resolution=21)
    assert sl.values.shape == (21, 21)
    text = sl.to_text()
    assert text.splitlines()[0].startswith("# level-set slice")
    # gnuplot block separators between scan lines
    assert "\n\n" in text


def test_levelset_below_min_is_empty():
    spec, cert = _ellipse_setup()
    cert.gamma = -1.0
    sl = simulate.export_levelset(spec, cert, 0.0, ["x1"], [(-1, 1)])
    assert np.all(sl.values > sl.level)


def test_levelset_rejects_bad_slice():
    spec, cert = _ellipse_setup()
    with pytest.raises(simulate.SimulationError):
        simulate.export_levelset(spec, cert, 0.0, ["x1", "x2", "x2"],
                                 [(-1, 1)] * 3)
    with pytest.raises(simulate.SimulationError):
        simulate.export_levelset(spec, cert, 0.0, ["nope"], [(-1, 1)])
