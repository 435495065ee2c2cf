"""Independent certificate verification and fault injection."""

import copy

import numpy as np
import pytest

from sosreach import certify, models, synthesis
from sosreach.poly import Polynomial


@pytest.fixture(scope="module")
def toy():
    return models.toy_integrator(T=1.0).spec


@pytest.fixture(scope="module")
def toy_cert(toy):
    return synthesis.synthesize(
        toy, synthesis.SynthesisOptions(n_iter=2))


def _clone(cert):
    return copy.deepcopy(cert)


# ---------------------------------------------------------------------------
# clean certificate
# ---------------------------------------------------------------------------

def test_clean_certificate_verifies(toy, toy_cert):
    report = certify.verify(toy_cert, toy, n_samples=2000, seed=1)
    assert report.verdict == certify.CERTIFIED
    assert max(report.residuals.values()) <= 1e-6
    assert min(report.min_eigs.values()) >= -1e-6
    assert all(st["violations"] == 0 for st in report.containments.values())


def test_report_text_has_verdict_line(toy, toy_cert):
    report = certify.check_algebraic(toy_cert, toy)
    text = report.to_text()
    assert text.startswith("verdict certified")
    assert "identity dissipation" in text


# ---------------------------------------------------------------------------
# fault injection
# ---------------------------------------------------------------------------

def test_gram_eigenvalue_fault_detected(toy, toy_cert):
    bad = _clone(toy_cert)
    basis, Q = bad.grams["dissipation"]
    Q = np.array(Q, dtype=float)
    Q[0, 0] -= 1e-3
    bad.grams["dissipation"] = (basis, Q)
    report = certify.check_algebraic(bad, toy)
    assert report.verdict == certify.TOLERANCE_FAIL


def test_multiplier_perturbation_fault_detected(toy, toy_cert):
    bad = _clone(toy_cert)
    s3 = bad.multipliers["s3"]
    bad.multipliers["s3"] = s3 + Polynomial.constant(s3.varset, 1e-3)
    report = certify.check_algebraic(bad, toy)
    assert report.verdict == certify.TOLERANCE_FAIL
    assert report.residuals["dissipation"] > 1e-4


def test_inflated_gamma_fault_detected_by_sampling(toy, toy_cert):
    bad = _clone(toy_cert)
    bad.gamma = toy_cert.gamma * 25.0     # claims a far larger certified set
    report = certify.check_containments(bad, toy, n_samples=2000, seed=2)
    assert report.verdict == certify.SAMPLE_FAIL
    assert report.containments["terminal"]["violations"] > 0


def test_missing_multiplier_is_malformed(toy, toy_cert):
    bad = _clone(toy_cert)
    del bad.multipliers["s3"]
    with pytest.raises(certify.MalformedCertificate):
        certify.check_algebraic(bad, toy)


def test_missing_gram_fails_tolerance(toy, toy_cert):
    bad = _clone(toy_cert)
    del bad.grams["terminal"]
    report = certify.check_algebraic(bad, toy)
    assert report.verdict == certify.TOLERANCE_FAIL
    assert any("terminal" in n for n in report.notes)


# ---------------------------------------------------------------------------
# sampling machinery
# ---------------------------------------------------------------------------

def test_sample_funnel_members_only(toy, toy_cert):
    ts, xs = certify.sample_funnel(toy, toy_cert, 500, seed=3)
    pts = np.zeros((500, 2))
    pts[:, 0] = ts
    pts[:, 1] = xs[:, 0]
    levels = np.array([toy.level(t, toy_cert.gamma) for t in ts])
    assert np.all(toy_cert.V.eval_batch(pts) <= levels)
    assert np.all((ts >= toy.t0) & (ts <= toy.T))


def test_sample_funnel_deterministic(toy, toy_cert):
    a = certify.sample_funnel(toy, toy_cert, 200, seed=9)
    b = certify.sample_funnel(toy, toy_cert, 200, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = certify.sample_funnel(toy, toy_cert, 200, seed=10)
    assert not np.array_equal(a[1], c[1])


def test_sampler_aborts_on_hopeless_box(toy, toy_cert):
    with pytest.raises(certify.SamplerError):
        certify.sample_funnel(toy, toy_cert, 1000, seed=0,
                              box=[(-1e4, 1e4)])


def test_funnel_box_covers_level_set(toy, toy_cert):
    spec = copy.deepcopy(toy)
    spec.sample_box = None               # force the ray-marching fallback
    box = certify.funnel_box(spec, toy_cert)
    (lo, hi), = box
    # the certified set has radius about sqrt(gamma / lead coeff); the box
    # must cover it
    assert lo < -0.15 and hi > 0.15
