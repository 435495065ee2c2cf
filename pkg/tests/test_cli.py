"""End-to-end command-line workflows on the small builtin problem."""

import os

import pytest

from sosreach import cli


def _run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One synthesize run shared by the downstream subcommand tests."""
    d = tmp_path_factory.mktemp("cli")
    rc = _run(["synthesize", "--builtin", "toy_integrator",
               "--iters", "2", "--out", str(d)])
    assert rc == cli.EXIT_OK
    return d


def _cert(workdir):
    return str(workdir / "toy_integrator.cert.txt")


def _spec(workdir):
    return str(workdir / "toy_integrator.spec.txt")


# ---------------------------------------------------------------------------
# happy paths
# ---------------------------------------------------------------------------

def test_synthesize_writes_artifacts(workdir):
    for suffix in (".cert.txt", ".spec.txt", ".manifest.txt"):
        assert (workdir / f"toy_integrator{suffix}").exists()
    manifest = (workdir / "toy_integrator.manifest.txt").read_text()
    assert "spec_hash = " in manifest and "gamma = " in manifest


def test_synthesize_deterministic_certificate(workdir, tmp_path):
    rc = _run(["synthesize", "--builtin", "toy_integrator",
               "--iters", "2", "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    a = (workdir / "toy_integrator.cert.txt").read_bytes()
    b = (tmp_path / "toy_integrator.cert.txt").read_bytes()
    assert a == b


def test_certify_roundtrip(workdir, tmp_path):
    rc = _run(["certify", _cert(workdir), "--spec", _spec(workdir),
               "--samples", "2000", "--seed", "1", "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    report = (tmp_path / "toy_integrator.report.txt").read_text()
    assert report.startswith("verdict certified")


def test_certify_report_deterministic(workdir, tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    for d in (d1, d2):
        rc = _run(["certify", _cert(workdir), "--spec", _spec(workdir),
                   "--samples", "500", "--seed", "3", "--out", str(d)])
        assert rc == cli.EXIT_OK
    assert ((d1 / "toy_integrator.report.txt").read_bytes()
            == (d2 / "toy_integrator.report.txt").read_bytes())


def test_simulate_single_trace(workdir, tmp_path):
    rc = _run(["simulate", _cert(workdir), "--spec", _spec(workdir),
               "--x0", "0.1", "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    trace = (tmp_path / "toy_integrator.trace.txt").read_text()
    assert trace.splitlines()[0].startswith("#")


def test_simulate_monte_carlo(workdir, tmp_path):
    rc = _run(["simulate", _cert(workdir), "--spec", _spec(workdir),
               "--samples", "20", "--keep-traces", "2",
               "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    assert (tmp_path / "toy_integrator.montecarlo.txt").exists()
    assert (tmp_path / "toy_integrator.trace2.txt").exists()


def test_export_levelset(workdir, tmp_path):
    rc = _run(["export-levelset", _cert(workdir), "--spec", _spec(workdir),
               "--axes", "x1", "--bounds=-1.5:1.5", "--resolution", "51",
               "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    out = (tmp_path / "toy_integrator.levelset.txt").read_text()
    assert out.startswith("# level-set slice")


# ---------------------------------------------------------------------------
# failure modes and exit codes
# ---------------------------------------------------------------------------

def test_tampered_certificate_exits_4(workdir, tmp_path):
    text = (workdir / "toy_integrator.cert.txt").read_text()
    lines = []
    for ln in text.splitlines():
        if ln.startswith("gamma = "):
            ln = f"gamma = {float(ln.split('=')[1]) * 25.0!r}"
        lines.append(ln)
    bad = tmp_path / "bad.cert.txt"
    bad.write_text("\n".join(lines) + "\n")
    rc = _run(["certify", str(bad), "--spec", _spec(workdir),
               "--samples", "2000", "--out", str(tmp_path)])
    assert rc == cli.EXIT_CERTIFY


def test_bad_arguments_exit_1(tmp_path, capsys):
    assert _run(["synthesize"]) == cli.EXIT_USAGE          # no spec source
    assert _run(["frobnicate"]) == cli.EXIT_USAGE          # unknown command
    assert _run(["certify", str(tmp_path / "missing.cert.txt"),
                 "--builtin", "toy_integrator",
                 "--out", str(tmp_path)]) == cli.EXIT_USAGE
    capsys.readouterr()


def test_unknown_spec_key_exits_2(workdir, tmp_path, capsys):
    text = (workdir / "toy_integrator.spec.txt").read_text()
    mangled = tmp_path / "mangled.spec.txt"
    mangled.write_text(text + "bogus_key = 1\n")
    rc = _run(["certify", _cert(workdir), "--spec", str(mangled),
               "--out", str(tmp_path)])
    assert rc == cli.EXIT_SPEC
    capsys.readouterr()


def test_bad_x0_dimension_exits_1(workdir, tmp_path, capsys):
    rc = _run(["simulate", _cert(workdir), "--spec", _spec(workdir),
               "--x0", "0.1,0.2", "--out", str(tmp_path)])
    assert rc == cli.EXIT_USAGE
    capsys.readouterr()
