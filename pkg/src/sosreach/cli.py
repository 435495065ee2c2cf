"""Command-line front end.

Subcommands: ``synthesize``, ``certify``, ``simulate``, ``export-levelset``.
Artifacts are written atomically; a manifest records the spec hash, the
resolved configuration, the tool version and per-step wall time.

Exit codes: 0 success (for ``certify``: only on verdict=certified),
1 usage error, 2 invalid spec, 3 solver failure, 4 certification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, certify, models, serialize, simulate, synthesis
from .problem import Degrees, ProblemSpec, SpecError
from .sdp import SolveOptions

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SPEC = 2
EXIT_SOLVER = 3
EXIT_CERTIFY = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_spec_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=models.BUILTIN,
                     help="use a built-in problem spec")
    src.add_argument("--spec", metavar="PATH", help="problem spec file")
    p.add_argument("--deg-V", type=int, default=None)
    p.add_argument("--deg-k", type=int, default=None)
    p.add_argument("--deg-s", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--out", metavar="DIR", default=".",
                   help="output directory (default: current)")


def _load_spec(args) -> ProblemSpec:
    if args.builtin:
        spec = models.get(args.builtin).spec
    else:
        with open(args.spec) as fh:
            spec = serialize.spec_from_text(fh.read())
    changed = {}
    if args.deg_V is not None:
        changed["V"] = args.deg_V
    if args.deg_k is not None:
        changed["k"] = args.deg_k
    if args.deg_s is not None:
        changed["s"] = args.deg_s
    if changed:
        spec.degrees = Degrees(
            V=changed.get("V", spec.degrees.V),
            k=changed.get("k", spec.degrees.k),
            s=changed.get("s", spec.degrees.s),
            overrides=dict(spec.degrees.overrides))
    if args.eps is not None:
        spec.eps = args.eps
        spec.validate()
    return spec


def _write(outdir: str, name: str, text: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    serialize.write_atomic(path, text)
    return path


def _manifest(spec: ProblemSpec, args, extra: list) -> str:
    lines = ["[manifest]",
             f"tool_version = {__version__}",
             f"spec_name = {spec.name}",
             f"spec_hash = {spec.content_hash()}",
             "command = " + " ".join(sys.argv[1:])]
    lines.extend(extra)
    return "\n".join(lines) + "\n"


def _load_cert(path: str, spec: ProblemSpec):
    with open(path) as fh:
        cert = serialize.cert_from_text(fh.read(), spec)
    if cert.spec_hash and cert.spec_hash != spec.content_hash():
        print(f"warning: certificate was produced for spec hash "
              f"{cert.spec_hash}, current spec hashes to "
              f"{spec.content_hash()}", file=sys.stderr)
    return cert


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_synthesize(args) -> int:
    spec = _load_spec(args)
    opts = synthesis.SynthesisOptions(
        n_iter=args.iters, bisect_tol=args.tol_bisect,
        stall_iters=args.iters,       # run all requested iterations
        solver=SolveOptions())
    t0 = time.monotonic()
    try:
        cert = synthesis.synthesize(spec, opts)
    except synthesis.SynthesisError as e:
        print(f"synthesis failed: {e}", file=sys.stderr)
        return EXIT_SOLVER
    wall = time.monotonic() - t0
    cert_path = _write(args.out, f"{spec.name}.cert.txt",
                       serialize.cert_to_text(cert))
    _write(args.out, f"{spec.name}.spec.txt", serialize.spec_to_text(spec))
    extra = [f"wall_seconds = {wall!r}",
             f"gamma = {cert.gamma!r}",
             "gamma_history = " + " ".join(repr(g) for g in
                                           cert.gamma_history),
             f"status = {cert.status}"]
    extra.extend(f"seconds_{label.replace(' ', '_')} = {sec!r}"
                 for label, sec in cert.timings)
    _write(args.out, f"{spec.name}.manifest.txt",
           _manifest(spec, args, extra))
    print(f"certified level gamma = {cert.gamma!r} ({cert.status})")
    print(f"wrote {cert_path}")
    return EXIT_OK


def _cmd_certify(args) -> int:
    spec = _load_spec(args)
    cert = _load_cert(args.certificate, spec)
    report = certify.verify(cert, spec, n_samples=args.samples,
                            seed=args.seed)
    path = _write(args.out, f"{spec.name}.report.txt", report.to_text())
    _write(args.out, f"{spec.name}.certify-manifest.txt", _manifest(
        spec, args, [f"samples = {args.samples}", f"seed = {args.seed}",
                     f"verdict = {report.verdict}"]))
    print(report.to_text(), end="")
    print(f"wrote {path}")
    return EXIT_OK if report.verdict == certify.CERTIFIED else EXIT_CERTIFY


def _cmd_simulate(args) -> int:
    spec = _load_spec(args)
    cert = _load_cert(args.certificate, spec)
    if args.x0:
        x0 = [float(v) for v in args.x0.replace(",", " ").split()]
        if len(x0) != spec.n:
            print(f"--x0 needs {spec.n} components", file=sys.stderr)
            return EXIT_USAGE
        w_sig = simulate.random_w_signal(spec, args.seed) \
            if spec.nw else None
        d_sig = simulate.random_delta_signal(spec, args.seed) \
            if spec.ndelta else None
        trace = simulate.integrate(spec, cert, x0, dt=args.dt,
                                   w_signal=w_sig, d_signal=d_sig)
        path = _write(args.out, f"{spec.name}.trace.txt",
                      serialize.trace_to_text(trace, spec))
        print(f"in tube: {trace.in_tube()}; saturation hit: "
              f"{trace.saturation_hit}")
        print(f"wrote {path}")
        ok = trace.in_tube()
    else:
        summary = simulate.monte_carlo(spec, cert, n=args.samples,
                                       seed=args.seed, dt=args.dt)
        traces = summary.pop("traces")
        lines = ["[monte-carlo]"]
        lines.extend(f"{key} = {val!r}" for key, val in summary.items())
        path = _write(args.out, f"{spec.name}.montecarlo.txt",
                      "\n".join(lines) + "\n")
        for i, tr in enumerate(traces[:args.keep_traces]):
            _write(args.out, f"{spec.name}.trace{i + 1}.txt",
                   serialize.trace_to_text(tr, spec))
        print("\n".join(lines))
        print(f"wrote {path}")
        ok = summary["exits"] == 0
    _write(args.out, f"{spec.name}.simulate-manifest.txt", _manifest(
        spec, args, [f"seed = {args.seed}", f"dt = {args.dt!r}"]))
    return EXIT_OK if ok else EXIT_CERTIFY


def _cmd_export_levelset(args) -> int:
    spec = _load_spec(args)
    cert = _load_cert(args.certificate, spec)
    axes = args.axes.replace(",", " ").split() if args.axes else \
        list(spec.state_names[:min(2, spec.n)])
    if args.bounds:
        bounds = []
        for part in args.bounds.split(","):
            lo, _, hi = part.partition(":")
            bounds.append((float(lo), float(hi)))
    else:
        radius = max(1.0, 2.0 * abs(cert.gamma)) ** 0.5
        bounds = [(-radius, radius)] * len(axes)
    t = spec.t0 if args.t is None else args.t
    try:
        sl = simulate.export_levelset(spec, cert, t, axes, bounds,
                                      resolution=args.resolution)
    except simulate.SimulationError as e:
        print(f"export failed: {e}", file=sys.stderr)
        return EXIT_USAGE
    path = _write(args.out, f"{spec.name}.levelset.txt", sl.to_text())
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="sosreach",
                description="Certified inner-approximations of backward "
                            "reachable sets via SOS programming")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ps = sub.add_parser("synthesize", help="run the alternation and write a "
                                           "certificate")
    _add_spec_args(ps)
    ps.add_argument("--iters", type=int, default=4)
    ps.add_argument("--tol-bisect", type=float, default=1e-4)
    ps.set_defaults(fn=_cmd_synthesize)

    pc = sub.add_parser("certify", help="independently verify a certificate")
    pc.add_argument("certificate", help="certificate file")
    _add_spec_args(pc)
    pc.add_argument("--samples", type=int, default=10000)
    pc.add_argument("--seed", type=int, default=0)
    pc.set_defaults(fn=_cmd_certify)

    pm = sub.add_parser("simulate", help="closed-loop simulation under the "
                                         "certified control law")
    pm.add_argument("certificate", help="certificate file")
    _add_spec_args(pm)
    pm.add_argument("--x0", help="initial state, comma-separated "
                                 "(default: Monte-Carlo from the funnel)")
    pm.add_argument("--dt", type=float, default=None)
    pm.add_argument("--samples", type=int, default=100)
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--keep-traces", type=int, default=0,
                    help="also write the first N Monte-Carlo traces")
    pm.set_defaults(fn=_cmd_simulate)

    pl = sub.add_parser("export-levelset", help="grid slice of the certified "
                                                "level set")
    pl.add_argument("certificate", help="certificate file")
    _add_spec_args(pl)
    pl.add_argument("--t", type=float, default=None,
                    help="slice time (default: t0)")
    pl.add_argument("--axes", help="free state coordinates, e.g. x1,x2")
    pl.add_argument("--bounds", help="per-axis range lo:hi[,lo:hi]")
    pl.add_argument("--resolution", type=int, default=101)
    pl.set_defaults(fn=_cmd_export_levelset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (SpecError, serialize.FormatError) as e:
        print(f"invalid spec or file: {e}", file=sys.stderr)
        return EXIT_SPEC
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_USAGE
    except certify.SamplerError as e:
        print(f"sampler failure: {e}", file=sys.stderr)
        return EXIT_CERTIFY
    except synthesis.SynthesisError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
