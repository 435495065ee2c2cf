"""Text formats for problem specs, certificates, reports and traces.

All files are human-readable sectioned text ("[section]" headers with
"key = value" entries); polynomials use the infix syntax of
:meth:`Polynomial.parse` with full-precision coefficients, so a write/read
round trip is exact.  Unknown sections or keys are rejected rather than
ignored.  Writes go through a temp-file-plus-rename helper so partially
written artifacts never appear under their final name.
"""

from __future__ import annotations

import os
import re
import tempfile
from configparser import ConfigParser
from typing import Optional

import numpy as np

from .poly import Polynomial, VarSet
from .problem import Degrees, ProblemSpec
from .synthesis import Certificate

FORMAT_VERSION = "1"


class FormatError(ValueError):
    pass


def write_atomic(path: str, text: str):
    """Write text to ``path`` via a temp file in the same directory."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _new_parser() -> ConfigParser:
    cp = ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str          # keep key case and brackets
    return cp


def _floats(text: str) -> list:
    return [float(v) for v in text.split()]


def _fmt_floats(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


# ---------------------------------------------------------------------------
# Problem specs
# ---------------------------------------------------------------------------

_SPEC_KEYS = {"name", "states", "inputs", "t0", "T", "eps", "k_depends",
              "w_names", "delta_names", "R", "w_bar", "delta_bar",
              "delta_box", "x_eq", "sample_box", "notes"}
_DEGREE_BASE_KEYS = {"V", "k", "s"}


def spec_to_text(spec: ProblemSpec) -> str:
    lines = [f"# problem spec format v{FORMAT_VERSION}", "[spec]"]
    lines.append(f"name = {spec.name}")
    lines.append("states = " + " ".join(spec.state_names))
    lines.append(f"inputs = {spec.m}")
    lines.append(f"t0 = {spec.t0!r}")
    lines.append(f"T = {spec.T!r}")
    lines.append(f"eps = {spec.eps!r}")
    lines.append("k_depends = " + " ".join(spec.k_depends))
    if spec.w_names:
        lines.append("w_names = " + " ".join(spec.w_names))
    if spec.delta_names:
        lines.append("delta_names = " + " ".join(spec.delta_names))
    if spec.R:
        lines.append(f"R = {spec.R!r}")
    if spec.w_bar:
        lines.append(f"w_bar = {spec.w_bar!r}")
    if spec.delta_bar:
        lines.append(f"delta_bar = {spec.delta_bar!r}")
    if spec.delta_box is not None:
        lines.append("delta_box = " + _fmt_floats(spec.delta_box))
    if spec.x_eq is not None:
        lines.append("x_eq = " + _fmt_floats(spec.x_eq))
    if spec.sample_box is not None:
        lines.append("sample_box = " + " ; ".join(
            _fmt_floats(pair) for pair in spec.sample_box))
    if spec.notes:
        lines.append(f"notes = {spec.notes}")

    lines.append("")
    lines.append("[degrees]")
    lines.append(f"V = {spec.degrees.V}")
    lines.append(f"k = {spec.degrees.k}")
    lines.append(f"s = {spec.degrees.s}")
    for key in sorted(spec.degrees.overrides):
        lines.append(f"{key} = {spec.degrees.overrides[key]}")

    lines.append("")
    lines.append("[dynamics]")
    for i in range(spec.n):
        lines.append(f"f{i + 1} = {spec.f[i]}")
    for i in range(spec.n):
        for j in range(spec.m):
            lines.append(f"g{i + 1}_{j + 1} = {spec.g[i][j]}")

    lines.append("")
    lines.append("[target]")
    if spec.terminal is not None:
        lines.append(f"terminal = {spec.terminal}")
    for j, r in enumerate(spec.tube):
        lines.append(f"tube{j + 1} = {r}")

    if spec.n_p:
        lines.append("")
        lines.append("[inputs]")
        for i in range(spec.n_p):
            for j in range(spec.m):
                lines.append(f"A{i + 1}_{j + 1} = {spec.A_rows[i][j]}")
            lines.append(f"b{i + 1} = {spec.b_rows[i]}")

    if spec.q is not None:
        lines.append("")
        lines.append("[uncertainty]")
        lines.append(f"q = {spec.q}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> ProblemSpec:
    cp = _new_parser()
    try:
        cp.read_string(text)
    except Exception as e:
        raise FormatError(f"unparsable spec file: {e}") from None
    allowed_sections = {"spec", "degrees", "dynamics", "target", "inputs",
                        "uncertainty"}
    unknown = set(cp.sections()) - allowed_sections
    if unknown:
        raise FormatError(f"unknown sections {sorted(unknown)}")
    if "spec" not in cp or "dynamics" not in cp:
        raise FormatError("spec file must have [spec] and [dynamics]")

    sec = cp["spec"]
    bad = set(sec) - _SPEC_KEYS
    if bad:
        raise FormatError(f"unknown keys in [spec]: {sorted(bad)}")
    for req in ("name", "states", "inputs", "t0", "T"):
        if req not in sec:
            raise FormatError(f"[spec] is missing required key {req!r}")
    states = sec["states"].split()
    m = int(sec["inputs"])
    w_names = sec.get("w_names", "").split()
    delta_names = sec.get("delta_names", "").split()
    vs = VarSet(("t", *states, *w_names, *delta_names))

    def poly(s):
        try:
            return Polynomial.parse(s, vs)
        except Exception as e:
            raise FormatError(f"bad polynomial {s!r}: {e}") from None

    degrees = Degrees()
    if "degrees" in cp:
        overrides = {}
        for key, val in cp["degrees"].items():
            if key in _DEGREE_BASE_KEYS:
                setattr(degrees, key, int(val))
            elif key.startswith("s"):
                overrides[key] = int(val)
            else:
                raise FormatError(f"unknown key in [degrees]: {key!r}")
        degrees.overrides = overrides

    dyn = cp["dynamics"]
    f, g = [], []
    expect = {f"f{i + 1}" for i in range(len(states))} | {
        f"g{i + 1}_{j + 1}" for i in range(len(states)) for j in range(m)}
    bad = set(dyn) - expect
    if bad:
        raise FormatError(f"unknown keys in [dynamics]: {sorted(bad)}")
    for i in range(len(states)):
        if f"f{i + 1}" not in dyn:
            raise FormatError(f"[dynamics] is missing f{i + 1}")
        f.append(poly(dyn[f"f{i + 1}"]))
        row = []
        for j in range(m):
            key = f"g{i + 1}_{j + 1}"
            if key not in dyn:
                raise FormatError(f"[dynamics] is missing {key}")
            row.append(poly(dyn[key]))
        g.append(row)

    terminal = None
    tube = []
    if "target" in cp:
        for key, val in cp["target"].items():
            if key == "terminal":
                terminal = poly(val)
            elif key.startswith("tube"):
                tube.append((int(key[4:]), poly(val)))
            else:
                raise FormatError(f"unknown key in [target]: {key!r}")
        tube = [p for _, p in sorted(tube)]

    A_rows, b_rows = [], []
    if "inputs" in cp:
        for k in cp["inputs"]:
            if not re.fullmatch(r"A\d+_\d+|b\d+", k):
                raise FormatError(f"unknown key in [inputs]: {k!r}")
        rows = sorted({int(k[1:].split("_")[0]) for k in cp["inputs"]})
        for i in rows:
            row = []
            for j in range(m):
                key = f"A{i}_{j + 1}"
                if key not in cp["inputs"]:
                    raise FormatError(f"[inputs] is missing {key}")
                row.append(poly(cp["inputs"][key]))
            if f"b{i}" not in cp["inputs"]:
                raise FormatError(f"[inputs] is missing b{i}")
            A_rows.append(row)
            b_rows.append(poly(cp["inputs"][f"b{i}"]))
        expect = {f"A{i}_{j + 1}" for i in rows for j in range(m)} | {
            f"b{i}" for i in rows}
        bad = set(cp["inputs"]) - expect
        if bad:
            raise FormatError(f"unknown keys in [inputs]: {sorted(bad)}")

    q = None
    if "uncertainty" in cp:
        bad = set(cp["uncertainty"]) - {"q"}
        if bad:
            raise FormatError(f"unknown keys in [uncertainty]: {sorted(bad)}")
        if "q" in cp["uncertainty"]:
            q = poly(cp["uncertainty"]["q"])

    def opt_floats(key):
        return _floats(sec[key]) if key in sec else None

    sample_box = None
    if "sample_box" in sec:
        sample_box = [tuple(_floats(part))
                      for part in sec["sample_box"].split(";")]

    return ProblemSpec(
        name=sec["name"], state_names=states, input_dim=m, f=f, g=g,
        t0=float(sec["t0"]), T=float(sec["T"]),
        tube=tube, terminal=terminal, A_rows=A_rows, b_rows=b_rows,
        w_names=w_names, delta_names=delta_names,
        R=float(sec.get("R", "0")), q=q,
        w_bar=float(sec.get("w_bar", "0")),
        delta_bar=float(sec.get("delta_bar", "0")),
        delta_box=opt_floats("delta_box"),
        eps=float(sec.get("eps", "1e-4")),
        degrees=degrees,
        k_depends=tuple(sec.get("k_depends", "t x").split()),
        x_eq=opt_floats("x_eq"),
        sample_box=sample_box,
        notes=sec.get("notes", ""))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

def cert_to_text(cert: Certificate) -> str:
    lines = [f"# certificate format v{FORMAT_VERSION}", "[certificate]"]
    lines.append(f"spec_name = {cert.spec_name}")
    lines.append(f"spec_hash = {cert.spec_hash}")
    lines.append(f"gamma = {cert.gamma!r}")
    lines.append(f"status = {cert.status}")
    lines.append("gamma_history = " + _fmt_floats(cert.gamma_history))
    lines.append("margins = " + _fmt_floats(cert.margins))
    for key in sorted(cert.tolerances):
        lines.append(f"tol_{key} = {cert.tolerances[key]!r}")

    lines.append("")
    lines.append("[polynomials]")
    lines.append(f"V = {cert.V}")
    for j, kj in enumerate(cert.k):
        lines.append(f"k{j + 1} = {kj}")
    for name in sorted(cert.multipliers):
        lines.append(f"{name} = {cert.multipliers[name]}")
    if cert.V_prev is not None:
        lines.append(f"V_prev = {cert.V_prev}")

    for name in sorted(cert.grams):
        basis, Q = cert.grams[name]
        lines.append("")
        lines.append(f"[gram {name}]")
        lines.append("basis = " + " ".join(
            ",".join(str(e) for e in mono) for mono in basis))
        Q = np.asarray(Q)
        for r in range(Q.shape[0]):
            lines.append(f"row{r + 1} = " + _fmt_floats(Q[r]))
    return "\n".join(lines) + "\n"


_CERT_FIXED_KEYS = {"spec_name", "spec_hash", "gamma", "status",
                    "gamma_history", "margins"}


def cert_from_text(text: str, spec: ProblemSpec) -> Certificate:
    cp = _new_parser()
    try:
        cp.read_string(text)
    except Exception as e:
        raise FormatError(f"unparsable certificate file: {e}") from None
    if "certificate" not in cp or "polynomials" not in cp:
        raise FormatError(
            "certificate file must have [certificate] and [polynomials]")
    for section in cp.sections():
        if section not in ("certificate", "polynomials") and \
                not section.startswith("gram "):
            raise FormatError(f"unknown section [{section}]")
    head = cp["certificate"]
    for key in head:
        if key in _CERT_FIXED_KEYS or key.startswith("tol_"):
            continue
        raise FormatError(f"unknown key in [certificate]: {key!r}")

    vs = spec.varset

    def poly(s):
        try:
            return Polynomial.parse(s, vs)
        except Exception as e:
            raise FormatError(f"bad polynomial {s!r}: {e}") from None

    polys = cp["polynomials"]
    if "V" not in polys:
        raise FormatError("certificate lacks the storage function V")
    V = poly(polys["V"])
    k = []
    j = 1
    while f"k{j}" in polys:
        k.append(poly(polys[f"k{j}"]))
        j += 1
    if len(k) != spec.m:
        raise FormatError(
            f"certificate has {len(k)} control components, spec wants {spec.m}")
    V_prev = poly(polys["V_prev"]) if "V_prev" in polys else None
    multipliers = {key: poly(val) for key, val in polys.items()
                   if key not in {"V", "V_prev"} and not key.startswith("k")}

    grams = {}
    for section in cp.sections():
        if not section.startswith("gram "):
            continue
        name = section[5:]
        body = cp[section]
        if "basis" not in body:
            raise FormatError(f"[{section}] lacks its basis")
        basis = [tuple(int(v) for v in mono.split(","))
                 for mono in body["basis"].split()]
        p = len(basis)
        Q = np.zeros((p, p))
        for r in range(p):
            key = f"row{r + 1}"
            if key not in body:
                raise FormatError(f"[{section}] lacks {key}")
            vals = _floats(body[key])
            if len(vals) != p:
                raise FormatError(f"[{section}] {key} has wrong width")
            Q[r] = vals
        grams[name] = (basis, Q)

    tolerances = {key[4:]: float(val) for key, val in head.items()
                  if key.startswith("tol_")}
    return Certificate(
        spec_name=head.get("spec_name", spec.name),
        spec_hash=head.get("spec_hash", ""),
        V=V, k=k, gamma=float(head["gamma"]),
        multipliers=multipliers, grams=grams,
        gamma_history=_floats(head.get("gamma_history", "")),
        margins=_floats(head.get("margins", "")),
        V_prev=V_prev, tolerances=tolerances,
        status=head.get("status", "ok"))


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

def trace_to_text(trace, spec: ProblemSpec) -> str:
    cols = (["t"] + list(spec.state_names)
            + [f"u{j + 1}" for j in range(spec.m)]
            + list(spec.w_names) + list(spec.delta_names) + ["tube_margin"])
    lines = ["# closed-loop trace",
             f"# saturation_hit = {trace.saturation_hit}",
             f"# tube_exit_time = {trace.tube_exit_time!r}",
             f"# terminal_margin = {trace.terminal_margin!r}",
             f"# blew_up = {trace.blew_up}",
             "# columns: " + " ".join(cols)]
    for i in range(len(trace.t)):
        row = [trace.t[i], *trace.x[i], *trace.u[i], *trace.w[i],
               *trace.delta[i], trace.tube_margin[i]]
        lines.append(_fmt_floats(row))
    return "\n".join(lines) + "\n"
