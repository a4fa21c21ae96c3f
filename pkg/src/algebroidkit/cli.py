"""Command line front end: ``algebroidkit <command> <document> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import linalg
from . import scalar_field as sf
from .algebroid import validate_algebroid
from .contact import (
    AlmostContactStructure,
    EvenRankError,
    check_almost_contact,
    check_contact,
    check_contact_poisson_theorem,
    contact_hamiltonian_section_at,
    contact_poisson_bracket,
    induce_base_symplectic,
    reeb_section_at,
)
from .document import DocumentError, RunConfig, load_document
from .fixtures import fixture_path
from .symplectic import (
    CompatibleTriple,
    DecompositionError,
    HypothesisError,
    build_psi_morphism,
    check_compatible_triple,
    check_kernel_bracket_theorems,
    check_symplectic,
    decompose_fiber,
    decomposition_residuals,
    induce_base_triple,
    poisson_bracket,
    symplectic_distribution_at,
)
from .validation import DEFAULT_COUNT, DEFAULT_SEED, ValidationReport

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or a missing named object (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config(args) -> RunConfig:
    seed = args.seed
    if seed is None:
        env = os.environ.get("ALGEBROID_SEED", "").strip()
        seed = int(env) if env else DEFAULT_SEED
    return RunConfig(args.count, seed, args.tol, args.rank_tol, args.format)


def _load(path):
    p = Path(path)
    if not p.exists():
        shipped = fixture_path(p.stem)
        if p.parent == Path(".") and shipped.is_file():
            p = shipped
        else:
            raise UsageError(f"no such file: {path}")
    return load_document(p)


def _point(text, dim):
    parts = [s for s in text.split(",") if s.strip()] if text.strip() else []
    if len(parts) != dim:
        raise UsageError(f"point {text!r} needs {dim} comma-separated coordinates")
    try:
        return np.array([float(s) for s in parts])
    except ValueError:
        raise UsageError(f"point {text!r} is not a list of decimals") from None


def _function(doc, text):
    if text in doc.functions:
        return doc.functions[text]
    try:
        return sf.parse_expression(text, doc.chart)
    except sf.ExpressionSyntaxError as err:
        raise UsageError(f"cannot parse {text!r}: {err}") from None


def _named(getter, key):
    try:
        return getter(key)
    except KeyError as err:
        raise UsageError(err.args[0]) from None


def _triple(doc, args):
    return CompatibleTriple(
        _named(doc.form, args.form), _named(doc.endo, args.complex), _named(doc.metric, args.metric)
    )


def _emit_report(report: ValidationReport, cfg: RunConfig, title=None, extra=None, out=None):
    out = out or sys.stdout
    if cfg.output == "json":
        data = report.to_dict(seed=cfg.seed, tool_version=__version__)
        if extra:
            data.update(extra)
        out.write(json.dumps(data, indent=2) + "\n")
    else:
        if title:
            out.write(title + "\n")
        for line in report.lines():
            out.write("  " + line + "\n")
        out.write(("PASS" if report.passed else "FAIL") + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def _emit_value(cfg, payload: dict, text: str, out=None):
    out = out or sys.stdout
    if cfg.output == "json":
        payload = {"tool_version": __version__, **payload}
        out.write(json.dumps(payload, indent=2) + "\n")
    else:
        out.write(text + "\n")
    return EXIT_OK


def _vec(v):
    return [float(x) for x in np.asarray(v).ravel()]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args, cfg):
    doc = _load(args.file)
    report = validate_algebroid(doc.algebroid, cfg.plan, cfg.tol)
    title = f"{doc.name or args.file}: rank {doc.algebroid.rank} over a {doc.chart.dim}-dimensional chart"
    return _emit_report(report, cfg, title)


def cmd_check_symplectic(args, cfg):
    doc = _load(args.file)
    report = check_symplectic(doc.algebroid, _named(doc.form, args.form), cfg.plan, cfg.tol)
    return _emit_report(report, cfg, f"symplectic form {args.form}")


def cmd_check_triple(args, cfg):
    doc = _load(args.file)
    report = check_compatible_triple(doc.algebroid, _triple(doc, args), cfg.plan, cfg.tol)
    return _emit_report(report, cfg, f"triple ({args.form}, {args.complex}, {args.metric})")


def cmd_check_contact(args, cfg):
    doc = _load(args.file)
    report = check_contact(doc.algebroid, _named(doc.form, args.form), cfg.plan, cfg.tol)
    return _emit_report(report, cfg, f"contact form {args.form}")


def cmd_decompose(args, cfg):
    doc = _load(args.file)
    A = doc.algebroid
    triple = _triple(doc, args)
    p = _point(args.at, A.dim)
    dec = decompose_fiber(A, triple, p, cfg.rank_tol)
    res = decomposition_residuals(A, triple, dec)
    lam = symplectic_distribution_at(A, triple, p, cfg.rank_tol)
    blocks = {"E1": dec.E1, "E2": dec.E2, "L1": dec.L1, "L2": dec.L2}
    payload = {
        "point": _vec(p),
        "dims": dict(zip(blocks, dec.dims)),
        "blocks": {k: [_vec(col) for col in B.T] for k, B in blocks.items()},
        "distribution_dim": int(lam.shape[1]),
        "residuals": {k: float(v) for k, v in res.items()},
    }
    lines = [f"point {tuple(_vec(p))}"]
    for (k, B), d in zip(blocks.items(), dec.dims):
        lines.append(f"{k}: dim {d}")
        lines.extend(f"  {np.array2string(col, precision=6, suppress_small=True)}" for col in B.T)
    lines.append(f"symplectic distribution: dim {lam.shape[1]}")
    lines.extend(f"{k}: {v:.3e}" for k, v in res.items())
    return _emit_value(cfg, payload, "\n".join(lines))


def cmd_poisson(args, cfg):
    doc = _load(args.file)
    A = doc.algebroid
    p = _point(args.at, A.dim)
    br = poisson_bracket(A, _named(doc.form, args.form), _function(doc, args.f), _function(doc, args.g))
    v = br.value_at(p)
    return _emit_value(cfg, {"point": _vec(p), "value": v}, repr(v))


def cmd_reeb(args, cfg):
    doc = _load(args.file)
    A = doc.algebroid
    p = _point(args.at, A.dim)
    xi = reeb_section_at(A, _named(doc.form, args.form), p)
    text = " + ".join(f"{c!r}*{name}" for c, name in zip(_vec(xi), A.frame_names) if abs(c) > 0) or "0"
    return _emit_value(cfg, {"point": _vec(p), "frame": list(A.frame_names), "xi": _vec(xi)}, text)


def cmd_contact_poisson(args, cfg):
    doc = _load(args.file)
    A = doc.algebroid
    p = _point(args.at, A.dim)
    eta = _named(doc.form, args.form)
    f, g = _function(doc, args.f), _function(doc, args.g)
    br = contact_poisson_bracket(A, eta, f, g)
    v = br.value_at(p)
    af = contact_hamiltonian_section_at(A, eta, f, p)
    payload = {"point": _vec(p), "value": v, "agreement": [float(x) for x in br.agreement_at(p)], "a_f": _vec(af)}
    return _emit_value(cfg, payload, repr(v))


# ---------------------------------------------------------------------------
# theorem table
# ---------------------------------------------------------------------------


class _Table:
    def __init__(self):
        self.rows = []
        self.report = ValidationReport()

    def add(self, name, report: ValidationReport | None, note=""):
        if report is None:
            self.rows.append((name, "SKIP", note))
            return
        self.report.merge(report, name + ".")
        self.report.tolerance = report.tolerance
        self.rows.append((name, "PASS" if report.passed else "FAIL", note))

    def from_check(self, name, report, check, note_fail=""):
        """Row for a single check of ``report``; SKIP when it was not asserted."""
        if not report.has(check):
            return
        asserted = any(c.name == check for c in report.checks)
        c = report.check(check)
        if asserted:
            self.rows.append((name, "PASS" if c.passed else "FAIL", f"residual {c.max_residual:.2e}"))
        else:
            self.rows.append((name, "SKIP", note_fail))

    def text(self):
        width = max((len(r[0]) for r in self.rows), default=0)
        out = []
        for name, status, note in self.rows:
            out.append(f"{name + ':':<{width + 1}} {status}" + (f" ({note})" if note else ""))
        return "\n".join(out)


def _failed_flags(report, names):
    bad = [n for n in names if not report.flags.get(n, False)]
    return "hypotheses not met: " + ", ".join(bad) if bad else ""


def _theorems(doc, args, cfg) -> _Table:
    A = doc.algebroid
    plan, tol = cfg.plan, cfg.tol
    t = _Table()
    t.add("algebroid", validate_algebroid(A, plan, tol))

    omega = doc.forms.get(args.form)
    if omega is not None and omega.degree == 2:
        t.add("symplectic", check_symplectic(A, omega, plan, tol))
        J, g = doc.endos.get(args.complex), doc.metrics.get(args.metric)
        if J is not None and g is not None:
            triple = CompatibleTriple(omega, J, g)
            t.add("triple", check_compatible_triple(A, triple, plan, tol))
            kb = check_kernel_bracket_theorems(A, triple, plan, tol)
            t.report.merge(kb, "kernel.")
            t.from_check("L1_bracket", kb, "L1_bracket", _failed_flags(kb, ["compatible", "nondegenerate"]))
            t.from_check("L0", kb, "L0_kernel_bracket",
                         _failed_flags(kb, ["compatible", "nondegenerate", "transitive", "invariant_metric", "admissible"]))
            t.from_check("kahler_invariant", kb, "kahler_kernel_bracket",
                         _failed_flags(kb, ["kahler", "transitive", "invariant_metric"]))
            t.from_check("kahler_equivalence", kb, "kahler_equivalence")
            t.from_check("integrability", kb, "integrability_curvature", "omega not closed")
            if kb.flags.get("transitive") and kb.flags.get("admissible") and A.dim:
                try:
                    t.add("base_triple", induce_base_triple(A, triple, plan, tol).report)
                except HypothesisError as err:
                    t.add("base_triple", None, str(err))
            else:
                t.add("base_triple", None, _failed_flags(kb, ["transitive", "admissible"]))
            if kb.flags.get("transitive") and kb.flags.get("omega_kernel_nondegenerate") and A.dim:
                try:
                    _, rep = build_psi_morphism(A, omega, g, plan, tol)
                    t.add("psi_isomorphism", rep)
                except HypothesisError as err:
                    t.add("psi_isomorphism", None, str(err))
            else:
                t.add("psi_isomorphism", None, _failed_flags(kb, ["transitive", "omega_kernel_nondegenerate"]))

    eta = doc.forms.get(args.contact_form)
    if eta is not None and eta.degree == 1 and A.rank % 2 == 1:
        contact = check_contact(A, eta, plan, tol)
        t.add("contact", contact)
        if contact.passed:
            rep = check_contact_poisson_theorem(A, eta, plan, tol)
            note = "rho(xi)=0" if rep.flags["rho_xi_zero"] else "rho(xi)!=0, jacobi recorded only"
            t.add("contact_poisson", rep, note)
        phi, xi = doc.endos.get(args.phi), doc.sections.get(args.section)
        if phi is not None and xi is not None:
            s = AlmostContactStructure(phi, xi, eta, doc.metrics.get(args.metric))
            t.add("almost_contact", check_almost_contact(A, s, plan, tol))
            if s.g is not None and contact.passed:
                try:
                    t.add("base_symplectic", induce_base_symplectic(A, s, plan, tol).report)
                except HypothesisError as err:
                    t.add("base_symplectic", None, str(err))
    return t


def cmd_check_theorems(args, cfg):
    doc = _load(args.file)
    table = _theorems(doc, args, cfg)
    report = table.report
    report.tolerance = cfg.tol
    rows = [{"name": n, "status": s, "note": note} for n, s, note in table.rows]
    if cfg.output == "json":
        return _emit_report(report, cfg, extra={"table": rows})
    sys.stdout.write(table.text() + "\n")
    sys.stdout.write(("PASS" if report.passed else "FAIL") + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--count", type=int, default=DEFAULT_COUNT, help="random sample points (default %(default)s)")
    g.add_argument("--seed", type=int, default=None, help="sampling seed (default: $ALGEBROID_SEED or built in)")
    g.add_argument("--tol", type=float, default=1e-8, help="residual tolerance (default %(default)s)")
    g.add_argument("--rank-tol", type=float, default=linalg.DEFAULT_RANK_TOL, help="relative rank tolerance")
    g.add_argument("--format", choices=("text", "json"), default="text")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="algebroidkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(subparsers, name, func, help_, *extra):
        sp = subparsers.add_parser(name, parents=[common], help=help_)
        sp.add_argument("file", help="algebroid document (JSON)")
        for fn in extra:
            fn(sp)
        sp.set_defaults(func=func)
        return sp

    def form(default):
        return lambda sp: sp.add_argument("--form", default=default, help="name of the form (default %(default)s)")

    def triple(sp):
        sp.add_argument("--complex", default="J", help="almost complex structure (default %(default)s)")
        sp.add_argument("--metric", default="g", help="bundle metric (default %(default)s)")

    def functions(sp):
        sp.add_argument("-f", required=True, help="expression or named function")
        sp.add_argument("-g", required=True, help="expression or named function")

    def at(sp):
        sp.add_argument("--at", required=True, help="comma-separated point coordinates")

    add(sub, "validate", cmd_validate, "anchor homomorphism and Jacobi identity")
    check = sub.add_parser("check", help="verification suites").add_subparsers(dest="suite", required=True, metavar="SUITE")
    add(check, "symplectic", cmd_check_symplectic, "closed and nondegenerate 2-form", form("omega"))
    add(check, "triple", cmd_check_triple, "compatible triple (omega, J, g)", form("omega"), triple)
    add(check, "contact", cmd_check_contact, "contact condition", form("eta"))

    def theorem_opts(sp):
        sp.add_argument("--form", default="omega", help="symplectic form (default %(default)s)")
        sp.add_argument("--contact-form", default="eta", help="contact form (default %(default)s)")
        triple(sp)
        sp.add_argument("--phi", default="phi", help="almost contact endomorphism (default %(default)s)")
        sp.add_argument("--section", default="xi", help="almost contact section (default %(default)s)")

    add(check, "theorems", cmd_check_theorems, "every applicable theorem suite", theorem_opts)
    add(sub, "decompose", cmd_decompose, "fiber decomposition at a point", form("omega"), triple, at)
    add(sub, "poisson", cmd_poisson, "Poisson bracket of a symplectic form", form("omega"), functions, at)
    add(sub, "reeb", cmd_reeb, "Reeb section at a point", form("eta"), at)
    add(sub, "contact-poisson", cmd_contact_poisson, "contact Poisson bracket", form("eta"), functions, at)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except (HypothesisError, DecompositionError, linalg.RankInstabilityError, EvenRankError,
            np.linalg.LinAlgError, sf.DivisionNearZeroError) as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_FAIL
    except (UsageError, DocumentError, ValueError) as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_USAGE


run_command = main

if __name__ == "__main__":
    sys.exit(main())
