"""Command line entry point: ``gausskj <command> [options]``.

Commands
--------
halfspace-table   T(s), T'(s) and Lambda(H_s) on a grid of offsets
torsion           torsion function and torsional rigidity of a domain
frequency         first Dirichlet eigenpair of a domain
rearrange         rearranged profile (tau, f, D^-1) of the first eigenfunction
verify            full comparison pipeline on one domain
suite             the pipeline on the built-in battery

Exit status: 0 success, 1 a verification check failed, 2 invalid input,
3 numerical failure.  ``KJ_LOG`` sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import ValidationError, build_mesh, domain_from_dict
from .ou_solver import HALFSPACE_H, NumericalError, halfspace_frequency, solve_frequency, torsional_rigidity
from .rearrange import (DEFAULT_H, DEFAULT_M, TOL_EQUALITY, TOL_INEQUALITY, PipelineError, builtin_suite,
                        build_rearrangement, default_tables, verify_domain)
from .coarea import level_profile
from .special import DomainError, halfspace_torsion, halfspace_torsion_deriv

logger = logging.getLogger("gausskj")

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


class InputError(Exception):
    """Invalid command line input; the message starts with a JSON pointer when one applies."""


def load_schema(name: str) -> dict:
    """One of the shipped JSON schemas (``domain`` or ``kj_report``)."""
    text = resources.files("gausskj").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


SCHEMAS = ("domain", "kj_report", "suite", "halfspace_table", "torsion", "frequency", "rearrange")
OUTPUT_SCHEMA = {"halfspace-table": "halfspace_table", "torsion": "torsion", "frequency": "frequency",
                 "rearrange": "rearrange", "verify": "kj_report", "suite": "suite"}


def validate_output(data, name: str) -> None:
    """Validate a JSON document against a shipped schema; raises ``jsonschema.ValidationError``."""
    import jsonschema
    from referencing import Registry, Resource

    registry = Registry().with_resources(
        (f"{n}.schema.json", Resource.from_contents(load_schema(n))) for n in SCHEMAS)
    jsonschema.Draft202012Validator(load_schema(name), registry=registry).validate(data)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def parse_domain(spec: str, override_convexity: bool = False):
    """Domain from a file path or an inline JSON document."""
    import jsonschema

    text = spec
    if not spec.lstrip().startswith("{"):
        try:
            text = Path(spec).read_text()
        except OSError as exc:
            raise InputError(f"cannot read domain file {spec!r}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"/: domain is not valid JSON ({exc.msg} at line {exc.lineno} column {exc.colno})") from exc
    validator = jsonschema.Draft202012Validator(load_schema("domain"))
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise InputError(f"{_pointer(e.absolute_path)}: {e.message}")
    try:
        return domain_from_dict(data, override_convexity=override_convexity)
    except ValidationError as exc:
        msg = str(exc)
        raise InputError(msg if msg.startswith("/") else f"/: {msg}") from exc


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def _num(x) -> str:
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def json_text(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _write(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _field_rows(mesh, values):
    cols = ["x", "y"][: mesh.dimension]
    return cols + ["value"], [list(p) + [v] for p, v in zip(mesh.nodes.tolist(), values.tolist())]


def _check_rows(report: dict, label: str = ""):
    rows = []
    items = list(report["checks"]) + list(report["theorem_4_2"].values())
    for c in items:
        rows.append([label, c["name"], c["kind"], c["left"], c["right"], c["tolerance"], c["margin"],
                     str(c["pass"]).lower()])
    for k, v in report["pointwise"].items():
        rows.append([label, k, "pointwise", "", "", "", v["min_margin_with_tolerance"], str(v["pass"]).lower()])
    return rows


_CHECK_HEADER = ["domain", "check", "kind", "left", "right", "tolerance", "margin", "pass"]


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _table_row(args):
    s, h = args
    return halfspace_frequency(s, h)


def cmd_halfspace_table(a) -> tuple[str, int]:
    n = int(round((a.s_max - a.s_min) / a.step))
    if n < 1 or a.step <= 0:
        raise InputError("need --s-max > --s-min and --step > 0")
    s = a.s_min + a.step * np.arange(n + 1)
    h = a.h if a.h is not None else HALFSPACE_H
    T = halfspace_torsion(s)
    dT = halfspace_torsion_deriv(s)
    jobs = [(float(x), h) for x in s]
    if a.workers > 1:
        with ProcessPoolExecutor(max_workers=a.workers) as pool:
            lam = list(pool.map(_table_row, jobs, chunksize=8))
    else:
        lam = [_table_row(j) for j in jobs]
    rows = [[float(x), float(t), float(d), float(l)] for x, t, d, l in zip(s, T, dT, lam)]
    header = ["s", "T", "dT", "Lambda"]
    if a.format == "csv":
        return csv_text(header, rows), EXIT_OK
    return json_text({"version": __version__, "timestamp": _timestamp(), "h": h, "columns": header,
                      "rows": rows}), EXIT_OK


def _domain(a):
    if a.domain is None:
        raise InputError("/: --domain is required for this command")
    return parse_domain(a.domain, a.override_convexity)


def cmd_torsion(a) -> tuple[str, int]:
    dom = _domain(a)
    mesh = build_mesh(dom, a.h)
    T, d = torsional_rigidity(mesh)
    if a.format == "csv":
        return csv_text(*_field_rows(mesh, d.field.values)), EXIT_OK
    return json_text({"version": __version__, "timestamp": _timestamp(), "domain": dom.to_dict(),
                      "hypothesis_satisfied": bool(getattr(dom, "convex", True)), "h": a.h,
                      "nodes": int(mesh.n_nodes), "torsional_rigidity": T, "energy": d.energy, "ratio": d.ratio,
                      "functional": d.functional, "characterisation_gap": d.relative_gap}), EXIT_OK


def cmd_frequency(a) -> tuple[str, int]:
    dom = _domain(a)
    mesh = build_mesh(dom, a.h)
    res = solve_frequency(mesh)
    if a.format == "csv":
        return csv_text(*_field_rows(mesh, res.eigenfunction.values)), EXIT_OK
    return json_text({"version": __version__, "timestamp": _timestamp(), "domain": dom.to_dict(),
                      "hypothesis_satisfied": bool(getattr(dom, "convex", True)), "h": a.h,
                      "nodes": int(mesh.n_nodes), "eigenvalue": res.eigenvalue, "residual": res.residual,
                      "residual_tolerance": res.tolerance,
                      "iterations": res.iterations, "positive": res.positive}), EXIT_OK


def cmd_rearrange(a) -> tuple[str, int]:
    dom = _domain(a)
    mesh = build_mesh(dom, a.h)
    res = solve_frequency(mesh)
    prof = level_profile(mesh, res.eigenfunction, a.m)
    rp = build_rearrangement(prof, default_tables())
    if a.format == "csv":
        return rp.to_csv(), EXIT_OK
    return json_text({"version": __version__, "timestamp": _timestamp(), "domain": dom.to_dict(),
                      "hypothesis_satisfied": bool(getattr(dom, "convex", True)), "h": a.h, "m": a.m,
                      "t0": rp.t0, "s_dagger": rp.s_dagger, "columns": ["tau", "f", "Dinv"],
                      "rows": [[float(v) for v in r] for r in rp.rows()]}), EXIT_OK


def _report_text(reports: list[dict], fmt: str, single: bool) -> str:
    if fmt == "csv":
        rows = []
        for r in reports:
            rows += _check_rows(r, r["domain"]["kind"] if single else json.dumps(r["domain"], sort_keys=True))
        return csv_text(_CHECK_HEADER, rows)
    stamp = _timestamp()
    for r in reports:
        r["timestamp"] = stamp
    return json_text(reports[0] if single else reports)


def _failures(report: dict) -> list[str]:
    names = [c["name"] for c in report["checks"] if not c["pass"]]
    names += [c["name"] for c in report["theorem_4_2"].values() if not c["pass"]]
    names += [k for k, v in report["pointwise"].items() if not v["pass"]]
    names += [k for k, v in report["consistency"].items() if not v["pass"]]
    names += [f"trial field {t['index']}" for t in report["trial_fields"]["results"] if not t["pass"]]
    if "fixed_point" in report and not report["fixed_point"]["pass"]:
        names.append("fixed point")
    return names


def _report_failures(reports):
    bad = False
    for r in reports:
        if not r["all_pass"]:
            bad = True
            print(f"FAIL {json.dumps(r['domain'], sort_keys=True)}: {', '.join(_failures(r))}", file=sys.stderr)
    return bad


def cmd_verify(a) -> tuple[str, int]:
    dom = _domain(a)
    rep = verify_domain(dom, a.h, a.m, a.tol_equality, a.tol_inequality, n_trials=3, seed=a.seed)
    text = _report_text([rep.data], a.format, True)
    return text, EXIT_FAIL if _report_failures([rep.data]) else EXIT_OK


def _suite_job(args):
    dom, h, m, te, ti, seed = args
    return verify_domain(dom, h, m, te, ti, n_trials=0, seed=seed).data


def cmd_suite(a) -> tuple[str, int]:
    domains = builtin_suite() if a.domain is None else [_domain(a)]
    jobs = [(d, a.h, a.m, a.tol_equality, a.tol_inequality, a.seed) for d in domains]
    default_tables()  # build once before forking
    if a.workers > 1:
        with ProcessPoolExecutor(max_workers=a.workers) as pool:
            reports = list(pool.map(_suite_job, jobs))
    else:
        reports = [_suite_job(j) for j in jobs]
    text = _report_text(reports, a.format, False)
    return text, EXIT_FAIL if _report_failures(reports) else EXIT_OK


COMMANDS = {
    "halfspace-table": cmd_halfspace_table,
    "torsion": cmd_torsion,
    "frequency": cmd_frequency,
    "rearrange": cmd_rearrange,
    "verify": cmd_verify,
    "suite": cmd_suite,
}
_DEFAULT_FORMAT = {"halfspace-table": "csv", "rearrange": "csv"}


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _levels(text):
    v = int(text)
    if v < 16:
        raise argparse.ArgumentTypeError("must be at least 16")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--domain", help="domain JSON file or inline JSON document")
    common.add_argument("--h", type=_positive, default=None, help=f"mesh size (default {DEFAULT_H})")
    common.add_argument("--m", type=_levels, default=DEFAULT_M, help="number of levels (>= 16)")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--seed", type=int, default=0, help="seed for the random trial fields")
    common.add_argument("--workers", type=int, default=1, help="processes for suite and table runs")
    common.add_argument("--override-convexity", action="store_true",
                        help="accept non-convex polygons (results carry hypothesis_satisfied = false)")
    common.add_argument("--tol-equality", type=_positive, default=TOL_EQUALITY)
    common.add_argument("--tol-inequality", type=_positive, default=TOL_INEQUALITY)

    p = argparse.ArgumentParser(prog="gausskj", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "halfspace-table":
            sp.add_argument("--s-min", type=float, default=-4.0)
            sp.add_argument("--s-max", type=float, default=4.0)
            sp.add_argument("--step", type=float, default=0.01)
    return p


def _setup_logging():
    level = os.environ.get("KJ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    # library warnings are already logged; keep stderr free of duplicates
    from .coarea import LevelSetWarning
    warnings.simplefilter("ignore", LevelSetWarning)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    if args.format is None:
        args.format = _DEFAULT_FORMAT.get(args.command, "json")
    if args.h is None and args.command != "halfspace-table":
        args.h = DEFAULT_H
    try:
        text, code = COMMANDS[args.command](args)
    except InputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except PipelineError as exc:
        print(f"numerical failure in stage {exc.stage or 'unknown'}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalError, DomainError, ValidationError, np.linalg.LinAlgError) as exc:
        stage = getattr(exc, "stage", "") or args.command
        print(f"numerical failure in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write(text, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
