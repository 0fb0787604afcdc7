"""Command-line front end: ``diffconv <command> [flags]``.

Exit codes: 0 pass, 1 verification failure, 2 bad input, 3 oracle disagreement.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from . import __version__
from .catalog import (
    CATALOG_ENV,
    TABLES,
    Catalog,
    ConstraintError,
    Unclassifiable,
    UnknownEntry,
    as_number,
    check_exact_solution,
    default_catalog,
    instantiate,
    list_cases,
    match_equation,
    verify_all,
    verify_transformation,
)
from .equivalence import (
    EquivalenceError,
    EquivalenceGenerator,
    FlowError,
    GroupElement,
    constraint_check,
    flow,
)
from .expr import ParseError, parse
from .model import ClassEquation, ShapeError, VectorField
from .reduction import (
    Ansatz,
    ReductionError,
    compare_with_ode,
    parent_equation,
    reduce,
    verify_reduction_tables,
)
from .symmetry import symmetry_check
from .verify import DEFAULT_TOL, OracleDisagreement, check_solution

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_ORACLE = 0, 1, 2, 3


class InputError(ValueError):
    """Bad flags or unparsable expressions."""


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, default=str))
    else:
        print(text)


def _params(items: Sequence[str] | None) -> dict:
    out = {}
    for item in items or ():
        for part in item.split(","):
            if not part.strip():
                continue
            key, sep, val = part.partition("=")
            if not sep:
                raise InputError(f"expected k=v, got {part!r}")
            out[key.strip()] = val.strip()
    return out


def _numbers(raw: dict) -> dict:
    out = {}
    for k, v in raw.items():
        try:
            out[k] = as_number(v)
        except (ValueError, ZeroDivisionError):
            out[k] = v
    return out


def _catalog(args) -> Catalog:
    return Catalog.load(args.catalog) if args.catalog else default_catalog()


def _equation(args, cat: Catalog) -> ClassEquation:
    """Equation from --f/--D/--K, or from --case with --params."""
    if args.case:
        return instantiate(args.case, _numbers(_params(args.params)), catalog=cat).eq
    if args.f is None or args.D is None:
        raise InputError("give --case or all of --f, --D (and optionally --K)")
    return ClassEquation.from_strings(args.f, args.D, args.K or "0")


# ---------------------------------------------------------------------------
# commands


def cmd_list_cases(args) -> int:
    cat = _catalog(args)
    recs = list_cases(args.table, catalog=cat)
    rows = [{"id": r.id, "table": r.table, "family": r.family, "f": r.f, "D": r.D, "K": r.K,
             "dimension": r.dimension, "params": sorted(r.parameter_names)} for r in recs]
    text = "\n".join(f"{r['id']:<7} {r['table']:<3} dim {r['dimension']}  f={r['f']}  D={r['D']}  K={r['K']}"
                     for r in rows)
    _emit(args, {"cases": rows}, text)
    return EXIT_PASS


def cmd_classify(args) -> int:
    cat = _catalog(args)
    eq = _equation(args, cat)
    try:
        matches = match_equation(eq, cat, verify=True)
    except Unclassifiable as err:
        _emit(args, {"verdict": "fail", "equation": eq.to_dict(), "error": str(err)}, f"unclassified: {err}")
        return EXIT_FAIL
    best = matches[0]
    lines = [f"case {best.case.id} ({best.case.table}), dimension {best.case.dimension}"]
    if best.params:
        lines.append("parameters: " + ", ".join(f"{k}={v}" for k, v in best.params.items()))
    lines += [f"  Q{i + 1} = {b}" for i, b in enumerate(best.basis)]
    if len(matches) > 1:
        lines.append("also matches: " + ", ".join(m.case.id for m in matches[1:]))
    _emit(args, {"verdict": "pass", "equation": eq.to_dict(), "matches": [m.to_dict() for m in matches]},
          "\n".join(lines))
    return EXIT_PASS


def cmd_check_symmetry(args) -> int:
    cat = _catalog(args)
    eq = _equation(args, cat)
    if not args.op:
        raise InputError("--op is required")
    v = VectorField.parse(args.op)
    verdict = symmetry_check(eq, v, args.tol)
    d = verdict.to_dict()
    text = [f"{'pass' if verdict.symmetric else 'fail'}: {v} on {eq}",
            f"  invariance residual {verdict.invariance.max_scaled:.2e}"]
    text += [f"  {e['name']:<14} {e['verdict']}  {e['max_magnitude']:.2e}" for e in d["determining"]["equations"]]
    _emit(args, {"operator": str(v), "equation": eq.to_dict(), **d}, "\n".join(text))
    return EXIT_PASS if verdict.symmetric else EXIT_FAIL


def cmd_transform(args) -> int:
    cat = _catalog(args)
    if args.transformation:
        rec = cat.transformation(args.transformation)
        entry, findings, hard = verify_transformation(rec, cat, args.tol, seed=args.seed)
        failures = [f for f in findings if f.severity == "failure"]
        lines = [f"transformation {rec.id}: {rec.source} -> {rec.target}  {entry['verdict']}"]
        lines += [f"  [{f.severity}] {f.message}" for f in findings]
        lines += [f"  [hard error] {h['message']}" for h in hard]
        _emit(args, {"transformation": entry, "findings": [f.to_dict() for f in findings], "hard_errors": hard},
              "\n".join(lines))
        if hard:
            return EXIT_ORACLE
        return EXIT_FAIL if failures or entry["verdict"] != "pass" else EXIT_PASS
    eq = _equation(args, cat)
    raw = _params(args.params) if not args.case else {}
    flips = [f for f in raw.pop("flips", "").split("+") if f]
    g = GroupElement.from_params(flips=flips, **{k: parse(v) for k, v in raw.items()})
    image = g.apply(eq)
    _emit(args, {"element": g.to_dict(), "source": eq.to_dict(), "image": image.to_dict()},
          f"{eq}\n  -> {image}")
    return EXIT_PASS


def cmd_reduce(args) -> int:
    cat = _catalog(args)
    params = _numbers(_params(args.params))
    if args.row:
        row = next((r for r in cat.reductions if r.id == args.row), None)
        if row is None:
            raise UnknownEntry(f"no reduction row {args.row!r}")
        parent = cat.parents[row.parent]
        eq = parent_equation(cat, parent, params)
        a = Ansatz.from_row(row, params, args.delta)
        red = reduce(eq, a, args.tol)
        misfit, _ = compare_with_ode(eq, a, parse(row.ode, functions=()))
        ok = misfit <= args.tol
        payload = {**red.to_dict(), "row": row.id, "table_ode": row.ode_text, "table_misfit": misfit,
                   "verdict": "pass" if ok else "fail"}
        _emit(args, payload, f"{red.render()}\n  table: {row.ode_text}  misfit {misfit:.2e}  "
                             f"{'pass' if ok else 'fail'}")
        return EXIT_PASS if ok else EXIT_FAIL
    if not (args.ansatz and args.omega):
        raise InputError("give --row, or --ansatz and --omega with an equation")
    eq = _equation(args, cat)
    red = reduce(eq, Ansatz.parse(args.ansatz, args.omega, params, args.delta), args.tol)
    _emit(args, {**red.to_dict(), "verdict": "pass"}, red.render())
    return EXIT_PASS


def cmd_check_solution(args) -> int:
    cat = _catalog(args)
    if args.solution:
        rep = check_exact_solution(cat.solution(args.solution), cat, args.tol, seed=args.seed)
        d = rep.to_dict()
        text = f"solution {rep.id} on {rep.case}: {d['verdict']}  max residual {d['max_residual']:.2e}"
        if rep.stated_verdict is not None:
            text += f"\n  printed form: {d['stated_verdict']}  max residual {d['stated_max_residual']:.2e}"
        _emit(args, d, text)
        return EXIT_PASS if rep.verdict else EXIT_FAIL
    if not args.u:
        raise InputError("give --solution or --u")
    eq = _equation(args, cat)
    rep = check_solution(eq, parse(args.u, functions=()), tol=args.tol, seed=args.seed)
    _emit(args, {"solution": args.u, "equation": eq.to_dict(), **rep.to_dict()},
          f"{'pass' if rep.verdict else 'fail'}: u = {args.u}  max residual {rep.max_scaled:.2e} at {rep.argmax}")
    return EXIT_PASS if rep.verdict else EXIT_FAIL


def cmd_verify_all(args) -> int:
    cat = _catalog(args)
    tables = args.table or None
    report = verify_all(tables, args.tol, args.samples, args.seed, args.threads, catalog=cat)
    payload = report.to_dict()
    text = report.to_text()
    ok = report.passed
    if args.reductions:
        red = verify_reduction_tables(cat, threads=args.threads, seed=args.seed)
        payload["reductions"] = red.to_dict()
        text += "\n" + red.to_text()
        ok = ok and red.passed
    _emit(args, payload, text)
    if report.hard_errors:
        return EXIT_ORACLE
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_flow(args) -> int:
    if not args.op:
        raise InputError("--op is required (e.g. 'x*dx - 2*f*df')")
    gen = EquivalenceGenerator.parse(args.op, args.constraint or "")
    fl = flow(gen, args.epsilon)
    payload = {"generator": str(gen), "epsilon": args.epsilon, "closed_form": fl.closed_form}
    lines = [f"flow of {gen} at epsilon={args.epsilon}"]
    if fl.closed_form:
        tr = fl.transformation
        payload["transformation"] = tr.to_dict()
        payload["f_factor"] = str(fl.f_factor)
        lines += [f"  t~ = {tr.T}", f"  x~ = {tr.X}", f"  u~ = {tr.U}", f"  f~ = f * {fl.f_factor}"]
    code = EXIT_PASS
    if args.f is not None or args.case:
        cat = _catalog(args)
        eq = _equation(args, cat)
        rep = constraint_check(fl, eq, args.tol)
        payload["constraint"] = rep.to_dict()
        lines.append(f"  stays in the subclass for {eq}: {'pass' if rep.passed else 'fail'}")
        code = EXIT_PASS if rep.passed else EXIT_FAIL
    _emit(args, payload, "\n".join(lines))
    return code


COMMANDS = {
    "list-cases": cmd_list_cases,
    "classify": cmd_classify,
    "check-symmetry": cmd_check_symmetry,
    "transform": cmd_transform,
    "reduce": cmd_reduce,
    "check-solution": cmd_check_solution,
    "verify-all": cmd_verify_all,
    "flow": cmd_flow,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=DEFAULT_TOL)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--catalog", default=None, help=f"catalog directory (else ${CATALOG_ENV})")
    eqn = argparse.ArgumentParser(add_help=False)
    eqn.add_argument("--f", default=None)
    eqn.add_argument("--D", default=None)
    eqn.add_argument("--K", default=None)
    eqn.add_argument("--case", default=None)
    eqn.add_argument("--params", action="append", help="k=v, repeatable or comma-separated")

    p = argparse.ArgumentParser(prog="diffconv", description="Lie symmetries of f(x)u_t=(D(u)u_x)_x+K(u)u_x")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("list-cases", parents=[common])
    s.add_argument("--table", choices=TABLES, action="append")
    sub.add_parser("classify", parents=[common, eqn])
    s = sub.add_parser("check-symmetry", parents=[common, eqn])
    s.add_argument("--op", required=True)
    s = sub.add_parser("transform", parents=[common, eqn])
    s.add_argument("--transformation", default=None, help="catalog transformation id")
    s = sub.add_parser("reduce", parents=[common, eqn])
    s.add_argument("--row", default=None, help="reduction table row id, e.g. solv1.8")
    s.add_argument("--ansatz", default=None)
    s.add_argument("--omega", default=None)
    s.add_argument("--delta", type=int, choices=(1, -1), default=1)
    s = sub.add_parser("check-solution", parents=[common, eqn])
    s.add_argument("--solution", default=None, help="catalog solution id")
    s.add_argument("--u", default=None)
    s = sub.add_parser("verify-all", parents=[common])
    s.add_argument("--table", choices=TABLES, action="append")
    s.add_argument("--samples", type=int, default=3)
    s.add_argument("--reductions", action="store_true", help="also check the reduction tables")
    s = sub.add_parser("flow", parents=[common, eqn])
    s.add_argument("--op", required=True)
    s.add_argument("--constraint", default="")
    s.add_argument("--epsilon", type=float, default=0.1)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_PASS
    try:
        return COMMANDS[args.command](args)
    except OracleDisagreement as err:
        print(f"oracle disagreement: {err}", file=sys.stderr)
        return EXIT_ORACLE
    except (InputError, ParseError, ShapeError, ConstraintError, UnknownEntry, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (ReductionError, EquivalenceError, FlowError) as err:
        print(f"fail: {err}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
