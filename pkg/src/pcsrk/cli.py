"""Command line interface: ``python -m pcsrk <subcommand> ...``.

Exit codes: 0 success, 2 solver failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import harness, ptrees
from .harness import BenchConfig, ExperimentConfig, MethodSpec, default_ladder, write_csv
from .model import DomainError
from .quad import QuadratureError
from .stepper import SolverError, integrate
from .tableau import (
    HP,
    DefectiveSpectrumError,
    FamilyParams,
    e_matrix,
    e_matrix_only,
    fourth_order_family,
    is_parallelizable,
    validate,
)

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3
SOLVER_ERRORS = (SolverError, QuadratureError, DomainError, DefectiveSpectrumError, FloatingPointError)


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _number(text: str):
    """Exact rational when the text allows it ('3/10', '0.25', '-234'), else float."""
    try:
        return Fraction(text.strip())
    except ValueError:
        return float(text)


def _numbers(text: str) -> tuple:
    return tuple(_number(x) for x in text.split(","))


def _key_values(items: Optional[Sequence[str]]) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use the long flag names."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


# ------------------------------------------------------------------ parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--quad-tol", type=float, default=1e-12)
    p.add_argument("--quad-max-nodes", type=int, default=64)
    p.add_argument("--newton-tol", type=float, default=1e-13)
    p.add_argument("--max-newton-iters", type=int, default=50)
    p.add_argument("--threads", type=int, default=None)
    return p


def _method_args(p):
    p.add_argument("--method", choices=harness.METHODS, default="family")
    p.add_argument("--c1", type=_number, default=None, help="default: 1/2 - sqrt(15)/10")
    p.add_argument("--gamma", type=_numbers, default=None, help="g1,g2,g3,g4 (default: optimal)")
    p.add_argument("--alpha-tilde", type=_number, default=Fraction(-234))


def _problem_args(p):
    p.add_argument("--problem", choices=("lotka-volterra", "quadratic", "synthetic"), default="lotka-volterra")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="problem parameter")
    p.add_argument("--y0", type=_numbers, default=None, help="initial state y1,...,yd")
    p.add_argument("--solver", choices=("auto", "full", "block"), default="auto")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="pcsrk", description="Energy-preserving PCSRK integrators for Poisson systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("integrate", parents=[common], help="integrate and write a trajectory CSV")
    _problem_args(p)
    _method_args(p)
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--t-end", type=float, default=10.0)

    p = sub.add_parser("converge", parents=[common], help="error at t_end over a step-size ladder")
    _problem_args(p)
    _method_args(p)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--h0", type=float, default=0.25, help="largest step of the ladder")
    p.add_argument("--levels", type=int, default=8, help="ladder h0 * 2**-k, k < levels")
    p.add_argument("--ref-factor", type=int, default=64)
    p.add_argument("--fit-points", type=int, default=5)

    p = sub.add_parser("drift", parents=[common], help="energy and invariant drift")
    _problem_args(p)
    _method_args(p)
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--t-end", type=float, default=10.0)

    p = sub.add_parser("verify-trees", parents=[common], help="order conditions via the tree oracle")
    _method_args(p)
    p.add_argument("--max-order", type=int, default=5)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")

    p = sub.add_parser("inspect-tableau", parents=[common], help="matrices, checks and E spectrum")
    _method_args(p)

    p = sub.add_parser("bench", parents=[common], help="block vs full solver timing (informational)")
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-tilde", type=float, default=-234.0)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse ``argv``, applying ``--config`` values as defaults of the chosen subcommand."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = read_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions or key in ("help", "config"):
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        act = actions[key]
        if key == "param":
            defaults[key] = [x for x in raw.split(";") if x.strip()]
        elif act.type is not None:
            try:
                defaults[key] = act.type(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        else:
            defaults[key] = raw
        if act.choices is not None and defaults[key] not in act.choices:
            raise ConfigError(f"bad value for {key}: {raw!r}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------- commands


def _method(args) -> MethodSpec:
    return MethodSpec(args.method, args.c1, args.gamma, args.alpha_tilde)


def _experiment(args, **kw) -> ExperimentConfig:
    return ExperimentConfig(
        problem=args.problem,
        problem_params=_key_values(args.param),
        method=_method(args),
        y0=args.y0,
        solver_mode=args.solver,
        newton_tol=args.newton_tol,
        quad_tol=args.quad_tol,
        quad_max_nodes=args.quad_max_nodes,
        max_newton_iters=args.max_newton_iters,
        threads=args.threads,
        seed=args.seed,
        **kw,
    )


def _out_path(args, default_name: str) -> Optional[str]:
    if not args.out:
        return None
    if args.out.endswith(".csv") or args.out.endswith(".json") or args.out.endswith(".txt"):
        return args.out
    return os.path.join(args.out, default_name)


def cmd_integrate(args) -> int:
    cfg = _experiment(args, h=args.h, t_end=args.t_end, ladder=(args.h,))
    sys_ = cfg.system()
    y0 = cfg.initial_state(sys_)
    tr = integrate(sys_, cfg.method.tableau(), y0, args.h, args.t_end, cfg.step_config(args.h))
    inv_names = list(tr.invariants)
    header = ["step", "t"] + [f"y_{i + 1}" for i in range(sys_.dim)] + ["H"] + inv_names + ["newton_iters", "residual"]
    rows = []
    for k in range(len(tr.states)):
        rep = tr.reports[k - 1] if k > 0 else None
        rows.append(
            [k, float(tr.times[k])]
            + [float(x) for x in tr.states[k]]
            + [float(tr.energy[k])]
            + [float(tr.invariants[n][k]) for n in inv_names]
            + [rep.iterations if rep else 0, float(rep.residual_norm) if rep else 0.0]
        )
    path = _out_path(args, "trajectory.csv")
    if path:
        write_csv(path, header, rows)
    else:
        w = sys.stdout
        w.write(",".join(header) + "\n")
        for r in rows:
            w.write(",".join(harness._fmt(x) for x in r) + "\n")
    dh = float(np.nanmax(np.abs(tr.energy - tr.energy[0])))
    print(f"{len(tr.reports)}/{tr.steps_requested} steps, max |H - H0| = {dh:.3e}", file=sys.stderr)
    if not tr.ok:
        print(f"step failed: {tr.error}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_converge(args) -> int:
    cfg = _experiment(
        args,
        t_end=args.t_end,
        ladder=default_ladder(args.h0, args.levels),
        ref_factor=args.ref_factor,
        fit_points=args.fit_points,
    )
    table = harness.converge(cfg)
    print(table.summary())
    path = _out_path(args, f"converge_{args.method}.csv")
    if path:
        write_csv(path, table.header, table.csv_rows())
    if not np.isfinite(table.slope):
        print("fewer than two successful ladder entries", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_drift(args) -> int:
    cfg = _experiment(args, h=args.h, t_end=args.t_end, ladder=(args.h,))
    table = harness.drift(cfg)
    print(table.summary())
    path = _out_path(args, "drift.csv")
    if path:
        write_csv(path, table.header, table.csv_rows())
    return EXIT_OK if table.error is None else EXIT_SOLVER


def _weight_str(w) -> str:
    if isinstance(w, Fraction):
        return str(w)
    return HP.nstr(w, 30)


def _tree_tableau(args):
    m = _method(args)
    if m.name == "family":
        return fourth_order_family(m.params()), m.params()
    return m.tableau(), None


def cmd_verify_trees(args) -> int:
    if not 1 <= args.max_order <= ptrees.MAX_ORDER:
        raise ConfigError(f"--max-order must be in [1, {ptrees.MAX_ORDER}]")
    tab, params = _tree_tableau(args)
    ev = ptrees.WeightEvaluator(tab)
    records = []
    for t in ptrees.enumerate_black_rooted(args.max_order):
        phi = ev.weight(t)
        e = ptrees.exact_coefficient(t)
        records.append({"tree": t.key, "order": t.order, "phi": _weight_str(phi), "exact": str(e),
                        "match": ptrees._eq(phi, e)})
    order = ptrees.certified_order(tab, args.max_order)
    report = ptrees.verify_appendix(params) if params is not None and args.max_order >= 5 else None
    if args.format == "json":
        doc = {"certified_order": order, "trees": records}
        if report is not None:
            doc["appendix"] = {
                "theta": report.theta.theta_confirmed,
                "mismatches": [{"table": r.table, "column": r.column, "tree": r.tree,
                                "computed": _weight_str(r.computed), "tabulated": _weight_str(r.tabulated)}
                               for r in report.mismatches],
                "avf4_mismatches": [{"table": r.table, "column": r.column, "tree": r.tree,
                                     "computed": _weight_str(r.avf4_computed), "tabulated": str(r.avf4_tabulated)}
                                    for r in report.avf4_mismatches],
                "untabulated": report.untabulated,
            }
        text = json.dumps(doc, indent=1)
    elif args.format == "csv":
        lines = ["tree,order,phi,exact,match"]
        lines += [f"{r['tree']},{r['order']},{r['phi']},{r['exact']},{r['match']}" for r in records]
        text = "\n".join(lines)
    else:
        lines = [f"{tab.name}: certified order {order} (trees up to order {args.max_order})"]
        bad = [r for r in records if not r["match"]]
        lines.append(f"{len(records)} trees, {len(bad)} with phi != e")
        for r in bad[:20]:
            lines.append(f"  {r['tree']:24s} phi={r['phi'][:22]:22s} e={r['exact']}")
        if report is not None:
            lines.append(f"appendix: {len(report.rows)} tabulated coefficients, theta reading: {report.theta.theta_confirmed}")
            for r in report.mismatches:
                lines.append(f"  proposed mismatch {r.table}[{r.column}] {r.tree}: "
                             f"computed {_weight_str(r.computed)[:18]} tabulated {_weight_str(r.tabulated)[:18]}")
            for r in report.avf4_mismatches:
                lines.append(f"  AVF(4) mismatch {r.table}[{r.column}] {r.tree}: "
                             f"computed {_weight_str(r.avf4_computed)[:18]} tabulated {r.avf4_tabulated}")
            for key in report.untabulated:
                lines.append(f"  not tabulated: {key}")
        text = "\n".join(lines)
    path = _out_path(args, f"trees.{'txt' if args.format == 'text' else args.format}")
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_inspect_tableau(args) -> int:
    tab, params = _tree_tableau(args)
    np.set_printoptions(precision=12, suppress=False, linewidth=120)
    out = [f"tableau {tab.name}: s = {tab.s}", f"nodes c = {np.asarray(tab.c, dtype=float)}"]
    for j, m in enumerate(tab.m_list):
        out.append(f"M_{j + 1} =\n{np.asarray(m, dtype=float)}")
    out.append(f"sum M_j =\n{np.asarray(tab.m_sum, dtype=float)}")
    rep = validate(tab)
    for c in rep.checks.values():
        res = "n/a" if c.residual is None else f"{c.residual:.3e}"
        status = {True: "ok", False: "FAIL", None: "-"}[c.passed]
        out.append(f"  {c.name:15s} residual {res:>9s}  {status:4s} {c.note}")
    out.append(f"E =\n{e_matrix_only(tab)}")
    try:
        sp = e_matrix(tab)
        out.append(f"eigenvalues(E) = {sp.eigenvalues}")
        out.append(f"real and distinct: {sp.real_distinct}, cond(T) = {sp.condition_estimate:.3e}")
    except DefectiveSpectrumError as exc:
        out.append(f"eigendecomposition unavailable: {exc}")
    if params is not None:
        out.append(f"parallelizable (alpha_tilde = {float(params.alpha_tilde):g}): {is_parallelizable(params.alpha_tilde)}")
    out.append(f"certified order: {ptrees.certified_order(tab, 5)}")
    text = "\n".join(out)
    print(text)
    path = _out_path(args, "tableau.txt")
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    table = harness.bench(BenchConfig(args.dim, args.seed, args.h, args.steps, args.threads, args.alpha_tilde))
    print(table.summary())
    path = _out_path(args, "bench.csv")
    if path:
        write_csv(path, table.header, table.csv_rows())
    return EXIT_OK


COMMANDS = {
    "integrate": cmd_integrate,
    "converge": cmd_converge,
    "drift": cmd_drift,
    "verify-trees": cmd_verify_trees,
    "inspect-tableau": cmd_inspect_tableau,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
