"""Command-line entry point.

Exit codes: 0 success, 1 usage or I/O error, 2 infeasible constraint.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from typing import Any, Mapping, Sequence

import numpy as np

from . import schema
from .caratheodory import solve_multi_affine
from .constrained import EXACT, Evaluator, InfeasibleConstraintError, solve_rdip
from .grdip import grdip_solve, params_for, write_trace
from .jms import collapse, index_table, pandora_to_jms, policy_value, visit_vector
from .pandora import TieBreakRule
from .simlab import ExperimentConfig, csv_text, run_experiment

log = logging.getLogger("fairsearch")

EXIT_USAGE = 1
EXIT_INFEASIBLE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for infeasibility here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(path: str | None, what: str) -> Any:
    if path is None:
        raise UsageError(f"--{what} is required")
    try:
        return schema.load_json(path)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}") from None
    except ValueError as e:
        raise UsageError(f"{what} file {path} is not valid JSON: {e}") from None


def _evaluator(args) -> Evaluator:
    return Evaluator(args.trials, args.seed) if args.trials else EXACT


def _pandora_instance(args):
    return schema.pandora_from_dict(_load(args.instance, "instance"))


def _constraints(args) -> list:
    if args.constraints is None:
        return []
    return schema.constraints_from_dict(_load(args.constraints, "constraints"))


def _jms_instance(args):
    d = _load(args.instance, "instance")
    if d.get("type") == "pandora_instance":
        return pandora_to_jms(schema.pandora_from_dict(d))
    return schema.jms_from_dict(d)


# ---------------------------------------------------------------------------
# commands


def cmd_solve_pandora(args) -> dict:
    inst = _pandora_instance(args)
    cons = _constraints(args)
    ev = _evaluator(args)
    if len(cons) > 1:
        raise UsageError("solve-pandora takes at most one constraint; use solve-multi")
    if not cons:
        u, se = ev(inst.model(ev.tol), TieBreakRule.lexicographic()).utility(inst.model(ev.tol))
        return {"schema": schema.SCHEMA, "type": "pandora_solution", "method": ev.method, "lambda_star": [],
                "utility": u, "utility_stderr": se, "slacks": [],
                "atoms": [{"weight": 1.0, "lambdas": [], "rule": {"kind": "lexicographic"}}]}
    policy = solve_rdip(inst, cons[0], tol=args.tol, evaluator=ev)
    return schema.policy_record("rdip_solution", policy, cons, ev).to_dict()


def cmd_solve_multi(args) -> dict:
    inst = _pandora_instance(args)
    cons = _constraints(args)
    if not cons:
        raise UsageError("solve-multi needs --constraints")
    ev = _evaluator(args)
    policy, res = solve_multi_affine(inst, cons, tol=args.tol, evaluator=ev)
    extra = {"oracle_calls": res.eec.oracle_calls, "points": [p.slacks.tolist() for p in res.points]}
    return schema.policy_record("multi_solution", policy, cons, ev, extra).to_dict()


def _indices_json(table) -> list:
    return [[None if np.isnan(x) else float(x) for x in row] for row in table.sigma]


def cmd_solve_jms(args) -> dict:
    inst = _jms_instance(args)
    table = index_table(inst)
    method = "mc" if args.trials else "exact"
    vv = visit_vector(inst, table, method, trials=args.trials or 0, seed=args.seed)
    out = {"schema": schema.SCHEMA, "type": "jms_solution", "method": method,
           "value": policy_value(inst, vv), "indices": _indices_json(table), "visits": vv.p.tolist()}
    if vv.stderr is not None:
        out["visits_stderr"] = vv.stderr.tolist()
    return out


def cmd_grdip(args) -> dict:
    inst = _jms_instance(args)
    if args.constraints is None:
        cset = schema.JmsConstraintSet((), (), {})
    else:
        cset = schema.jms_constraints_from_dict(_load(args.constraints, "constraints"), inst)
    p = dict(cset.params)
    eps = float(p.get("epsilon", args.epsilon))
    delta = float(p.get("delta", args.delta))
    params = params_for(inst, cset.affine, cset.convex, eps, delta)
    if "K_O" in p or "K_I" in p:
        params = params.with_iterations(int(p.get("K_O", params.K_O)), int(p.get("K_I", params.K_I)))
    sol = grdip_solve(inst, cset.affine, cset.convex, params, visit_method=args.visit_method,
                      epsilon=eps, delta=delta, seed=args.seed, trials=args.trials,
                      keep_history=args.trace is not None)
    if args.trace:
        write_trace(sol, args.trace)
    c = sol.certificate
    return {
        "schema": schema.SCHEMA, "type": "grdip_solution", "visit_method": sol.visit_method,
        "objective": sol.objective, "p_hat": sol.p_hat.tolist(),
        "affine_violation": list(sol.affine_violation), "convex_value": list(sol.convex_value),
        "lambdas": sol.lambdas.tolist(), "betas": sol.betas.tolist(),
        "outer_iterations": sol.outer_iterations, "stopped_early": sol.stopped_early,
        "certificate": {"epsilon_1": c.epsilon_1, "epsilon_2": c.epsilon_2, "epsilon_3": c.epsilon_3,
                        "inner_gap": c.inner_gap, "dual_bound": c.dual_bound, "duality_gap": c.duality_gap},
        "atoms": [{"weight": a.weight, "adjusted_reward": a.adjusted_reward.tolist()} for a in sol.atoms],
    }


def cmd_gittins(args) -> dict:
    inst = _jms_instance(args)
    return {"schema": schema.SCHEMA, "type": "gittins_indices", "indices": _indices_json(index_table(inst))}


def cmd_collapse(args) -> dict:
    inst = _jms_instance(args)
    results = [collapse(c) for c in inst.chains]
    out = schema.jms_to_dict(type(inst)(tuple(r.chain for r in results), inst.capacity))
    out["state_maps"] = [list(r.state_map) for r in results]
    return out


def cmd_simulate(args) -> list:
    if args.config:
        try:
            cfg = ExperimentConfig.load(args.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
    else:
        cfg = ExperimentConfig()
    over = {}
    if args.trials:
        over["trials"] = args.trials
    if args.seed_given:
        over["seed"] = args.seed
    if args.rho:
        over["rhos"] = tuple(args.rho)
    if args.k:
        over["capacities"] = tuple(args.k)
    if over:
        cfg = ExperimentConfig(**{**{f: getattr(cfg, f) for f in cfg.__dataclass_fields__}, **over})
    return run_experiment(cfg)


COMMANDS = {
    "solve-pandora": cmd_solve_pandora,
    "solve-multi": cmd_solve_multi,
    "solve-jms": cmd_solve_jms,
    "grdip": cmd_grdip,
    "simulate": cmd_simulate,
    "gittins": cmd_gittins,
    "collapse": cmd_collapse,
}


# ---------------------------------------------------------------------------
# output


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, str]]:
    if isinstance(obj, Mapping):
        rows = []
        for k, v in obj.items():
            rows += _flatten(v, f"{prefix}.{k}" if prefix else str(k))
        return rows
    if isinstance(obj, (list, tuple)):
        rows = []
        for i, v in enumerate(obj):
            rows += _flatten(v, f"{prefix}[{i}]")
        return rows
    if isinstance(obj, float):
        return [(prefix, schema._num(obj))]
    if obj is None:
        return [(prefix, "")]
    return [(prefix, str(obj))]


def render(result: Any, fmt: str) -> str:
    if isinstance(result, list):  # simulation rows
        if fmt == "json":
            return schema.dumps([{k: getattr(r, k) for k in r.__dataclass_fields__} for r in result])
        return csv_text(result)
    if fmt == "json":
        return schema.dumps(result)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    w.writerows(_flatten(result))
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--instance", metavar="FILE")
    common.add_argument("--constraints", metavar="FILE")
    common.add_argument("--out", metavar="FILE", help="write here instead of stdout")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--trials", type=int, default=None, help="Monte Carlo trials; exact when omitted")
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="fairsearch", description="Constrained sequential search solvers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "grdip":
            p.add_argument("--epsilon", type=float, default=0.05)
            p.add_argument("--delta", type=float, default=0.05)
            p.add_argument("--trace", metavar="FILE", help="per-iteration CSV trace")
            p.add_argument("--visit-method", choices=("auto", "exact", "mc"), default="auto")
        if name == "simulate":
            p.add_argument("--config", metavar="FILE")
            p.add_argument("--rho", type=float, action="append")
            p.add_argument("--k", type=int, action="append")
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.trials is not None and args.trials <= 0:
        parser.error("--trials must be positive")
    fmt = args.format or ("csv" if args.command == "simulate" else "json")
    try:
        result = COMMANDS[args.command](args)
        text = render(result, fmt)
        if args.out:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except InfeasibleConstraintError as e:
        print(f"fairsearch: infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, schema.SchemaError, KeyError, OSError) as e:
        print(f"fairsearch: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
