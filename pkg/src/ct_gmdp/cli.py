"""Command-line entry point ``ct-gmdp``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmarks as bm
from .exact import CapacityError, build_global_mdp, exact_policy_value, optimal_value
from .metrics import (atomic_write_text, format_float, sidecar_path, write_results, write_rows_csv)
from .model import (Policy, problem_from_json, save_policy, save_problem,
                    validate_policy, validate_problem)
from .recipes import RECIPES, ExperimentRecipe, run_recipe
from .simulate import estimate_value, order_param_trace
from .vpt import PlannerSettings, approximate_value, auto_horizon, em_plan_multistart, map_policy

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common(sub: bool) -> argparse.ArgumentParser:
    # subcommand copies use SUPPRESS so a flag given before the subcommand is not reset
    d = argparse.SUPPRESS if sub else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d if sub else 0, help="RNG seed")
    p.add_argument("--tol", type=float, default=d, help="convergence tolerance")
    p.add_argument("--out", default=d, help="output path (written atomically)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ct-gmdp", parents=[_common(False)],
                                     description="Continuous-time multi-agent MDP planning on graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = _common(True)
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs.required = True

    b = subs.add_parser("build", parents=[common], help="write a benchmark problem as JSON")
    b.add_argument("benchmark", choices=["disease", "forest", "voter", "sync", "tree", "ring"])
    b.add_argument("--rows", type=int, default=2)
    b.add_argument("--cols", type=int, default=3)
    b.add_argument("--mu", type=float, default=0.3)
    b.add_argument("--nu", type=float, default=0.3)
    b.add_argument("--gamma", type=float, default=0.9)
    b.add_argument("--no-shift", action="store_true", help="keep raw (possibly positive) rewards")

    v = subs.add_parser("validate", parents=[common], help="check a problem or policy file")
    v.add_argument("file")
    v.add_argument("--problem", help="problem to check a policy file against")
    v.add_argument("--policy", help="policy to check together with a problem file")

    p = subs.add_parser("plan", parents=[common], help="run a planner")
    p.add_argument("planner", choices=["vpt"])
    p.add_argument("--problem", required=True)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tail-tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--damping", type=float, default=0.3)
    p.add_argument("--max-iters", type=int, default=60)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--map", action="store_true", help="store the MAP deterministic policy")
    p.add_argument("--log", help="CSV for the per-iteration bound log")

    s = subs.add_parser("solve", parents=[common], help="exact solution of the joint MDP")
    s.add_argument("solver", choices=["exact"])
    s.add_argument("--problem", required=True)
    s.add_argument("--max-states", type=int)

    e = subs.add_parser("evaluate", parents=[common], help="value of a policy")
    e.add_argument("--problem", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--method", choices=["exact", "approx", "simulate"], default="exact")
    e.add_argument("--traces", type=int, default=10_000)
    e.add_argument("--horizon", type=float)
    e.add_argument("--max-states", type=int)

    m = subs.add_parser("simulate", parents=[common], help="Gillespie traces of a policy")
    m.add_argument("--problem", required=True)
    m.add_argument("--policy", required=True)
    m.add_argument("--traces", type=int, default=1000)
    m.add_argument("--horizon", type=float, default=60.0)
    m.add_argument("--samples", type=int, default=241, help="sample times for --trace-out")
    m.add_argument("--trace-out", help="CSV with columns t,mean,p05,p95 of the order parameter")

    r = subs.add_parser("reproduce", parents=[common], help="run an experiment recipe")
    r.add_argument("recipe", choices=RECIPES)
    r.add_argument("--traces", type=int, help="override the number of simulated traces (fig2)")
    return parser


# --- helpers -----------------------------------------------------------------

def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"{path}: not valid JSON ({err})") from None


def _problem(path):
    data = _read_json(path)
    if "num_agents" not in data:
        raise UsageError(f"{path} is not a problem file")
    return problem_from_json(data)


def _policy(path):
    data = _read_json(path)
    try:
        return Policy.from_json(data)
    except (ValueError, KeyError) as err:
        raise UsageError(f"{path} is not a policy file ({err})") from None


def _emit(args, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if getattr(args, "out", None):
        atomic_write_text(args.out, text + "\n")
    print(text)


# --- subcommands ----------------------------------------------------------------

def cmd_build(args) -> int:
    grid = bm.GridSpec(args.rows, args.cols)
    shift = not args.no_shift
    name = args.benchmark
    if name == "disease":
        prob = bm.build_disease(grid, args.mu, args.nu, gamma=args.gamma, shift=shift)
    elif name == "forest":
        prob = bm.build_forest(grid, args.mu, args.nu, gamma=args.gamma, shift=shift)
    elif name == "voter":
        prob, _ = bm.build_voter(grid, args.mu, args.nu, args.seed, gamma=args.gamma, shift=shift)
    elif name == "sync":
        prob = bm.build_sync(grid, gamma=args.gamma, shift=shift)
    else:
        topo = bm.tree_topology() if name == "tree" else bm.ring_topology()
        prob = bm.build_policy_family_problem(topo, args.seed, args.mu, args.nu, gamma=args.gamma, shift=shift)
    if not args.out:
        raise UsageError("build needs --out")
    save_problem(prob, args.out)
    print(f"wrote {name} problem with {prob.num_agents} agents to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    data = _read_json(args.file)
    if "num_agents" in data:
        prob = problem_from_json(data)
        pol = _policy(args.policy) if args.policy else None
        report = validate_problem(prob, pol)
    else:
        pol = _policy(args.file)
        prob = _problem(args.problem) if args.problem else None
        report = validate_policy(pol, prob)
    if report:
        print(f"{args.file}: {len(report)} violation(s)")
        for v in report:
            print(f"  {v}")
        return EXIT_INVALID
    print(f"{args.file}: ok")
    return EXIT_OK


def cmd_plan(args) -> int:
    prob = _problem(args.problem)
    if args.gamma is not None:
        prob = replace(prob, gamma=args.gamma)
    tol = args.tol if getattr(args, "tol", None) else None
    settings = PlannerSettings(horizon_tail_tol=args.tail_tol, step=args.h, damping=args.damping,
                               em_max_iters=args.max_iters,
                               **({"em_tol": tol, "estep_tol": tol} if tol else {}))
    res = em_plan_multistart(prob, settings, args.restarts, args.seed)
    policy = map_policy(res.policy) if args.map else res.policy
    if args.out:
        save_policy(policy, args.out)
    if args.log:
        write_rows_csv(args.log, ("iteration", "sweep", "F_vpt_total", "value_term", "bound"), res.log)
    print(json.dumps({"iterations": len(res.log) - 1, "converged": res.converged,
                      "bound": res.bounds[-1], "horizon": res.horizon, "tail_bound": res.tail_bound,
                      "reward_shift": res.reward_shift}, indent=2))
    return EXIT_OK


def cmd_solve(args) -> int:
    prob = _problem(args.problem)
    value, actions, mdp = optimal_value(prob, max_states=args.max_states)
    _emit(args, {"value": value, "num_states": mdp.num_states, "num_joint_actions": mdp.num_actions,
                 "joint_actions": [int(a) for a in actions]})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    prob = _problem(args.problem)
    pol = _policy(args.policy)
    report = validate_problem(prob, pol)
    if report:
        for v in report:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    out = {"method": args.method}
    if args.method == "exact":
        out["value"] = exact_policy_value(build_global_mdp(prob, args.max_states), pol)
    elif args.method == "approx":
        out["value"] = approximate_value(prob, pol)
    else:
        horizon = args.horizon or auto_horizon(prob.gamma, 1e-4)
        mean, se = estimate_value(prob, pol, num_traces=args.traces, horizon=horizon, seed=args.seed)
        out.update(value=mean, standard_error=se, traces=args.traces, seed=args.seed, horizon=horizon)
    _emit(args, out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    prob = _problem(args.problem)
    pol = _policy(args.policy)
    report = validate_problem(prob, pol)
    if report:
        for v in report:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    mean, se = estimate_value(prob, pol, num_traces=args.traces, horizon=args.horizon, seed=args.seed)
    out = {"value": mean, "standard_error": se, "traces": args.traces, "seed": args.seed,
           "horizon": args.horizon}
    if args.trace_out:
        times = np.linspace(0.0, args.horizon, args.samples)
        tr = order_param_trace(prob, pol, None, times, args.traces, args.seed)
        write_rows_csv(args.trace_out, ("t", "mean", "p05", "p95"),
                       [(float(t), float(m), float(a), float(b)) for t, m, a, b in zip(times, tr.mean, tr.p05, tr.p95)])
        out["trace_out"] = args.trace_out
    _emit(args, out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    overrides = {}
    if args.traces:
        overrides["traces"] = args.traces
    if getattr(args, "tol", None):
        overrides["settings"] = replace(ExperimentRecipe.default(args.recipe).settings,
                                        em_tol=args.tol, estep_tol=args.tol)
    recipe = ExperimentRecipe.default(args.recipe, **overrides)
    out = run_recipe(recipe)
    target = Path(args.out or f"{args.recipe}.csv")
    header = list(out.summary[0].keys()) if out.summary else []
    write_rows_csv(target, header, [[row.get(k, math.nan) for k in header] for row in out.summary])
    long_path = target.with_name(target.stem + ".long.csv")
    write_results(out.table, long_path)
    written = [str(target), str(long_path)]
    for name, (cols, rows) in out.series.items():
        path = target.with_name(f"{target.stem}.{name}.csv")
        write_rows_csv(path, cols, rows)
        written.append(str(path))
    meta = dict(out.table.metadata, checks=out.checks, files=written)
    atomic_write_text(sidecar_path(target), json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n")
    for row in out.summary:
        print(", ".join(f"{k}={format_float(v) if isinstance(v, float) else v}" for k, v in row.items()))
    if out.checks:
        print(json.dumps(out.checks, default=float))
    print(f"wrote {', '.join(written)}")
    return EXIT_OK


COMMANDS = {"build": cmd_build, "validate": cmd_validate, "plan": cmd_plan, "solve": cmd_solve,
            "evaluate": cmd_evaluate, "simulate": cmd_simulate, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"ct-gmdp: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (CapacityError, ValueError, FloatingPointError, NotImplementedError) as err:
        print(f"ct-gmdp: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
