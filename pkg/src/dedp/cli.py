"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .bench import CSV_COLUMNS, RunConfig, SOLVERS, _fmt, initial_policy, load_problem, load_run_config, run_benchmark, train
from .errors import ConfigError, DivisionDomain, LineSearchFailed, NonConvergence, RateOverflow, SpaceTooLarge
from .oracle import exact_value
from .policy import load_policy
from .scenarios import load_scenario_config, validate_scenario
from .simulator import RolloutConfig, monte_carlo_value, simulate
from .vi import policy_evaluation

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
NUMERIC_ERRORS = (RateOverflow, NonConvergence, DivisionDomain, LineSearchFailed)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1))


def _problem_and_policy(args):
    problem = load_problem(args.config, args.horizon)
    policy = load_policy(args.policy) if args.policy else initial_policy(problem, args.seed)
    if policy.n_actions != problem.model.num_action_dims:
        raise ConfigError(f"policy emits {policy.n_actions} actions, model expects {problem.model.num_action_dims}")
    return problem, policy


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    problem, policy = _problem_and_policy(args)
    m = problem.model
    cfg = RolloutConfig(problem.horizon, args.seed, args.rollouts)
    est = monte_carlo_value(m, policy, m.initial_state, cfg)
    result = {"mc_value_mean": est.mean, "mc_value_stderr": est.std_error, "rollouts": est.num_samples,
              "horizon": problem.horizon, "seed": args.seed}
    if args.out:
        traj = simulate(m, policy, m.initial_state, RolloutConfig(problem.horizon, args.seed, 1))
        names = [c.name for c in m.components]
        path = _out_dir(args) / "trajectory.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "event"] + names)
            for t, s in enumerate(traj.states):
                w.writerow([t, traj.events[t - 1] if t else 0] + list(s))
        result["trajectory"] = str(path)
    _emit(result)
    return EXIT_OK


def cmd_oracle(args) -> int:
    problem, policy = _problem_and_policy(args)
    ev = exact_value(problem.model, policy, problem.model.initial_state, problem.horizon)
    _emit({"exact_value": ev.value, "truncation_bound": ev.truncation_bound, "horizon": ev.horizon})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    problem, policy = _problem_and_policy(args)
    _, report = policy_evaluation(problem.model, policy, problem.horizon, coupling=args.coupling)
    _emit({**report.as_dict(), "value": report.value, "horizon": problem.horizon})
    return EXIT_OK


def cmd_optimize(args) -> int:
    problem, policy = _problem_and_policy(args)
    run = RunConfig(scenario=args.config, solvers=(args.solver,), epochs=args.epochs, seeds=(args.seed,),
                    horizon=args.horizon, mc_rollouts=args.rollouts,
                    vi={"coupling": args.coupling} if args.solver == "vi" else {})
    policy, history = train(problem, args.solver, policy, run, args.seed)
    out = _out_dir(args)
    with (out / "history.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows([[_fmt(getattr(h, c)) for c in CSV_COLUMNS] for h in history])
    policy.save(out / "policy.json")
    last = history[-1]
    _emit({"solver": args.solver, "epochs_run": len(history) - 1, "mc_value_mean": last.mc_value_mean,
           "elbo": last.elbo, "out": str(out)})
    return EXIT_OK


def cmd_benchmark(args) -> int:
    run = load_run_config(args.config)
    changes = {}
    if args.out:
        changes["out"] = args.out
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if args.solver:
        changes["solvers"] = (args.solver,)
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    run = RunConfig(**{**asdict(run), **changes})
    summary = run_benchmark(run)
    brief = {k: {f: v[f] for f in ("trpe_mean", "trpe_stderr", "ec_mean", "wall_s_mean")}
             for k, v in summary["solvers"].items()}
    _emit({"out": run.out, "solvers": brief, "pooled_stderr": summary.get("pooled_stderr")})
    return EXIT_OK


def cmd_scenario_validate(args) -> int:
    cfg = load_scenario_config(args.config)
    if args.horizon is not None:
        cfg = replace(cfg, horizon=args.horizon)
    _emit(validate_scenario(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dedp", description="Discrete event decision processes: simulate, solve, benchmark.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=True):
        sp.add_argument("--config", required=True, help="scenario config or model JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--horizon", type=int, default=None)
        if policy:
            sp.add_argument("--policy", default=None, help="policy checkpoint (default: seeded initial policy)")

    sp = sub.add_parser("simulate", help="Monte Carlo value and one sample trajectory")
    common(sp)
    sp.add_argument("--rollouts", type=int, default=100)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="exact value by enumeration (small models only)")
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("evaluate", help="variational policy evaluation")
    common(sp)
    sp.add_argument("--coupling", choices=("conditional", "expected"), default="conditional")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("optimize", help="train a policy with one solver")
    common(sp)
    sp.add_argument("--solver", choices=SOLVERS, default="vi")
    sp.add_argument("--epochs", type=int, default=150)
    sp.add_argument("--rollouts", type=int, default=16, help="rollouts per epoch for the logged value")
    sp.add_argument("--coupling", choices=("conditional", "expected"), default="conditional")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("benchmark", help="seeded solver comparison from a run config")
    sp.add_argument("--config", required=True, help="run config JSON")
    sp.add_argument("--seed", type=int, default=None, help="run this seed only")
    sp.add_argument("--solver", choices=SOLVERS, default=None, help="run this solver only")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("scenario", help="scenario utilities")
    ssub = sp.add_subparsers(dest="action", required=True)
    sv = ssub.add_parser("validate", help="build a scenario and report its size and rate bounds")
    sv.add_argument("--config", required=True)
    sv.add_argument("--horizon", type=int, default=None)
    sv.set_defaults(func=cmd_scenario_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SpaceTooLarge, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
