"""Command-line entry point: ``ttisched <verb> ...``.

Exit codes: 0 success, 1 I/O failure, 2 malformed input or usage,
3 policy precondition not met (e.g. flat_dp on non-flat CSI),
4 exact-solver node budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .estimators import SCHEDULERS, make_scheduler
from .exceptions import BudgetExceededError, InvalidInputError, NotFlatError, NotReducibleError
from .experiment import ExperimentSpec, load_config, run_experiment, seed_from_env, split_config
from .instance_io import InstanceParseError, format_instance, read_instance
from .model import UNASSIGNED
from .oracle import PartitionInstance, check_partition_equiv, reduce_partition, subset_sum_splits
from .simulator import run_simulation

EXIT_IO = 1
EXIT_INPUT = 2
EXIT_PRECONDITION = 3
EXIT_BUDGET = 4

DEFAULT_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
DEFAULT_POLICIES = ("cast", "cast:2", "sdfs")


def _out(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _settings(args) -> tuple:
    """Config file, then TTISCHED_SEED, then command-line flags."""
    values = load_config(args.config) if args.config else {}
    values["seed"] = seed_from_env(values.get("seed", 0))
    if args.seed is not None:
        values["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        values["horizon_units"] = args.horizon
    r = args.r_mcc
    if r is not None and getattr(args, "sweep", False):
        values["r_mcc_grid"] = tuple(r)
    elif r is not None:
        values["r_mcc"] = r
    return split_config(values)


def cmd_simulate(args) -> int:
    config, extra = _settings(args)
    policy = args.policy or (extra.get("policies") or ("cast",))[0]
    if args.events:
        with open(args.events, "w", encoding="utf-8", newline="\n") as fh:
            metrics = run_simulation(config, policy, events=fh)
    else:
        metrics = run_simulation(config, policy)
    report = {"policy": make_scheduler(policy).label, "r_mcc": config.r_mcc, "seed": config.seed}
    report.update(metrics.to_dict())
    report["pct_mcc_served"] = metrics.pct_served("MCC")
    report["pct_mbb_served"] = metrics.pct_served("MBB")
    _out(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    args.sweep = True
    config, extra = _settings(args)
    spec = ExperimentSpec(
        base=config,
        r_mcc_grid=tuple(extra.get("r_mcc_grid", DEFAULT_GRID)),
        policies=tuple(args.policy or extra.get("policies", DEFAULT_POLICIES)),
        replications=args.reps if args.reps is not None else extra.get("replications", 1),
        output_dir=Path(args.out or extra.get("output_dir", "results")),
        jobs=args.jobs if args.jobs is not None else extra.get("jobs", 1),
    )
    rows = run_experiment(spec)
    flagged = [r for r in rows if r.flags]
    _out(f"wrote {spec.output_dir / 'results.csv'} ({len(rows)} rows) and {spec.output_dir / 'plot.gp'}")
    for r in flagged:
        _out(f"flag: policy={r.policy} r_mcc={r.r_mcc:g} {';'.join(r.flags)}")
    return 0


def cmd_solve(args) -> int:
    instance = read_instance(args.instance)
    scheduler = make_scheduler(args.policy)
    if args.tti is not None:
        scheduler.set_params(fixed_tti=args.tti).fit()
    result = scheduler.solve(instance)
    owners = [UNASSIGNED] * instance.num_channels
    for i, s in enumerate(result.decision.owners()):
        owners[i] = s
    ids = [svc.id for svc in instance.services]
    lines = [
        f"policy: {scheduler.label}",
        f"tti_length: {result.decision.tti_length}",
        f"value: {result.value:.12g}",
        "assignment (rows = channels, columns = services " + " ".join(map(str, ids)) + "):",
    ]
    a = result.decision.assignment
    for i in range(instance.num_channels):
        owner = "-" if owners[i] == UNASSIGNED else str(ids[owners[i]])
        lines.append(f"  {i}: " + " ".join(str(int(x)) for x in a[i]) + f"   -> {owner}")
    lines.append("stats: " + " ".join(f"{k}={v}" for k, v in sorted(result.stats.items())))
    _out("\n".join(lines))
    return 0


def cmd_reduce(args) -> int:
    text = format_instance(reduce_partition(PartitionInstance(tuple(args.items))))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        _out(text)
    return 0


def cmd_oracle(args) -> int:
    p = PartitionInstance(tuple(args.items))
    direct = subset_sum_splits(p.items)
    via_reduction = check_partition_equiv(p)
    _out(f"partition: {'YES' if direct else 'NO'}")
    _out(f"stca_optimum_reaches_4: {'YES' if via_reduction else 'NO'}")
    _out(f"agree: {'yes' if direct == via_reduction else 'no'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttisched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    policies = ", ".join(sorted(SCHEDULERS))

    def sim_flags(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="base seed (beats TTISCHED_SEED and the config)")
        p.add_argument("--horizon", type=int, help="simulated time units")

    p = sub.add_parser("simulate", help="run one simulation and print its metrics as JSON")
    sim_flags(p)
    p.add_argument("--r-mcc", type=float, dest="r_mcc")
    p.add_argument("--policy", help=f"one of {policies}, optionally name:tti")
    p.add_argument("--events", help="write a CSV event log (t,event,id,class,bits) here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep r_mcc across policies; write results.csv and plot.gp")
    sim_flags(p)
    p.add_argument("--r-mcc", type=float, nargs="+", dest="r_mcc", help="grid, ascending")
    p.add_argument("--policy", nargs="+", help=f"policies among {policies} (name or name:tti)")
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("instance")
    p.add_argument("--policy", default="exact", help=f"one of {policies}")
    p.add_argument("--tti", type=int, help="restrict to this TTI length")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("reduce-partition", help="emit the STCA instance built from a Partition input")
    p.add_argument("items", type=int, nargs="+")
    p.add_argument("--out", help="write the instance file here instead of stdout")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("oracle-check", help="decide Partition directly and through the reduction")
    p.add_argument("items", type=int, nargs="+")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, "reconfigure"):
            stream.reconfigure(encoding="utf-8", newline="\n")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InstanceParseError as exc:
        print(f"ttisched: {args.instance}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotFlatError, NotReducibleError) as exc:
        print(f"ttisched: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except BudgetExceededError as exc:
        print(f"ttisched: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except InvalidInputError as exc:
        print(f"ttisched: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"ttisched: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
