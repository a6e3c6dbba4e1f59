#!/usr/bin/env python3
"""
pstc: preventive self-triggered control from the command line

  pstc precompute  build (or reuse) the offline tables of a config
  pstc simulate    run one scenario and write trace.csv + summary.json
  pstc compare     PSTC against PETC on the same noise and disturbance
  pstc validate    Monte Carlo soundness suites
  pstc init        scaffold the output directory

Exit codes: 0 ok, 1 config or table error, 2 validation failure, 3 diverged run.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import init as scaffolding
from . import settings
from .closedloop import Mode, ScenarioError, run_closed_loop, summarize, window_stats
from .data import (
    ConfigError,
    TableMismatchError,
    config_hash,
    load_config,
    load_tables,
    save_tables,
    table_paths,
    tables_up_to_date,
    write_summary,
    write_trace_csv,
)
from .offline import build_offline_tables
from .report import comparison_markdown, gnuplot_script, write_text
from .sysmodel import ModelError
from .validate import SUITES, run_suites

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3

logger = logging.getLogger(__name__)


def _configure_logging(verbose: int):
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, settings.LOG_LEVEL, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_problem(args):
    path = Path(args.config) if args.config else settings.DEFAULT_CONFIG
    problem = load_config(path)
    return problem.with_epsilon(args.epsilon)


def _table_stem(args, problem) -> Path:
    return Path(args.tables) if args.tables else settings.TABLES_DIR / problem.name


def _scenario(args, problem):
    scenario = problem.scenario(args.scenario)
    return scenario.with_overrides(duration=args.duration, seed=args.seed)


def _run_dir(args, problem, label: str) -> Path:
    return Path(args.out) if args.out else settings.RUNS_DIR / f"{problem.name}-{label}"


def _print_summary(label: str, s: dict):
    if s["final_state_norm"] is None:
        print(f"  {label:<6} (empty run)")
        return
    kappa = "-" if s["kappa_mean"] is None else f"{s['kappa_mean']:.2f}"
    print(
        f"  {label:<6} triggers {s['triggers']:>5}  mean kappa {kappa:>6}  "
        f"final |xi| {s['final_state_norm']:.3e}"
    )
    if s["mode"] == "pstc" and s["periods"]:
        print(
            f"         lower-bound violations {s['lower_bound_violations']}, "
            f"containment failures {s['containment_failures']}, "
            f"model violations {s['model_violations']}"
        )


# --- verbs --------------------------------------------------------------------


def cmd_precompute(args) -> int:
    problem = _load_problem(args)
    stem = _table_stem(args, problem)
    npz_path, _ = table_paths(stem)
    if tables_up_to_date(stem, problem) and not args.force:
        print(f"Tables up to date ({config_hash(problem)[:12]}): {npz_path}")
        return EXIT_OK

    print(f"Building offline tables for '{problem.name}' (kappa_max={problem.trigger.kappa_max})...")
    tables = build_offline_tables(problem)
    save_tables(tables, stem, problem)

    t = tables.timings
    total = sum(t.values())
    print(f"  transition matrices  {1e3 * t['transition']:10.2f} ms")
    print(f"  reachability         {1e3 * t['reachability']:10.2f} ms")
    print(f"  trigger matrices     {1e3 * t['trigger']:10.2f} ms")
    print(f"  initialization       {1e3 * t['initialization']:10.2f} ms")
    print(f"  total                {1e3 * total:10.2f} ms")
    print(f"Tables written to {npz_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    problem = _load_problem(args)
    tables = load_tables(_table_stem(args, problem), problem)
    scenario = _scenario(args, problem)
    mode = Mode(args.mode)
    out_dir = _run_dir(args, problem, f"{scenario.name}-{mode.value}")

    print(f"Simulating '{scenario.name}' for {scenario.duration:g} s in {mode.value} mode...")
    trace = run_closed_loop(problem, tables, scenario, mode)
    summary = summarize(trace)
    summary.update(
        {"config": problem.name, "scenario": scenario.name, "epsilon": problem.trigger.epsilon, "seed": scenario.seed}
    )
    csv_path = write_trace_csv(trace, out_dir / "trace.csv")
    write_summary(summary, out_dir / "summary.json")
    if args.plot:
        script = gnuplot_script({mode.value: csv_path}, trace.dims, out_dir / "plot.png")
        write_text(script, out_dir / "plot.gp")

    _print_summary(mode.value, summary)
    print(f"Output written to {out_dir}")
    if trace.diverged:
        print("Error: the closed loop diverged.", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_window(text: str):
    try:
        start, end = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window '{text}' is not of the form T0:T1")
    return start, end


def cmd_compare(args) -> int:
    problem = _load_problem(args)
    tables = load_tables(_table_stem(args, problem), problem)
    scenario = _scenario(args, problem)
    out_dir = _run_dir(args, problem, f"{scenario.name}-compare")

    traces, summaries, csv_files = {}, {}, {}
    for mode in (Mode.PSTC, Mode.PETC):
        print(f"Simulating '{scenario.name}' in {mode.value} mode...")
        trace = run_closed_loop(problem, tables, scenario, mode)
        traces[mode.value] = trace
        summaries[mode.value] = summarize(trace)
        csv_files[mode.value] = write_trace_csv(trace, out_dir / f"{mode.value}.csv")

    windows_arg = args.window or [(0.0, min(2.0, scenario.duration)), (scenario.duration / 2, scenario.duration)]
    windows = {
        f"[{t0:g}, {t1:g}]": {label: window_stats(tr, t0, t1) for label, tr in traces.items()}
        for t0, t1 in windows_arg
    }
    write_summary(
        {
            "config": problem.name,
            "scenario": scenario.name,
            "epsilon": problem.trigger.epsilon,
            "seed": scenario.seed,
            "runs": summaries,
            "windows": windows,
        },
        out_dir / "summary.json",
    )
    dims = traces["pstc"].dims
    write_text(gnuplot_script(csv_files, dims, out_dir / "compare.png"), out_dir / "compare.gp")
    title = f"{problem.name} / {scenario.name}, epsilon={problem.trigger.epsilon:g}"
    write_text(comparison_markdown(title, summaries, windows), out_dir / "report.md")

    for label, s in summaries.items():
        _print_summary(label, s)
    print(f"Output written to {out_dir}")
    if any(tr.diverged for tr in traces.values()):
        print("Error: a closed loop diverged.", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_validate(args) -> int:
    problem = _load_problem(args)
    tables = load_tables(_table_stem(args, problem), problem)
    suites = SUITES if args.suite == "all" else (args.suite,)
    seed = problem.seed if args.seed is None else args.seed

    print(f"Validating {', '.join(suites)} (seed {seed}, scale {args.scale:g})...")
    reports = run_suites(
        problem, tables, suites, seed=seed, scale=args.scale, workers=settings.VALIDATE_WORKERS
    )
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(
            f"  {r.name:<10} {status:<4} samples {r.samples:>8}  violations {r.violations:>5}  "
            f"worst margin {r.worst_margin:.3e}  ({r.elapsed:.1f} s)"
        )
        for key, value in r.notes.items():
            print(f"             {key}: {value:.3e}")

    out_path = Path(args.out) if args.out else settings.RUNS_DIR / f"validate-{problem.name}-seed{seed}.json"
    write_summary(
        {"config": problem.name, "seed": seed, "scale": args.scale, "suites": [r.as_dict() for r in reports]},
        out_path,
    )
    failed = [r for r in reports if not r.passed]
    if failed:
        print(f"Violations found; replay with --seed {seed}. Samples saved to {out_path}", file=sys.stderr)
        for r in failed:
            for f in r.failures:
                print("  " + json.dumps(f), file=sys.stderr)
        return EXIT_VALIDATION
    print(f"Report written to {out_path}")
    return EXIT_OK


def cmd_init(args) -> int:
    return scaffolding.main(["--user-config"] if args.user_config else [])


# --- argument parsing -----------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="problem config (JSON); defaults to the batch reactor")
    common.add_argument("--tables", help="table file stem (without .npz)")
    common.add_argument("--out", help="output directory (validate: report file)")
    common.add_argument("--epsilon", type=float, help="override the trigger threshold")
    common.add_argument("-v", "--verbose", action="count", default=0)
    return common


def _scenario_flags(p: argparse.ArgumentParser):
    p.add_argument("--scenario", help="scenario name from the config (default: first)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--duration", type=float, help="override the scenario duration")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="pstc",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", parents=[common], help="build offline tables")
    p.add_argument("--force", action="store_true", help="rebuild even if the cache is current")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("simulate", parents=[common], help="run one closed-loop scenario")
    _scenario_flags(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PSTC.value)
    p.add_argument("--plot", action="store_true", help="also write a gnuplot script")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", parents=[common], help="PSTC vs PETC on shared streams")
    _scenario_flags(p)
    p.add_argument(
        "--window", action="append", type=_parse_window, help="report window T0:T1 (repeatable)"
    )
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", parents=[common], help="Monte Carlo soundness suites")
    p.add_argument("--suite", choices=list(SUITES) + ["all"], default="all")
    p.add_argument("--seed", type=int, help="base seed (default: the config seed)")
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on sample counts")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("init", help="scaffold the output directory")
    p.add_argument("--user-config", action="store_true", help="also create ~/.config/pstc/config.py")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(func=cmd_init)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigError, ModelError, ScenarioError, TableMismatchError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _verb(name: str):
    def entry(argv: Optional[List[str]] = None) -> int:
        return main([name] + list(sys.argv[1:] if argv is None else argv))

    entry.__name__ = f"{name}_main"
    return entry


precompute_main = _verb("precompute")
simulate_main = _verb("simulate")
compare_main = _verb("compare")
validate_main = _verb("validate")


if __name__ == "__main__":
    sys.exit(main())
