"""Batch command line: run scenarios, compare controllers, export artifacts.

Subcommands::

    gridsar run     --scenario cfg.json --out results/ [--seeds 0..19]
                    [--controller flmpc --controller smpc] [--threads 4]
    gridsar compare --logs results/logs [--milestones 6,7,10] --out results/
    gridsar export  --logs results/logs --out results/
    gridsar replay  --logs results/logs --out replayed/

``run`` writes one JSON-lines mission log per (controller, seed) plus the
effective configuration and a timing file; the other subcommands work from
the logs alone, so every figure and table can be regenerated without
re-simulation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (Scenario, compare_controllers, export, load_logs,
                      load_scenario, log_filename, replay, run_batch)
from .world import ConfigurationError


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    config = scenario.config
    if args.seeds:
        config["seeds"] = args.seeds
    if args.controller:
        config["controllers"] = args.controller
    scenario = Scenario(config)
    out = Path(args.out)
    logs_dir = out / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(
        json.dumps(scenario.config, sort_keys=True, indent=2))

    def progress(controller, seed):
        print(f"done {controller} seed {seed}", flush=True)

    result = run_batch(scenario, threads=args.threads, progress=progress)
    for (controller, seed), log in sorted(result.logs.items()):
        log.write(logs_dir / log_filename(controller, seed))
    export([], None, out, timings=result.timings)
    completed = sum(log.summary["completed"] for log in result.logs.values())
    print(f"{len(result.logs)} missions, {completed} completed; "
          f"logs in {logs_dir}")
    return 0


def _parse_milestones(text):
    return [int(v) for v in text.split(",")] if text else None


def _cmd_compare(args) -> int:
    logs = load_logs(args.logs)
    by_controller = {}
    for log in logs:
        by_controller.setdefault(log.meta["controller"], []).append(log)
    names = sorted(by_controller)
    if len(names) != 2:
        print(f"compare needs logs from exactly 2 controllers, found {names}",
              file=sys.stderr)
        return 2
    milestones = _parse_milestones(args.milestones) \
        or Scenario(logs[0].meta["scenario"]).milestones
    report = compare_controllers(by_controller[names[0]],
                                 by_controller[names[1]], milestones)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    for m in milestones:
        wins = report.wins(m)
        print(f"milestone {m}: {names[0]} wins {wins['a']}, "
              f"{names[1]} wins {wins['b']}, ties {wins['tie']}, "
              f"undecided {wins['undecided']}")
    return 0


def _cmd_export(args) -> int:
    logs = load_logs(args.logs)
    written = export(logs, None, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def _cmd_replay(args) -> int:
    report = replay(args.logs, args.out,
                    _parse_milestones(args.milestones))
    if report is not None:
        print(report.to_json())
    print(f"artifacts regenerated in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsar", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario batch")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seeds", help="override, e.g. 0..19")
    run.add_argument("--controller", action="append",
                     help="override controller list (repeatable)")
    run.add_argument("--threads", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="milestone win/advantage report")
    cmp_.add_argument("--logs", required=True)
    cmp_.add_argument("--milestones", help="comma separated, e.g. 6,7,10")
    cmp_.add_argument("--out", required=True)
    cmp_.set_defaults(func=_cmd_compare)

    exp = sub.add_parser("export", help="CSV + PGM artifacts from logs")
    exp.add_argument("--logs", required=True)
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=_cmd_export)

    rep = sub.add_parser("replay", help="regenerate report + artifacts from logs")
    rep.add_argument("--logs", required=True)
    rep.add_argument("--milestones")
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
