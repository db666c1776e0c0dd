"""Batch experiment harness: scenarios, paired runs, win/advantage reports.

A scenario is a single JSON file; every omitted field is filled from the
defaults below and the complete effective configuration is echoed into
each mission log, so no default is ever applied silently at analysis time.
Controllers run on identical environments per seed (common random
numbers), which makes the per-seed milestone comparison a paired design.

Reports are pure functions of the logs: re-running a scenario with the
same seeds reproduces logs and reports byte for byte.  Wall-clock grading
statistics are written to a separate timing file since they are
measurements, not reproducible content.
"""

from __future__ import annotations

import concurrent.futures
import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .baseline import StochasticCostParams
from .belief import BeliefParams, MembershipFunctionBank, default_bank
from .clusters import ParentParams, run_bilevel_mission
from .coordination import MissionLog, MissionParams, run_mission
from .fuzzy import AggregationParams
from .planner import ControllerParams
from .solvers import GaOptions, PsoOptions
from .world import ConfigurationError, ContractViolation, SensorModel, \
    generate_environment

__all__ = [
    "SCENARIO_DEFAULTS",
    "Scenario",
    "load_scenario",
    "run_batch",
    "WinAdvantageReport",
    "compare_controllers",
    "export",
    "replay",
]

SCENARIO_DEFAULTS: dict = {
    "schema_version": 1,
    "env": {"width": 40, "height": 40, "n_humans": 10,
            "obstacle_density": 0.2, "n_robots": 3},
    "controllers": ["flmpc"],
    "seeds": "0..4",
    "budget_steps": "500/n_rob",
    "milestones": "all",
    "replan_period": 5,
    "snapshot_cadence": 0,
    "sensor": {"hit_prob": 0.96, "miss_prob": 0.02, "blend_floor": 0.25,
               "delta_max": 6.0},
    "belief": {"initial": [0.34, 0.33, 0.33], "uncertainty_ceiling": 0.648,
               "uncertainty_rise": 0.002, "rise_divisor": 1.0},
    "controller": {"n_p": 5, "n_travel": 14, "n_path": 20, "gamma": 0.965,
                   "delta_max_plan": 5.0},
    "aggregation": {"w_goal": 20.0, "w_con": 5.0, "w_agg": 1.0,
                    "w_cluster": 5.0, "w_goal_parent": 1.0,
                    "s_norm": "max", "t_norm": "product"},
    "pso": {"swarm_size": 60, "iterations": 80, "inertia": 0.729,
            "cognitive": 1.49, "social": 1.49, "seed": 0},
    "ga": {"population": 60, "generations": 80, "mutation_rate": 0.3,
           "seed": 0},
    "baseline": {"w_search": 1.0, "w_uncertainty": 0.5, "w_rescue": 2.0,
                 "w_obstacle": 1.0, "rescue_threshold": 0.95,
                 "certainty_decay": 0.99},
    "parent": {"cluster_side": 40, "overlap_depth": 3, "s_exp": 0.22,
               "s_unexp": 0.4, "gamma_parent": 0.98, "sigma": 60.0,
               "eta": None, "init_score": 0.49},
}

_CONTROLLERS = ("flmpc", "smpc", "bilevel")


def _merge_defaults(defaults, given, path="") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigurationError(f"unknown scenario key {where!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_defaults(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _parse_seeds(spec) -> list[int]:
    if isinstance(spec, str):
        a, _, b = spec.partition("..")
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in spec]


@dataclass
class Scenario:
    """Fully resolved experiment configuration (no implicit defaults left)."""

    config: dict

    def __post_init__(self):
        for c in self.config["controllers"]:
            if c not in _CONTROLLERS:
                raise ConfigurationError(f"unknown controller {c!r}")

    @property
    def controllers(self) -> list[str]:
        return list(self.config["controllers"])

    @property
    def seeds(self) -> list[int]:
        return _parse_seeds(self.config["seeds"])

    @property
    def budget_steps(self) -> int:
        budget = self.config["budget_steps"]
        if isinstance(budget, str):
            if budget != "500/n_rob":
                raise ConfigurationError(f"unknown budget formula {budget!r}")
            return 500 // int(self.config["env"]["n_robots"])
        return int(budget)

    @property
    def milestones(self) -> list[int]:
        m = self.config["milestones"]
        if m == "all":
            return [int(self.config["env"]["n_humans"])]
        return [int(v) for v in m]

    def mission_params(self, controller: str) -> MissionParams:
        c = self.config
        sensor = SensorModel(**c["sensor"])
        bank = default_bank()
        belief = BeliefParams(
            uncertainty_ceiling=c["belief"]["uncertainty_ceiling"],
            uncertainty_rise=c["belief"]["uncertainty_rise"],
            rise_divisor=c["belief"]["rise_divisor"],
            sensor=sensor, bank=bank)
        aggregation = AggregationParams(**c["aggregation"])
        controller_params = ControllerParams(aggregation=aggregation,
                                             **c["controller"])
        return MissionParams(
            controller=controller, sensor=sensor, belief=belief,
            controller_params=controller_params,
            pso=PsoOptions(**c["pso"]), ga=GaOptions(**c["ga"]),
            baseline=StochasticCostParams(**c["baseline"]),
            initial_belief=tuple(c["belief"]["initial"]),
            replan_period=int(c["replan_period"]),
            snapshot_cadence=int(c["snapshot_cadence"]))

    def parent_params(self) -> ParentParams:
        return ParentParams(**self.config["parent"])

    def environment(self, seed: int):
        e = self.config["env"]
        return generate_environment(e["width"], e["height"], e["n_humans"],
                                    e["obstacle_density"], e["n_robots"], seed)


def load_scenario(path_or_dict) -> Scenario:
    """Load a scenario file, filling defaults and rejecting unknown keys."""
    if isinstance(path_or_dict, dict):
        given = path_or_dict
        where = "<dict>"
    else:
        where = str(path_or_dict)
        text = Path(path_or_dict).read_text()
        try:
            given = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigurationError(
                f"{where}:{err.lineno}:{err.colno}: {err.msg}") from err
    try:
        return Scenario(_merge_defaults(SCENARIO_DEFAULTS, given))
    except ConfigurationError as err:
        raise ConfigurationError(f"{where}: {err}") from err


def _run_one(config: dict, controller: str, seed: int):
    scenario = Scenario(config)
    env = scenario.environment(seed)
    params = scenario.mission_params(controller)
    meta = {"controller": controller, "seed": seed, "scenario": config}
    if controller == "bilevel":
        log = run_bilevel_mission(env, params, scenario.budget_steps,
                                  scenario.parent_params(), meta=meta)
    else:
        log = run_mission(env, params, scenario.budget_steps, meta=meta)
    return controller, seed, log.to_bytes(), log.grading_stats


@dataclass
class BatchResult:
    logs: dict
    timings: dict

    def by_controller(self, name: str) -> list[MissionLog]:
        return [log for (c, _s), log in sorted(self.logs.items()) if c == name]


def run_batch(scenario: Scenario, threads: int = 1,
              progress=None) -> BatchResult:
    """One mission per (controller, seed); missions run in parallel processes.

    Results are keyed and sorted, so the outcome does not depend on the
    worker count.
    """
    jobs = [(c, s) for c in scenario.controllers for s in scenario.seeds]
    logs: dict = {}
    timings: dict = {}
    if threads <= 1:
        results = [_run_one(scenario.config, c, s) for c, s in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as ex:
            futures = [ex.submit(_run_one, scenario.config, c, s)
                       for c, s in jobs]
            results = [f.result() for f in futures]
    for controller, seed, raw, timing in results:
        logs[(controller, seed)] = MissionLog.from_bytes(raw)
        timings[(controller, seed)] = timing
        if progress:
            progress(controller, seed)
    return BatchResult(logs, timings)


# --- milestone comparison ---------------------------------------------------------

@dataclass
class WinAdvantageReport:
    """Per-milestone winners and step advantages for paired seeds.

    The winner of a milestone on a seed is the controller reaching it
    first; the advantage is the absolute step difference, infinite
    (serialized ``"inf"``) when only one controller reaches it within its
    budget.  Seeds where neither reaches the milestone are excluded from
    the win counts.
    """

    controller_a: str
    controller_b: str
    milestones: list[int]
    rows: list[dict]

    def wins(self, milestone: int) -> dict:
        out = {"a": 0, "b": 0, "tie": 0, "undecided": 0}
        for row in self.rows:
            if row["milestone"] != milestone:
                continue
            w = row["winner"]
            out[w if w in ("a", "b", "tie") else "undecided"] += 1
        return out

    def advantages(self, milestone: int, side: str) -> list:
        return [row["advantage"] for row in self.rows
                if row["milestone"] == milestone and row["winner"] == side]

    def to_dict(self) -> dict:
        return {
            "controller_a": self.controller_a,
            "controller_b": self.controller_b,
            "milestones": self.milestones,
            "rows": self.rows,
            "wins": {str(m): self.wins(m) for m in self.milestones},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def compare_controllers(logs_a: list[MissionLog], logs_b: list[MissionLog],
                        milestones: list[int]) -> WinAdvantageReport:
    by_seed_a = {log.meta["seed"]: log for log in logs_a}
    by_seed_b = {log.meta["seed"]: log for log in logs_b}
    if set(by_seed_a) != set(by_seed_b):
        raise ContractViolation(
            f"unpaired seeds: {sorted(set(by_seed_a) ^ set(by_seed_b))}")
    name_a = logs_a[0].meta["controller"] if logs_a else "a"
    name_b = logs_b[0].meta["controller"] if logs_b else "b"
    rows = []
    for seed in sorted(by_seed_a):
        for m in milestones:
            ta = by_seed_a[seed].milestone_time(m)
            tb = by_seed_b[seed].milestone_time(m)
            if ta is None and tb is None:
                winner, advantage = None, None
            elif tb is None:
                winner, advantage = "a", "inf"
            elif ta is None:
                winner, advantage = "b", "inf"
            elif ta == tb:
                winner, advantage = "tie", 0
            else:
                winner = "a" if ta < tb else "b"
                advantage = abs(ta - tb)
            rows.append({"seed": seed, "milestone": m, "time_a": ta,
                         "time_b": tb, "winner": winner,
                         "advantage": advantage})
    return WinAdvantageReport(name_a, name_b, list(milestones), rows)


# --- artifact export ---------------------------------------------------------------

def log_filename(controller: str, seed: int) -> str:
    return f"{controller}_seed{seed:04d}.jsonl"


def export(logs: list[MissionLog], report: Optional[WinAdvantageReport],
           out_dir, timings: Optional[dict] = None) -> list[Path]:
    """Write CSV milestone times, the JSON report, per-mission uncertainty
    PGMs, and (when provided) the wall-clock grading statistics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    rows = []
    for log in logs:
        n_humans = log.meta["scenario"]["env"]["n_humans"]
        for m in range(1, n_humans + 1):
            t = log.milestone_time(m)
            rows.append((log.meta["controller"], log.meta["seed"], m,
                         "" if t is None else t))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    path = out / "milestones.csv"
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["controller", "seed", "milestone", "step"])
        writer.writerows(rows)
    written.append(path)

    if report is not None:
        path = out / "report.json"
        path.write_text(report.to_json())
        written.append(path)

    import base64
    for log in logs:
        pgm = base64.b64decode(log.summary["final_uncertainty_pgm"])
        path = out / (f"{log.meta['controller']}_seed{log.meta['seed']:04d}"
                      "_uncertainty.pgm")
        path.write_bytes(pgm)
        written.append(path)

    if timings:
        path = out / "timing.csv"
        with path.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["controller", "seed", "candidate_evals",
                             "grading_seconds", "mean_grading_us",
                             "mission_seconds"])
            for (controller, seed), t in sorted(timings.items()):
                mean_us = (t["grading_seconds"] / t["evals"] * 1e6
                           if t["evals"] else 0.0)
                writer.writerow([controller, seed, t["evals"],
                                 f"{t['grading_seconds']:.6f}",
                                 f"{mean_us:.3f}",
                                 f"{t['mission_seconds']:.3f}"])
        written.append(path)
    return written


def load_logs(logs_dir) -> list[MissionLog]:
    paths = sorted(Path(logs_dir).glob("*.jsonl"))
    if not paths:
        raise ConfigurationError(f"no .jsonl mission logs under {logs_dir}")
    return [MissionLog.read(p) for p in paths]


def replay(logs_dir, out_dir,
           milestones: Optional[list[int]] = None) -> Optional[WinAdvantageReport]:
    """Regenerate every derived artifact from raw logs, without re-simulating."""
    logs = load_logs(logs_dir)
    by_controller: dict[str, list[MissionLog]] = {}
    for log in logs:
        by_controller.setdefault(log.meta["controller"], []).append(log)
    report = None
    names = sorted(by_controller)
    if milestones is None:
        config = logs[0].meta["scenario"]
        milestones = Scenario(config).milestones
    if len(names) == 2:
        report = compare_controllers(by_controller[names[0]],
                                     by_controller[names[1]], milestones)
    export(logs, report, out_dir)
    return report
