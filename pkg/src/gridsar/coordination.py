"""Central controller: sensing, map updates, weight exchange, mission loop.

Robots are processed serially in ascending id order within a round.  Each
robot receives immutable map snapshots and the weight fields currently
registered by the other robots (earlier robots' fields are already from
this round), plans, executes up to ``replan_period`` moves with sensing
after every movement, and registers the weight field of its chosen plan.
After all robots have moved, the probability map and the fuzzy (or
certainty) maps are updated once over the round's collected observations,
and the mission clock advances by the round length.

A canceled move (obstacle) aborts the rest of the robot's plan for the
round; short plans idle in place.  Either way the robot keeps sensing once
per time step.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baseline import StochasticCostParams, StochasticPlanner
from .belief import (BeliefParams, CertaintyMap, FuzzyMapSet, ProbabilityMap,
                     bayes_update, grid_to_pgm, update_certainty_map,
                     update_fuzzy_maps)
from .planner import ControllerParams, FlmpcPlanner
from .solvers import GaOptions, PsoOptions
from .world import (ContractViolation, Environment, MoveOutcome, SensorModel,
                    sense_arrays, step_robot)

__all__ = [
    "MissionParams",
    "MissionLog",
    "MissionState",
    "cooperative_weights",
    "mission_step",
    "run_mission",
    "run_single_level_mission",
    "derive_seed",
]


def derive_seed(*parts: int) -> int:
    """Stable sub-stream seed from integer parts (seed, robot id, step...)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class MissionParams:
    """Everything a mission needs beyond the environment itself."""

    controller: str = "flmpc"  # flmpc | smpc | bilevel
    sensor: SensorModel = field(default_factory=SensorModel)
    belief: BeliefParams = field(default_factory=BeliefParams)
    controller_params: ControllerParams = field(default_factory=ControllerParams)
    pso: PsoOptions = field(default_factory=PsoOptions)
    baseline: StochasticCostParams = field(default_factory=StochasticCostParams)
    ga: GaOptions = field(default_factory=GaOptions)
    initial_belief: tuple = (0.34, 0.33, 0.33)
    replan_period: int = 5
    snapshot_cadence: int = 0  # rounds between uncertainty snapshots, 0 = final only

    def __post_init__(self):
        if self.controller not in ("flmpc", "smpc", "bilevel"):
            raise ContractViolation(f"unknown controller {self.controller!r}")
        if self.replan_period < 1:
            raise ContractViolation("replan_period must be >= 1")


class MissionLog:
    """Deterministic event record of one mission.

    Serializes to JSON lines: a meta record, one record per event
    ({move, cancel, rescue, replan} plus cluster dumps for the bi-level
    controller), periodic snapshots, and a summary.  Two runs with the
    same configuration and seed produce byte-identical files.
    """

    def __init__(self, meta: dict):
        self.meta = dict(meta)
        self.events: list[dict] = []
        self.summary: dict = {}
        self.grading_stats: dict = {}  # wall-clock side channel, never serialized

    def add_event(self, kind: str, k: int, robot: int,
                  cell: tuple[int, int]) -> None:
        self.events.append({"t": kind, "k": int(k), "r": int(robot),
                            "c": [int(cell[0]), int(cell[1])]})

    def add_record(self, record: dict) -> None:
        self.events.append(record)

    # -- queries ------------------------------------------------------------

    def rescue_steps(self) -> list[int]:
        return sorted(e["k"] for e in self.events if e.get("t") == "rescue")

    def milestone_time(self, m: int) -> Optional[int]:
        """Step at which the m-th human was rescued, or None."""
        steps = self.rescue_steps()
        return steps[m - 1] if len(steps) >= m else None

    # -- serialization --------------------------------------------------------

    def to_bytes(self) -> bytes:
        lines = [json.dumps({"type": "meta", **self.meta}, sort_keys=True)]
        lines += [json.dumps(e, sort_keys=True) for e in self.events]
        lines.append(json.dumps({"type": "summary", **self.summary},
                                sort_keys=True))
        return ("\n".join(lines) + "\n").encode("utf-8")

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "MissionLog":
        lines = data.decode("utf-8").splitlines()
        records = [json.loads(line) for line in lines if line]
        meta = next(r for r in records if r.get("type") == "meta")
        summary = next(r for r in records if r.get("type") == "summary")
        log = cls({k: v for k, v in meta.items() if k != "type"})
        log.events = [r for r in records if "type" not in r]
        log.summary = {k: v for k, v in summary.items() if k != "type"}
        return log

    @classmethod
    def read(cls, path) -> "MissionLog":
        return cls.from_bytes(Path(path).read_bytes())


def cooperative_weights(own_field: np.ndarray,
                        other_fields: list[np.ndarray]) -> np.ndarray:
    """Reduce a robot's claimed weights by the strongest competing claims.

    Per cell: ``max{0, w_own - max_others w_other}``; cells no other robot
    claims are unchanged.
    """
    if not other_fields:
        return own_field.copy()
    others = other_fields[0]
    for f in other_fields[1:]:
        others = np.maximum(others, f)
    return np.maximum(0.0, own_field - others)


@dataclass
class MissionState:
    """Mutable state of a running mission (one controller, one world)."""

    env: Environment
    params: MissionParams
    budget_steps: int
    prob_map: ProbabilityMap
    fuzzy_maps: Optional[FuzzyMapSet]
    cert_map: Optional[CertaintyMap]
    planners: list
    log: MissionLog
    k: int = 0
    round_index: int = 0
    plans: dict = field(default_factory=dict)
    weight_fields: dict = field(default_factory=dict)
    parent_hooks: object = None

    @property
    def replan_period(self) -> int:
        return self.params.replan_period

    @property
    def finished(self) -> bool:
        return self.env.n_humans_left == 0 or self.k >= self.budget_steps


def _coop_field(state: MissionState, robot_id: int) -> Optional[np.ndarray]:
    fields = [f for rid, f in sorted(state.weight_fields.items())
              if rid != robot_id and f is not None]
    if not fields:
        return None
    out = fields[0]
    for f in fields[1:]:
        out = np.maximum(out, f)
    return out


def mission_step(state: MissionState) -> MissionState:
    """One central-controller round; mutates and returns the state."""
    if state.finished:
        raise ContractViolation("mission_step called on a finished mission")
    p = state.params
    steps = min(p.replan_period, state.budget_steps - state.k)
    if state.parent_hooks is not None:
        state.parent_hooks.on_round_start(state)
    obs_parts = []
    for robot in state.env.robots:
        rid = robot.id
        planner = state.planners[rid]
        seed = derive_seed(p.pso.seed, rid, state.k)
        if p.controller == "smpc":
            plan = planner.plan(robot.position, state.prob_map, state.cert_map,
                                seed=seed)
        else:
            hlc = None
            if state.parent_hooks is not None:
                hlc = state.parent_hooks.hlc_field(state, rid)
            plan = planner.plan(robot.position, state.fuzzy_maps,
                                _coop_field(state, rid), hlc, seed=seed)
        state.plans[rid] = plan
        state.weight_fields[rid] = planner.last_weight_field
        state.log.add_event("replan", state.k, rid, robot.position)
        aborted = False
        for m in range(1, steps + 1):
            k_abs = state.k + m
            if not aborted and m <= len(plan.cells):
                target = plan.cells[m - 1]
                outcome = step_robot(state.env, rid, target)
                state.log.add_event(outcome.value, k_abs, rid, target)
                if outcome is MoveOutcome.CANCELED:
                    aborted = True
            rng = np.random.default_rng(
                np.random.SeedSequence([state.env.rng_seed, rid, k_abs]))
            obs_parts.append(sense_arrays(state.env, robot.position,
                                          p.sensor, rng))
            if state.env.n_humans_left == 0:
                break
        if state.env.n_humans_left == 0:
            break
    batch = tuple(np.concatenate([part[i] for part in obs_parts])
                  for i in range(4))
    state.prob_map = bayes_update(state.prob_map, batch, p.sensor)
    if p.controller == "smpc":
        state.cert_map = update_certainty_map(state.cert_map, batch,
                                              p.baseline.certainty_decay)
    else:
        state.fuzzy_maps = update_fuzzy_maps(state.fuzzy_maps, state.prob_map,
                                             batch, p.belief)
    state.k += steps
    state.round_index += 1
    if state.parent_hooks is not None:
        state.parent_hooks.after_round(state)
    if p.snapshot_cadence and state.round_index % p.snapshot_cadence == 0:
        _log_snapshot(state)
    return state


def _uncertainty_grid(state: MissionState) -> np.ndarray:
    if state.fuzzy_maps is not None:
        return state.fuzzy_maps["uncertainty"]
    return 1.0 - state.cert_map.values  # baseline analogue


def _log_snapshot(state: MissionState) -> None:
    pgm = grid_to_pgm(_uncertainty_grid(state))
    state.log.add_record({"t": "snapshot", "k": state.k,
                          "uncertainty_pgm": base64.b64encode(pgm).decode()})


def _make_state(env: Environment, params: MissionParams, budget_steps: int,
                meta: dict, parent_hooks=None) -> MissionState:
    h, w = env.height, env.width
    prob = ProbabilityMap.initial(w, h, params.initial_belief)
    fuzzy = None
    cert = None
    if params.controller == "smpc":
        cert = CertaintyMap.initial(w, h)
        planners = [StochasticPlanner(params.controller_params, params.baseline,
                                      params.sensor, params.pso, w, h)
                    for _ in env.robots]
    else:
        fuzzy = FuzzyMapSet.initial(w, h, params.initial_belief,
                                    params.belief.bank)
        planners = [FlmpcPlanner(params.controller_params, params.pso, w, h)
                    for _ in env.robots]
    log = MissionLog(meta)
    return MissionState(env=env, params=params, budget_steps=budget_steps,
                        prob_map=prob, fuzzy_maps=fuzzy, cert_map=cert,
                        planners=planners, log=log, parent_hooks=parent_hooks)


def run_mission(env: Environment, params: MissionParams, budget_steps: int,
                meta: Optional[dict] = None, parent_hooks=None) -> MissionLog:
    """Run one mission to completion or budget exhaustion.

    The environment is copied; the caller's instance is untouched.  Returns
    the mission log; grading statistics stay on ``log.grading_stats`` (a
    plain dict, not serialized, since wall-clock numbers are not
    reproducible).
    """
    if budget_steps <= 0:
        raise ContractViolation("budget_steps must be positive")
    from . import kernels
    kernels.warmup()
    env = env.copy()
    meta = dict(meta or {})
    meta.setdefault("controller", params.controller)
    meta.setdefault("seed", env.rng_seed)
    state = _make_state(env, params, budget_steps, meta, parent_hooks)
    if parent_hooks is not None:
        parent_hooks.on_mission_start(state)
    t0 = time.perf_counter()
    while not state.finished:
        mission_step(state)
    wall = time.perf_counter() - t0
    rescues = [[e["k"], e["r"], e["c"][0], e["c"][1]]
               for e in state.log.events if e["t"] == "rescue"]
    state.log.summary = {
        "completed": env.n_humans_left == 0,
        "humans_left": env.n_humans_left,
        "steps_used": state.k,
        "budget_steps": budget_steps,
        "rescues": rescues,
        "zero_posterior_count": state.prob_map.zero_posterior_count,
        "final_uncertainty_pgm": base64.b64encode(
            grid_to_pgm(_uncertainty_grid(state))).decode(),
    }
    evals = sum(pl.stats.count for pl in state.planners)
    secs = sum(pl.stats.seconds for pl in state.planners)
    state.log.grading_stats = {"evals": evals, "grading_seconds": secs,
                               "mission_seconds": wall}
    return state.log


def run_single_level_mission(environment: Environment, params: MissionParams,
                             budget_steps: int) -> MissionLog:
    """Single-level mission (no cluster layer): plan, move, sense, update."""
    if params.controller == "bilevel":
        raise ContractViolation("use clusters.run_bilevel_mission for bilevel")
    return run_mission(environment, params, budget_steps)
