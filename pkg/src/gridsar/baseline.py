"""Comparison controller: receding-horizon planning on a stochastic cost.

Shares the motion encoding, the particle swarm and the sensing pipeline
with the fuzzy planner, but grades candidates by a discounted sum of
stochastic terms over probability and certainty maps.  Because future
measurements are unknown, each step of a candidate assumes the most likely
observation per cell and rolls private copies of both maps forward (the
regular Bayes and certainty updates) before scoring the next step.  That
per-candidate map rolling happens inside the optimization loop and is what
makes grading a candidate an order of magnitude more expensive here than
in the fuzzy planner, whose maps are updated once per round outside the
loop.

The published description of this controller is qualitative; the term
shapes and weights below are a reconstruction, tuned once on held-out
seeds and then frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .belief import (CertaintyMap, ProbabilityMap, bayes_update,
                     update_certainty_map)
from .planner import ControllerParams, TrajectoryPlan, decode_motion_plan
from .solvers import EvalStats, PsoOptions, particle_swarm_maximize
from .world import HUMAN, OBSTACLE, SensorModel, disc_offsets

__all__ = [
    "StochasticCostParams",
    "predict_maps",
    "grade_trajectory_stochastic",
    "StochasticPlanner",
]


@dataclass(frozen=True)
class StochasticCostParams:
    """Weights of the four cost terms plus the per-step discount base.

    Terms per plan step: search effectiveness (expected non-detection mass
    over the observed disc), negative uncertainty-gain reward, negative
    rescue reward on reaching a cell whose human belief exceeds
    ``rescue_threshold``, and an exponential penalty ``exp(20 (b - 1))`` in
    the obstacle belief of the traversed cell (normalized so a certain
    obstacle costs the full weight while prior-level beliefs cost nearly
    nothing).  The discount of path step q is ``exp(-2 q / n_path)``.
    """

    w_search: float = 1.0
    w_uncertainty: float = 0.5
    w_rescue: float = 2.0
    w_obstacle: float = 1.0
    rescue_threshold: float = 0.95
    certainty_decay: float = 0.99

    def __post_init__(self):
        if min(self.w_search, self.w_uncertainty, self.w_rescue,
               self.w_obstacle) < 0:
            raise ValueError("cost weights must be >= 0")
        if not (0.0 < self.certainty_decay <= 1.0):
            raise ValueError("certainty_decay must lie in (0, 1]")


def _clipped_disc(cx, cy, width, height, dx, dy, det):
    xs, ys = dx + cx, dy + cy
    inb = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    return xs[inb], ys[inb], det[inb]


def predict_maps(prob_map: ProbabilityMap, cert_map: CertaintyMap,
                 plan: TrajectoryPlan, sensor_model: SensorModel,
                 decay: float = 0.99) -> list[tuple[ProbabilityMap, CertaintyMap]]:
    """Roll map copies through a plan under the maximum-belief assumption.

    For each plan step the future observation of every disc cell is taken
    to be its currently most likely state; the Bayes and certainty updates
    then apply exactly as they would for real measurements.  Returns the
    predicted (probability, certainty) pair after each step.
    """
    prob = prob_map.copy()
    cert = cert_map.copy()
    h, w = cert.values.shape
    dx, dy, dist = disc_offsets(sensor_model.delta_max)
    det = 1.0 - (dist / sensor_model.delta_max) ** 2
    out = []
    for cx, cy in plan.cells:
        xs, ys, d = _clipped_disc(cx, cy, w, h, dx, dy, det)
        states = prob.values[ys, xs].argmax(axis=1)
        batch = (xs, ys, states, d)
        prob = bayes_update(prob, batch, sensor_model, assume_unique=True)
        cert = update_certainty_map(cert, batch, decay, assume_unique=True)
        out.append((prob, cert))
        prob = prob.copy()
        cert = cert.copy()
    return out


class _StochasticContext:
    """Shared snapshots and disc geometry for grading one planning round."""

    def __init__(self, prob_map: ProbabilityMap, cert_map: CertaintyMap,
                 params: StochasticCostParams, controller: ControllerParams,
                 sensor: SensorModel):
        self.height, self.width = cert_map.values.shape
        self.prob0 = prob_map
        self.cert0 = cert_map
        self.params = params
        self.controller = controller
        self.sensor = sensor
        dx, dy, dist = disc_offsets(sensor.delta_max)
        self.disc = (dx, dy, 1.0 - (dist / sensor.delta_max) ** 2)
        self._disc_cache: dict = {}
        q = np.arange(1, controller.n_path + 1, dtype=float)
        self.betas = np.exp(-2.0 * q / controller.n_path)

    def _disc_at(self, cx: int, cy: int):
        got = self._disc_cache.get((cx, cy))
        if got is None:
            dx, dy, det = self.disc
            got = _clipped_disc(cx, cy, self.width, self.height, dx, dy, det)
            self._disc_cache[(cx, cy)] = got
        return got

    def grade_cells(self, cells) -> float:
        """Discounted cost of a cell path, rolling private map copies."""
        p = self.params
        prob = self.prob0.copy()
        cert = self.cert0.copy()
        n_disc = len(self.disc[0])
        cost = 0.0
        for q, (cx, cy) in enumerate(cells):
            beta = self.betas[q]
            b_robot = prob.values[cy, cx]
            if b_robot[HUMAN] >= p.rescue_threshold:
                cost -= p.w_rescue * beta * b_robot[HUMAN]
            cost += p.w_obstacle * beta * math.exp(20.0 * (b_robot[OBSTACLE] - 1.0))
            xs, ys, d = self._disc_at(int(cx), int(cy))
            cost += p.w_search * beta * float(
                np.prod(1.0 - prob.values[ys, xs, HUMAN] * d))
            z_old = cert.values[ys, xs]
            gain = float(((1.0 - (1.0 - z_old) * (1.0 - d)) - z_old).sum())
            cost -= p.w_uncertainty * beta * gain / n_disc
            states = prob.values[ys, xs].argmax(axis=1)
            batch = (xs, ys, states, d)
            prob = bayes_update(prob, batch, self.sensor, assume_unique=True)
            cert = update_certainty_map(cert, batch, p.certainty_decay,
                                        assume_unique=True)
        return cost

    def grade_vector(self, x, start) -> float:
        plan = decode_motion_plan(x, start, self.controller,
                                  self.width, self.height)
        return self.grade_cells(plan.cells)


def grade_trajectory_stochastic(plan: TrajectoryPlan, prob_map: ProbabilityMap,
                                cert_map: CertaintyMap,
                                params: StochasticCostParams,
                                controller: ControllerParams,
                                sensor: SensorModel) -> float:
    """Discounted stochastic cost of one plan (lower is better)."""
    ctx = _StochasticContext(prob_map, cert_map, params, controller, sensor)
    return ctx.grade_cells(list(plan.cells))


class StochasticPlanner:
    """Baseline planner; decode, solver and options mirror the fuzzy planner."""

    def __init__(self, params: ControllerParams, cost: StochasticCostParams,
                 sensor: SensorModel, pso: PsoOptions, width: int, height: int):
        self.params = params
        self.cost = cost
        self.sensor = sensor
        self.pso = pso
        self.width = width
        self.height = height
        self.stats = EvalStats()
        self.last_value: float = 0.0
        self.last_weight_field = None  # baseline exchanges no tuning weights

    def plan(self, robot_position: tuple[int, int], prob_map: ProbabilityMap,
             cert_map: CertaintyMap, seed: int | None = None) -> TrajectoryPlan:
        ctx = _StochasticContext(prob_map, cert_map, self.cost, self.params,
                                 self.sensor)
        pso = self.pso if seed is None else replace(self.pso, seed=seed)
        bounds = [(0.0, float(self.params.n_travel)), (0.0, 2.0 * math.pi)] \
            * self.params.n_p
        best, value = particle_swarm_maximize(
            lambda v: -ctx.grade_vector(v, robot_position),
            bounds, pso, stats=self.stats)
        self.last_value = -value
        return decode_motion_plan(best, robot_position, self.params,
                                  self.width, self.height)
