"""Single-robot fuzzy receding-horizon planner.

A candidate plan is encoded as ``n_p`` blocks of (segment length, heading);
decoding rasterizes each block onto the 8-connected grid, capping the total
path at ``n_path`` cells.  Grading a plan considers every cell observable
along it (a disc of radius ``delta_max_plan`` per path cell): each such
cell receives a tuning weight from its first-sighting distance and step,
reduced by the weights other robots have already claimed, and feeds the
weighted goal aggregation; the traversed cells feed the passability
constraint.  The particle swarm then maximizes the fused grade over the
decision box.

Everything the grade needs from the maps is precomputed per snapshot, so a
single candidate evaluation is a few hundred array gathers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .belief import REWARD_LAYERS, FuzzyMapSet
from .fuzzy import AggregationParams
from .solvers import EvalStats, PsoOptions, particle_swarm_maximize
from .world import ConfigurationError, disc_offsets

__all__ = [
    "ControllerParams",
    "TrajectoryPlan",
    "ObservedCellSet",
    "decode_motion_plan",
    "observed_set",
    "tuning_weights",
    "weight_field_from_sightings",
    "build_goal_grid",
    "max_observable_count",
    "grade_trajectory",
    "FlmpcPlanner",
]


@dataclass(frozen=True)
class ControllerParams:
    """Horizons and discounts of the short-term planner.

    ``n_p`` decision blocks of at most ``n_travel`` cells each, with the
    total path capped at ``n_path`` cells; ``gamma`` discounts later
    blocks, ``delta_max_plan`` is the radius of the observation disc used
    for grading (independent of the sensor radius).
    """

    n_p: int = 5
    n_travel: int = 14
    n_path: int = 20
    gamma: float = 0.965
    delta_max_plan: float = 5.0
    aggregation: AggregationParams = field(default_factory=AggregationParams)

    def __post_init__(self):
        if self.n_path > self.n_p * self.n_travel:
            raise ConfigurationError("n_path must be <= n_p * n_travel")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.delta_max_plan <= 0:
            raise ConfigurationError("delta_max_plan must be positive")


@dataclass
class TrajectoryPlan:
    """Decoded candidate path: cells with their planned visit block.

    Consecutive cells are 8-adjacent and the first cell is adjacent to the
    start; ``kappas[i]`` is the 1-based decision block that produced cell i.
    """

    start: tuple[int, int]
    cells: list[tuple[int, int]]
    kappas: list[int]
    decision_vector: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class ObservedCellSet:
    """Cells observable along a plan, with earliest sighting step/distance."""

    width: int
    height: int
    cells: list[tuple[int, int]]
    kappas: list[int]
    deltas: list[float]

    def as_dict(self) -> dict:
        return {c: (k, d) for c, k, d in zip(self.cells, self.kappas, self.deltas)}


def decode_motion_plan(decision_vector, robot_position: tuple[int, int],
                       params: ControllerParams, width: int, height: int
                       ) -> TrajectoryPlan:
    """Decode a real vector of ``n_p`` (length, heading) blocks into a plan."""
    x = np.ascontiguousarray(decision_vector, dtype=float)
    if x.shape != (2 * params.n_p,):
        raise ConfigurationError(
            f"decision vector must have length {2 * params.n_p}")
    px = np.empty(params.n_path, dtype=np.int64)
    py = np.empty(params.n_path, dtype=np.int64)
    pk = np.empty(params.n_path, dtype=np.int64)
    plen = kernels.decode_path(x, params.n_p, params.n_travel, params.n_path,
                               robot_position[0], robot_position[1],
                               width, height,
                               kernels.DIR_X, kernels.DIR_Y, kernels.DIR_INVNORM,
                               px, py, pk)
    cells = [(int(px[i]), int(py[i])) for i in range(plen)]
    return TrajectoryPlan(tuple(robot_position), cells,
                          [int(pk[i]) for i in range(plen)], x)


def observed_set(plan: TrajectoryPlan, delta_max_plan: float,
                 width: int, height: int) -> ObservedCellSet:
    """Union of observation discs along the plan, first sighting per cell.

    An empty plan observes the disc around the start position (the robot
    senses where it stands), recorded at step 0.
    """
    dx, dy, dist = disc_offsets(delta_max_plan)
    seen: dict[tuple[int, int], tuple[int, float]] = {}
    anchors = list(zip(plan.cells, plan.kappas)) or [(plan.start, 0)]
    for (cx, cy), kappa in anchors:
        for ox, oy, od in zip(dx, dy, dist):
            nx, ny = cx + int(ox), cy + int(oy)
            if 0 <= nx < width and 0 <= ny < height and (nx, ny) not in seen:
                seen[(nx, ny)] = (kappa, float(od))
    cells = list(seen)
    return ObservedCellSet(width, height, cells,
                           [seen[c][0] for c in cells],
                           [seen[c][1] for c in cells])


def tuning_weights(observed: ObservedCellSet, params: ControllerParams,
                   hlc_field: np.ndarray | None = None) -> np.ndarray:
    """Per-cell tuning weights from (distance, step) sightings.

    ``w = 1 / (1 - ln(alpha * beta))`` with ``alpha = max{0, 1 - delta /
    delta_max_plan}`` and ``beta = gamma^kappa``; a sighting only ever
    raises a cell's weight (previous value 0).  A cluster weight field, when
    given, multiplies into the log argument; a zero product leaves the
    previous weight untouched.
    """
    sightings = zip(observed.cells, observed.kappas, observed.deltas)
    return weight_field_from_sightings(sightings, params,
                                       (observed.height, observed.width),
                                       hlc_field)


def weight_field_from_sightings(sightings, params: ControllerParams,
                                shape: tuple[int, int],
                                hlc_field: np.ndarray | None = None
                                ) -> np.ndarray:
    """Fold an ordered stream of (cell, step, distance) sightings into weights.

    Later sightings of a cell update its weight only if larger, so
    revisiting at a worse distance/step leaves the field unchanged.
    """
    w = np.zeros(shape)
    for (x, y), kappa, delta in sightings:
        alpha = max(0.0, 1.0 - delta / params.delta_max_plan)
        if hlc_field is not None:
            alpha *= hlc_field[y, x]
        if alpha <= 0.0:
            continue
        value = 1.0 / (1.0 - math.log(alpha * params.gamma ** kappa))
        if value > w[y, x]:
            w[y, x] = value
    return w


def build_goal_grid(fuzzy_maps: FuzzyMapSet, params: AggregationParams
                    ) -> np.ndarray:
    """S-norm of the reward layers, evaluated once per map snapshot."""
    layers = [fuzzy_maps[name] for name in REWARD_LAYERS]
    if params.s_norm == "max":
        out = layers[0]
        for la in layers[1:]:
            out = np.maximum(out, la)
        return out.astype(float)
    out = layers[0].astype(float)
    for la in layers[1:]:
        out = out + la - out * la
    return out


def max_observable_count(params: ControllerParams) -> int:
    """Fixed denominator of the weighted goal mean.

    Disc area times ``n_path``: an upper bound on the cardinality of any
    plan's observed set, constant across candidates so the optimizer cannot
    inflate the mean by observing fewer cells.
    """
    return len(disc_offsets(params.delta_max_plan)[0]) * params.n_path


def _grid_or_zeros(grid, shape) -> np.ndarray:
    if grid is None:
        return np.zeros(shape[0] * shape[1])
    return np.ascontiguousarray(grid, dtype=float).ravel()


def _grid_or_ones(grid, shape) -> np.ndarray:
    if grid is None:
        return np.ones(shape[0] * shape[1])
    return np.ascontiguousarray(grid, dtype=float).ravel()


_RIM_CACHE: dict[float, tuple] = {}


def _rim_offsets(radius: float) -> tuple:
    """Per step direction: disc offsets newly uncovered by that step.

    Moving by (dx, dy) uncovers the offsets o of the new disc with
    ``|o + (dx, dy)| >= radius``; slot index is ``(dy+1)*3 + (dx+1)``
    (the center slot stays empty for a repeated cell).  CSR layout.
    """
    got = _RIM_CACHE.get(radius)
    if got is None:
        odx, ody, dist = disc_offsets(radius)
        ptr = [0]
        rdx, rdy, ralpha = [], [], []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dx, dy) != (0, 0):
                    prev_dist = np.hypot(odx + dx, ody + dy)
                    keep = prev_dist >= radius
                    rdx.extend(odx[keep])
                    rdy.extend(ody[keep])
                    ralpha.extend(1.0 - dist[keep] / radius)
                ptr.append(len(rdx))
        got = (np.asarray(ptr, dtype=np.int64),
               np.asarray(rdx, dtype=np.int64),
               np.asarray(rdy, dtype=np.int64),
               np.asarray(ralpha, dtype=np.float64))
        _RIM_CACHE[radius] = got
    return got


class _GradingContext:
    """Flattened snapshot arrays plus scratch space for the grade kernel."""

    def __init__(self, fuzzy_maps: FuzzyMapSet, params: ControllerParams,
                 coop_field=None, hlc_field=None, max_count=None):
        shape = fuzzy_maps["passability"].shape
        self.height, self.width = shape
        self.params = params
        agg = params.aggregation
        dx, dy, dist = disc_offsets(params.delta_max_plan)
        self.off_dx, self.off_dy = dx, dy
        self.off_alpha = 1.0 - dist / params.delta_max_plan
        self.rim_ptr, self.rim_dx, self.rim_dy, self.rim_alpha = \
            _rim_offsets(params.delta_max_plan)
        self.goal = np.ascontiguousarray(build_goal_grid(fuzzy_maps, agg)).ravel()
        self.passability = np.ascontiguousarray(
            fuzzy_maps["passability"], dtype=float).ravel()
        self.coop = _grid_or_zeros(coop_field, shape)
        self.hlc = _grid_or_ones(hlc_field, shape)
        self.gamma_pows = params.gamma ** np.arange(params.n_p + 1, dtype=float)
        self.max_count = max_count or max_observable_count(params)
        ncells = self.width * self.height
        self.seen = np.full(ncells, -1, dtype=np.int64)
        self.members = np.empty(ncells, dtype=np.int64)
        self.kappas = np.empty(ncells, dtype=np.int64)
        self.alphas = np.empty(ncells, dtype=np.float64)
        self._gen = 0

    def grade_path(self, path_x, path_y, path_k, plen) -> float:
        agg = self.params.aggregation
        self._gen += 1
        return kernels.grade_fuzzy_path(
            path_x, path_y, path_k, plen, self.width, self.height,
            self.off_dx, self.off_dy, self.off_alpha,
            self.rim_ptr, self.rim_dx, self.rim_dy, self.rim_alpha,
            self.goal, self.passability, self.coop, self.hlc, self.gamma_pows,
            agg.w_goal, agg.w_con, agg.w_agg, 1.0 / self.max_count,
            agg.t_norm == "min",
            self.seen, self.members, self.kappas, self.alphas, self._gen)

    def batch(self, X, start) -> np.ndarray:
        agg = self.params.aggregation
        out = np.empty(len(X))
        kernels.fuzzy_batch(
            np.ascontiguousarray(X, dtype=float), start[0], start[1],
            self.params.n_p, self.params.n_travel, self.params.n_path,
            self.width, self.height,
            kernels.DIR_X, kernels.DIR_Y, kernels.DIR_INVNORM,
            self.off_dx, self.off_dy, self.off_alpha,
            self.rim_ptr, self.rim_dx, self.rim_dy, self.rim_alpha,
            self.goal, self.passability, self.coop, self.hlc, self.gamma_pows,
            agg.w_goal, agg.w_con, agg.w_agg, 1.0 / self.max_count,
            agg.t_norm == "min", out)
        return out


def grade_trajectory(plan: TrajectoryPlan, fuzzy_maps: FuzzyMapSet,
                     coop_weight_field: np.ndarray | None,
                     max_observable_count: int | None,
                     params: ControllerParams,
                     hlc_field: np.ndarray | None = None) -> float:
    """Overall fuzzy grade of one plan against immutable map snapshots.

    Empty plans grade 0 (nothing is gained by standing still).
    """
    ctx = _GradingContext(fuzzy_maps, params, coop_weight_field, hlc_field,
                          max_observable_count)
    n = len(plan.cells)
    px = np.array([c[0] for c in plan.cells], dtype=np.int64)
    py = np.array([c[1] for c in plan.cells], dtype=np.int64)
    pk = np.asarray(plan.kappas, dtype=np.int64)
    return float(ctx.grade_path(px, py, pk, n))


class FlmpcPlanner:
    """One planner instance per robot; holds parameters and eval statistics.

    ``plan`` runs the particle swarm over the decision box against the
    given snapshots and returns the decoded best plan; the tuning-weight
    field of the returned plan is kept on ``last_weight_field`` for the
    coordinator to register.
    """

    def __init__(self, params: ControllerParams, pso: PsoOptions,
                 width: int, height: int):
        self.params = params
        self.pso = pso
        self.width = width
        self.height = height
        self.stats = EvalStats()
        self.last_weight_field: np.ndarray | None = None
        self.last_value: float = 0.0

    def plan(self, robot_position: tuple[int, int], fuzzy_maps: FuzzyMapSet,
             coop_weight_field: np.ndarray | None = None,
             hlc_field: np.ndarray | None = None,
             seed: int | None = None) -> TrajectoryPlan:
        ctx = _GradingContext(fuzzy_maps, self.params, coop_weight_field,
                              hlc_field)
        pso = self.pso if seed is None else replace(self.pso, seed=seed)
        bounds = [(0.0, float(self.params.n_travel)), (0.0, 2.0 * math.pi)] \
            * self.params.n_p
        best, value = particle_swarm_maximize(
            lambda v: float(ctx.batch(v[None, :], robot_position)[0]),
            bounds, pso,
            objective_batch=lambda X: ctx.batch(X, robot_position),
            stats=self.stats)
        plan = decode_motion_plan(best, robot_position, self.params,
                                  self.width, self.height)
        observed = observed_set(plan, self.params.delta_max_plan,
                                self.width, self.height)
        self.last_weight_field = tuning_weights(observed, self.params,
                                                hlc_field)
        self.last_value = value
        return plan
