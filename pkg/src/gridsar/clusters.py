"""Bi-level parent layer: fuzzy clustering of the grid and long-term routing.

The grid is covered by square fuzzy clusters with an overlapping fringe.
Each cluster carries a score (a power mean of its cells' aggregated
goal/constraint degrees, weighted by membership) and an exploration state
driven by the score with hysteresis:

* score below ``s_exp``                      -> explored
* score above ``s_unexp`` (if explored)      -> unexplored again
* assigned to a route but not yet entered    -> to_be_explored
* assigned and a robot is inside its support -> being_explored

Routes partition the not-yet-explored clusters among robots (a genetic
router maximizes distance-discounted route quality).  The assigned cluster
shapes the short-term planner through a per-cell weight: cluster
membership while inside, a distance Gaussian gated on approach while
travelling toward it.  Walls discovered inside a cluster split it into
connected components: the largest keeps the identity and route slot,
smaller ones merge into the best-overlapping neighbor or are dropped when
unreachable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .coordination import (MissionLog, MissionParams, MissionState,
                           derive_seed, run_mission)
from .belief import FuzzyMapSet, CONSTRAINT_LAYERS, REWARD_LAYERS
from .fuzzy import AggregationParams
from .solvers import GaOptions, ga_route_assign
from .world import ConfigurationError, ContractViolation, Environment

__all__ = [
    "ClusterState",
    "FuzzyCluster",
    "ClusterRoute",
    "ParentParams",
    "init_clusters",
    "cell_aggregated_grid",
    "cluster_score",
    "update_cluster_states",
    "split_merge_clusters",
    "parent_tuning_weight",
    "high_level_plan",
    "child_weight_transform",
    "hlc_field_for",
    "run_bilevel_mission",
]


class ClusterState(enum.Enum):
    UNEXPLORED = "unexplored"
    TO_BE_EXPLORED = "to_be_explored"
    BEING_EXPLORED = "being_explored"
    EXPLORED = "explored"


@dataclass
class FuzzyCluster:
    id: int
    membership: np.ndarray
    score: float
    state: ClusterState = ClusterState.UNEXPLORED

    @property
    def support(self) -> np.ndarray:
        return self.membership > 0.0

    @property
    def center(self) -> tuple[float, float]:
        """Membership-weighted centroid of the support."""
        ys, xs = np.nonzero(self.membership)
        w = self.membership[ys, xs]
        tot = w.sum()
        return (float((xs * w).sum() / tot), float((ys * w).sum() / tot))

    def bounding_box(self) -> tuple[int, int, int, int]:
        ys, xs = np.nonzero(self.membership)
        return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


@dataclass
class ClusterRoute:
    robot_id: int
    cluster_ids: list[int]
    planned_steps: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.planned_steps:
            self.planned_steps = list(range(1, len(self.cluster_ids) + 1))


@dataclass(frozen=True)
class ParentParams:
    """Geometry, thresholds and discounts of the cluster layer.

    ``s_exp`` must stay well below ``s_unexp`` so random measurement noise
    cannot flip cluster states back and forth.  ``sigma`` shapes the
    approach Gaussian (in cells); ``eta`` is the cutoff distance beyond
    which an assigned cluster gives no pull (default two cluster sides).
    """

    cluster_side: int = 40
    overlap_depth: int = 3
    s_exp: float = 0.22
    s_unexp: float = 0.4
    gamma_parent: float = 0.98
    sigma: float = 60.0
    eta: float | None = None
    init_score: float = 0.49

    def __post_init__(self):
        if not self.s_exp < self.s_unexp:
            raise ConfigurationError("require s_exp < s_unexp")
        if self.cluster_side < 1 or self.overlap_depth < 0:
            raise ConfigurationError("bad cluster geometry")

    @property
    def eta_value(self) -> float:
        return self.eta if self.eta is not None else 2.0 * self.cluster_side


def init_clusters(grid_dims: tuple[int, int],
                  parent_params: ParentParams) -> list[FuzzyCluster]:
    """Tile the grid with square clusters plus a quadratically fading fringe.

    Interior membership is 1; cells up to ``overlap_depth`` outside the
    square get ``(1 - d/(overlap_depth+1))^2`` with d their Chebyshev
    distance to the square, so robots may slip over cluster borders when
    useful.  Scores start just below 0.5: everything is unexplored and
    nothing is known about targets yet.
    """
    width, height = grid_dims
    side = parent_params.cluster_side
    if width % side or height % side:
        raise ConfigurationError(
            f"grid {width}x{height} not divisible into {side}-cell squares")
    depth = parent_params.overlap_depth
    xs = np.arange(width)
    ys = np.arange(height)
    clusters = []
    cid = 0
    for y0 in range(0, height, side):
        for x0 in range(0, width, side):
            dx = np.maximum(np.maximum(x0 - xs, xs - (x0 + side - 1)), 0)
            dy = np.maximum(np.maximum(y0 - ys, ys - (y0 + side - 1)), 0)
            cheb = np.maximum(dx[None, :], dy[:, None])
            mu = np.where(cheb == 0, 1.0,
                          np.where(cheb <= depth,
                                   (1.0 - cheb / (depth + 1.0)) ** 2, 0.0))
            clusters.append(FuzzyCluster(cid, mu, parent_params.init_score))
            cid += 1
    return clusters


def cell_aggregated_grid(fuzzy_maps: FuzzyMapSet) -> np.ndarray:
    """Per-cell aggregated degree: best reward capped by every constraint."""
    out = fuzzy_maps[REWARD_LAYERS[0]].copy()
    for name in REWARD_LAYERS[1:]:
        np.maximum(out, fuzzy_maps[name], out=out)
    for name in CONSTRAINT_LAYERS:
        np.minimum(out, fuzzy_maps[name], out=out)
    return out


def cluster_score(cluster: FuzzyCluster, fuzzy_maps: FuzzyMapSet,
                  params: AggregationParams,
                  agg_grid: np.ndarray | None = None) -> float:
    """Membership-weighted power mean of the cluster's cell degrees.

    The exponent ``w_cluster`` pulls the score toward the few best cells,
    so one strongly believed target outweighs a sea of explored emptiness.
    Empty support scores 0.
    """
    if agg_grid is None:
        agg_grid = cell_aggregated_grid(fuzzy_maps)
    mask = cluster.membership > 0.0
    mu = cluster.membership[mask]
    den = mu.sum()
    if den == 0.0:
        return 0.0
    w = params.w_cluster
    num = ((mu * agg_grid[mask]) ** w).sum()
    return float((num / den) ** (1.0 / w))


def update_cluster_states(clusters: list[FuzzyCluster],
                          routes: list[ClusterRoute],
                          robot_positions: dict[int, tuple[int, int]],
                          params: ParentParams) -> None:
    """Apply the score thresholds and route/presence promotions in place.

    A robot counts as exploring only the head cluster of its own route
    (passing through a foreign cluster does not claim it).  Inside the
    hysteresis band states are left alone.
    """
    head = {}
    routed = set()
    for route in routes:
        routed.update(route.cluster_ids)
        if route.cluster_ids:
            head[route.robot_id] = route.cluster_ids[0]
    by_id = {c.id: c for c in clusters}
    for c in clusters:
        if c.score < params.s_exp:
            c.state = ClusterState.EXPLORED
            continue
        if c.state is ClusterState.EXPLORED:
            if c.score > params.s_unexp:
                c.state = ClusterState.UNEXPLORED
            else:
                continue
        c.state = ClusterState.TO_BE_EXPLORED if c.id in routed \
            else ClusterState.UNEXPLORED
    for rid, cid in head.items():
        c = by_id.get(cid)
        if c is None or c.state is ClusterState.EXPLORED:
            continue
        x, y = robot_positions[rid]
        if c.membership[y, x] > 0.0:
            c.state = ClusterState.BEING_EXPLORED


_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def split_merge_clusters(cluster: FuzzyCluster, passability_layer: np.ndarray,
                         clusters: list[FuzzyCluster], threshold: float = 0.1,
                         robot_positions: list[tuple[int, int]] | None = None
                         ) -> list[FuzzyCluster]:
    """Split a cluster whose passable support is no longer connected.

    Cells with passability below ``threshold`` count as walls.  If the
    remaining support falls apart into several 4-connected components, the
    largest keeps the cluster id (and thereby its route slot); every other
    component is merged into the overlapping external cluster with the
    highest mean membership over the component's cells, or dropped
    entirely when no robot can reach it.  A reachable component that
    overlaps no other cluster becomes a new cluster of its own.  Returns
    the updated cluster list.
    """
    walls = passability_layer < threshold
    passable = cluster.support & ~walls
    labels, ncomp = ndimage.label(passable, structure=_FOUR)
    if ncomp <= 1:
        return clusters
    sizes = ndimage.sum_labels(np.ones_like(labels), labels,
                               index=np.arange(1, ncomp + 1))
    keep_label = 1 + int(np.argmax(sizes))  # ties: first in scan order

    reachable = None
    if robot_positions is not None:
        seeds = np.zeros_like(walls)
        for x, y in robot_positions:
            if not walls[y, x]:
                seeds[y, x] = True
        grown = ndimage.binary_dilation(seeds, structure=np.ones((3, 3)),
                                        mask=~walls, iterations=0)
        reachable = grown

    out = [c for c in clusters]
    new_id = max(c.id for c in clusters) + 1
    for comp in range(1, ncomp + 1):
        if comp == keep_label:
            continue
        comp_mask = labels == comp
        cluster.membership = np.where(comp_mask, 0.0, cluster.membership)
        if reachable is not None and not (reachable & comp_mask).any():
            continue  # enclosed by walls: excluded from the map
        best, best_mean = None, 0.0
        for other in out:
            if other.id == cluster.id:
                continue
            mean = float(other.membership[comp_mask].mean())
            if mean > best_mean:
                best, best_mean = other, mean
        if best is not None:
            # transferred cells adopt the receiver's membership; cells the
            # receiver never covered get the smallest fringe degree so no
            # reachable cell drops out of every cluster
            best.membership[comp_mask] = np.maximum(
                best.membership[comp_mask], 0.0625)
        else:
            mu = np.where(comp_mask, 1.0, 0.0)
            out.append(FuzzyCluster(new_id, mu, cluster.score, cluster.state))
            new_id += 1
    return out


def parent_tuning_weight(cum_distance: float, gamma_parent: float,
                         previous: float = 0.0) -> float:
    """Route-position weight of a cluster: ``1 / (1 - ln(gamma^D))``.

    ``D`` is the cumulative center-to-center distance from the robot along
    the route; a later sighting only ever raises the weight.
    """
    beta = gamma_parent ** cum_distance
    return max(1.0 / (1.0 - math.log(beta)), previous)


def route_quality(routes: list[list[int]], scores: dict[int, float],
                  centers: dict[int, tuple[float, float]],
                  robot_positions: list[tuple[int, int]],
                  params: ParentParams, agg: AggregationParams) -> float:
    """Sum over robots of the distance-discounted generalized route mean."""
    n_cand = max(1, len(scores))
    w = agg.w_goal_parent
    total = 0.0
    for rid, route in enumerate(routes):
        if not route:
            continue
        px, py = robot_positions[rid]
        prev = (float(px), float(py))
        cum = 0.0
        acc = 0.0
        for cid in route:
            cx, cy = centers[cid]
            cum += math.hypot(cx - prev[0], cy - prev[1])
            prev = (cx, cy)
            w_hat = parent_tuning_weight(cum, params.gamma_parent)
            acc += scores[cid] ** (w + 1.0 / w_hat)
        total += (acc / n_cand) ** (1.0 / w)
    return total


def high_level_plan(clusters: list[FuzzyCluster],
                    robot_positions: list[tuple[int, int]],
                    params: ParentParams, agg: AggregationParams,
                    ga_options: GaOptions) -> list[ClusterRoute]:
    """Partition the not-yet-explored clusters into one route per robot.

    With fewer candidate clusters than robots the small assignment space
    is enumerated directly; otherwise the genetic router searches
    permutation + break-point chromosomes.  Robots left without clusters
    get an empty route.
    """
    candidates = [c for c in clusters if c.state is not ClusterState.EXPLORED]
    if not candidates:
        raise ContractViolation("high_level_plan requires >= 1 unexplored cluster")
    n_rob = len(robot_positions)
    ids = [c.id for c in candidates]
    scores = {c.id: c.score for c in candidates}
    centers = {c.id: c.center for c in candidates}

    def quality(routes_idx: list[list[int]]) -> float:
        routes = [[ids[i] for i in r] for r in routes_idx]
        return route_quality(routes, scores, centers, robot_positions,
                             params, agg)

    if len(candidates) >= n_rob:
        routes_idx = ga_route_assign(len(candidates), n_rob, quality, ga_options)
    else:
        routes_idx = _enumerate_assignment(len(candidates), n_rob, quality)
    return [ClusterRoute(rid, [ids[i] for i in routes_idx[rid]])
            for rid in range(n_rob)]


def _enumerate_assignment(n_clusters: int, n_robots: int, quality) \
        -> list[list[int]]:
    """Best assignment when clusters are scarcer than robots (small search)."""
    import itertools
    n_combos = math.factorial(n_clusters) * n_robots ** n_clusters
    if n_combos > 100_000:
        # large leftover space: greedily give each cluster its best robot
        routes: list[list[int]] = [[] for _ in range(n_robots)]
        for idx in range(n_clusters):
            best_q, best_r = -math.inf, 0
            for r in range(n_robots):
                routes[r].append(idx)
                q = quality(routes)
                routes[r].pop()
                if q > best_q:
                    best_q, best_r = q, r
            routes[best_r].append(idx)
        return routes
    best, best_q = None, -math.inf
    for perm in itertools.permutations(range(n_clusters)):
        for owners in itertools.product(range(n_robots), repeat=n_clusters):
            routes = [[] for _ in range(n_robots)]
            for idx, owner in zip(perm, owners):
                routes[owner].append(idx)
            q = quality(routes)
            if q > best_q:
                best, best_q = routes, q
    return best


def child_weight_transform(cell: tuple[int, int], assigned_cluster: FuzzyCluster,
                           robot_position: tuple[int, int],
                           params: ParentParams) -> float:
    """Per-cell weight the parent injects into the child's tuning weights.

    Inside the assigned cluster the membership passes through unchanged.
    While travelling toward it, cells closer to the cluster center than the
    robot get a Gaussian of the robot's distance (zero beyond ``eta`` or
    when the cell would move the robot away from the center).
    """
    if assigned_cluster.state not in (ClusterState.TO_BE_EXPLORED,
                                      ClusterState.BEING_EXPLORED):
        raise ContractViolation("assigned cluster must be to_be_explored or "
                                "being_explored")
    x, y = cell
    if assigned_cluster.state is ClusterState.BEING_EXPLORED:
        return float(assigned_cluster.membership[y, x])
    cx, cy = assigned_cluster.center
    rx, ry = robot_position
    d_robot = math.hypot(cx - rx, cy - ry)
    if d_robot >= params.eta_value:
        return 0.0
    if math.hypot(cx - x, cy - y) > d_robot:
        return 0.0
    return math.exp(-d_robot ** 2 / (2.0 * params.sigma ** 2))


def hlc_field_for(assigned_cluster: FuzzyCluster,
                  robot_position: tuple[int, int], params: ParentParams,
                  shape: tuple[int, int]) -> np.ndarray:
    """Vectorized :func:`child_weight_transform` over the whole grid."""
    if assigned_cluster.state is ClusterState.BEING_EXPLORED:
        return assigned_cluster.membership
    h, w = shape
    cx, cy = assigned_cluster.center
    rx, ry = robot_position
    d_robot = math.hypot(cx - rx, cy - ry)
    if d_robot >= params.eta_value:
        return np.zeros(shape)
    g = math.exp(-d_robot ** 2 / (2.0 * params.sigma ** 2))
    ys, xs = np.mgrid[0:h, 0:w]
    dist = np.hypot(xs - cx, ys - cy)
    return np.where(dist <= d_robot, g, 0.0)


class ParentHooks:
    """Glue between the mission loop and the cluster layer."""

    def __init__(self, params: ParentParams, agg: AggregationParams,
                 ga: GaOptions, log_clusters: bool = True):
        self.params = params
        self.agg = agg
        self.ga = ga
        self.log_clusters = log_clusters
        self.clusters: list[FuzzyCluster] = []
        self.routes: list[ClusterRoute] = []
        self.known_walls: np.ndarray | None = None
        self._replan_needed = True
        self._replan_count = 0

    # -- mission loop callbacks ------------------------------------------------

    def on_mission_start(self, state: MissionState) -> None:
        env = state.env
        self.clusters = init_clusters((env.width, env.height), self.params)
        self.known_walls = np.zeros((env.height, env.width), dtype=bool)
        self.routes = [ClusterRoute(r.id, []) for r in env.robots]
        self._replan_needed = True

    def on_round_start(self, state: MissionState) -> None:
        self._advance_routes()
        candidates = [c for c in self.clusters
                      if c.state is not ClusterState.EXPLORED]
        needs_route = any(not r.cluster_ids for r in self.routes)
        if candidates and (self._replan_needed or needs_route):
            ga = GaOptions(self.ga.population, self.ga.generations,
                           self.ga.mutation_rate,
                           derive_seed(self.ga.seed, self._replan_count))
            positions = [r.position for r in state.env.robots]
            self.routes = high_level_plan(self.clusters, positions,
                                          self.params, self.agg, ga)
            self._replan_count += 1
            self._replan_needed = False
        self._update_states(state)
        if self.log_clusters:
            self._dump(state)

    def hlc_field(self, state: MissionState, robot_id: int):
        route = self.routes[robot_id]
        by_id = {c.id: c for c in self.clusters}
        head = by_id.get(route.cluster_ids[0]) if route.cluster_ids else None
        if head is None or head.state is ClusterState.EXPLORED:
            return None  # nothing assigned: fall back to plain short-term planning
        robot = state.env.robots[robot_id]
        shape = (state.env.height, state.env.width)
        return hlc_field_for(head, robot.position, self.params, shape)

    def after_round(self, state: MissionState) -> None:
        pass_layer = state.fuzzy_maps["passability"]
        walls = pass_layer < 0.1
        new_walls = walls & ~self.known_walls
        if new_walls.any():
            positions = [r.position for r in state.env.robots]
            for c in list(self.clusters):
                if c.membership[new_walls].any():
                    self.clusters = split_merge_clusters(
                        c, pass_layer, self.clusters,
                        robot_positions=positions)
            self.known_walls = walls
            self._prune_routes()
        agg_grid = cell_aggregated_grid(state.fuzzy_maps)
        for c in self.clusters:
            c.score = cluster_score(c, state.fuzzy_maps, self.agg, agg_grid)
        self._update_states(state)
        for route in self.routes:
            if route.cluster_ids:
                head = route.cluster_ids[0]
                st = next((c.state for c in self.clusters if c.id == head),
                          ClusterState.EXPLORED)
                if st is ClusterState.EXPLORED:
                    self._replan_needed = True

    # -- internals ---------------------------------------------------------------

    def _update_states(self, state: MissionState) -> None:
        positions = {r.id: r.position for r in state.env.robots}
        update_cluster_states(self.clusters, self.routes, positions, self.params)

    def _prune_routes(self) -> None:
        alive = {c.id for c in self.clusters}
        for route in self.routes:
            kept = [cid for cid in route.cluster_ids if cid in alive]
            if kept != route.cluster_ids:
                route.cluster_ids = kept
                route.planned_steps = list(range(1, len(kept) + 1))
                self._replan_needed = True

    def _advance_routes(self) -> None:
        explored = {c.id for c in self.clusters
                    if c.state is ClusterState.EXPLORED}
        alive = {c.id for c in self.clusters}
        for route in self.routes:
            kept = [cid for cid in route.cluster_ids
                    if cid in alive and cid not in explored]
            if kept != route.cluster_ids:
                route.cluster_ids = kept
                route.planned_steps = list(range(1, len(kept) + 1))
                self._replan_needed = True

    def _dump(self, state: MissionState) -> None:
        for c in sorted(self.clusters, key=lambda c: c.id):
            cx, cy = c.center
            x0, y0, x1, y1 = c.bounding_box()
            state.log.add_record({
                "t": "cluster", "k": state.k, "id": c.id,
                "center": [round(cx, 3), round(cy, 3)],
                "score": round(c.score, 6), "state": c.state.value,
                "bbox": [x0, y0, x1, y1],
            })


def run_bilevel_mission(environment: Environment, params: MissionParams,
                        budget_steps: int, parent_params: ParentParams,
                        meta: dict | None = None) -> MissionLog:
    """Parent-child mission: cluster routing above, fuzzy planning below."""
    if params.controller != "bilevel":
        raise ContractViolation("params.controller must be 'bilevel'")
    hooks = ParentHooks(parent_params, params.controller_params.aggregation,
                        params.ga)
    return run_mission(environment, params, budget_steps, meta=meta,
                       parent_hooks=hooks)
