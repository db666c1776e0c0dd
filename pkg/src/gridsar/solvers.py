"""Metaheuristic solvers: particle swarm maximization and a routing GA.

Both solvers are seeded and fully deterministic; neither guarantees
optimality.  Objective evaluations are pure functions of their argument
(plus captured immutable snapshots), so callers may evaluate a whole
population in one vectorized pass via ``objective_batch``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .world import ConfigurationError

__all__ = [
    "PsoOptions",
    "GaOptions",
    "particle_swarm_maximize",
    "ga_route_assign",
]


@dataclass(frozen=True)
class PsoOptions:
    """Swarm settings; the defaults are standard constriction values."""

    swarm_size: int = 60
    iterations: int = 80
    inertia: float = 0.729
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ConfigurationError("swarm_size must be >= 2")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise ConfigurationError("PSO coefficients must be >= 0")


@dataclass(frozen=True)
class GaOptions:
    population: int = 60
    generations: int = 80
    mutation_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ConfigurationError("population must be >= 2")
        if not (0.0 <= self.mutation_rate <= 1.0):
            raise ConfigurationError("mutation_rate must lie in [0, 1]")


class EvalStats:
    """Accumulates candidate-evaluation counts and wall time for a solver run."""

    __slots__ = ("count", "seconds")

    def __init__(self):
        self.count = 0
        self.seconds = 0.0

    def add(self, count: int, seconds: float) -> None:
        self.count += count
        self.seconds += seconds

    @property
    def mean_seconds(self) -> float:
        return self.seconds / self.count if self.count else 0.0


def particle_swarm_maximize(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    options: PsoOptions,
    objective_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    on_iteration: Optional[Callable[[int, float], None]] = None,
    stats: Optional[EvalStats] = None,
) -> tuple[np.ndarray, float]:
    """Global-best PSO over a box; returns ``(best_vector, best_value)``.

    Positions are clamped to the box after every velocity step, so the
    returned vector is always feasible.  ``objective_batch``, when given,
    must evaluate a ``(n, dim)`` matrix row-wise and agree with
    ``objective``; it exists so compiled graders can amortize call
    overhead.  ``on_iteration(it, best_value)`` fires once per iteration
    with the monotonically non-decreasing incumbent.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all() and (hi > lo).all()):
        raise ConfigurationError("bounds must be finite with hi > lo")
    dim = len(bounds)
    rng = np.random.default_rng(options.seed)
    n = options.swarm_size

    x = lo + rng.random((n, dim)) * (hi - lo)
    v = np.zeros((n, dim))

    def evaluate(xs: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        if objective_batch is not None:
            vals = np.asarray(objective_batch(xs), dtype=float)
        else:
            vals = np.array([objective(row) for row in xs], dtype=float)
        if stats is not None:
            stats.add(len(xs), time.perf_counter() - t0)
        return vals

    fx = evaluate(x)
    pbest, pval = x.copy(), fx.copy()
    g = int(pval.argmax())
    gbest, gval = pbest[g].copy(), float(pval[g])
    if on_iteration:
        on_iteration(0, gval)

    for it in range(1, options.iterations + 1):
        r1 = rng.random((n, dim))
        r2 = rng.random((n, dim))
        v = (options.inertia * v
             + options.cognitive * r1 * (pbest - x)
             + options.social * r2 * (gbest - x))
        x = np.clip(x + v, lo, hi)
        fx = evaluate(x)
        improved = fx > pval
        pbest[improved] = x[improved]
        pval[improved] = fx[improved]
        g = int(pval.argmax())
        if pval[g] > gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        if on_iteration:
            on_iteration(it, gval)
    return gbest, gval


# --- routing GA -----------------------------------------------------------------

def _decode_routes(perm: np.ndarray, breaks: np.ndarray) -> list[list[int]]:
    out, prev = [], 0
    for b in list(breaks) + [len(perm)]:
        out.append([int(c) for c in perm[prev:b]])
        prev = b
    return out


def _order_crossover(rng, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Classic OX: copy a slice from p1, fill the rest in p2's order."""
    n = len(p1)
    a, b = sorted(rng.integers(0, n, size=2))
    child = np.full(n, -1, dtype=p1.dtype)
    child[a:b + 1] = p1[a:b + 1]
    used = set(child[a:b + 1].tolist())
    fill = [c for c in p2 if c not in used]
    k = 0
    for i in range(n):
        if child[i] < 0:
            child[i] = fill[k]
            k += 1
    return child


def ga_route_assign(
    n_clusters: int,
    n_robots: int,
    route_score: Callable[[list[list[int]]], float],
    options: GaOptions,
) -> list[list[int]]:
    """Partition clusters 0..n-1 into one ordered route per robot.

    Chromosomes are a cluster permutation plus ``n_robots - 1`` break
    positions, so every individual is structurally an exact partition with
    non-empty routes.  Order crossover recombines the permutation (breaks
    inherited from a random parent); mutation either swaps two clusters
    across routes or reverses a segment within one route.  Elitism keeps
    the incumbent; the best partition ever seen is returned.
    """
    if n_robots < 1 or n_clusters < n_robots:
        raise ConfigurationError(
            f"need n_clusters >= n_robots >= 1, got {n_clusters}, {n_robots}")
    rng = np.random.default_rng(options.seed)

    def random_breaks() -> np.ndarray:
        if n_robots == 1:
            return np.empty(0, dtype=np.int64)
        return np.sort(rng.choice(np.arange(1, n_clusters), size=n_robots - 1,
                                  replace=False))

    def check_partition(routes: list[list[int]]) -> None:
        flat = sorted(c for r in routes for c in r)
        assert flat == list(range(n_clusters)), "GA produced a non-partition"
        assert all(routes), "GA produced an empty route"

    pop = [(rng.permutation(n_clusters), random_breaks())
           for _ in range(options.population)]
    fits = []
    for perm, breaks in pop:
        routes = _decode_routes(perm, breaks)
        check_partition(routes)
        fits.append(route_score(routes))
    fits = np.array(fits)
    best_i = int(fits.argmax())
    best = (pop[best_i][0].copy(), pop[best_i][1].copy(), float(fits[best_i]))

    for _ in range(options.generations):
        new_pop = [(best[0].copy(), best[1].copy())]  # elitism 1
        while len(new_pop) < options.population:
            i1, i2 = rng.integers(0, options.population, size=2)
            j1, j2 = rng.integers(0, options.population, size=2)
            pa = pop[i1] if fits[i1] >= fits[i2] else pop[i2]
            pb = pop[j1] if fits[j1] >= fits[j2] else pop[j2]
            perm = _order_crossover(rng, pa[0], pb[0])
            breaks = (pa[1] if rng.random() < 0.5 else pb[1]).copy()
            if rng.random() < options.mutation_rate:
                if n_robots > 1 and rng.random() < 0.5:
                    # swap two clusters sitting in different routes
                    routes = _decode_routes(perm, breaks)
                    r1, r2 = rng.choice(n_robots, size=2, replace=False)
                    k1 = int(rng.integers(0, len(routes[r1])))
                    k2 = int(rng.integers(0, len(routes[r2])))
                    i = (0 if r1 == 0 else breaks[r1 - 1]) + k1
                    j = (0 if r2 == 0 else breaks[r2 - 1]) + k2
                    perm[i], perm[j] = perm[j], perm[i]
                else:
                    # reverse a segment within one route
                    r = int(rng.integers(0, n_robots))
                    start = 0 if r == 0 else int(breaks[r - 1])
                    stop = n_clusters if r == n_robots - 1 else int(breaks[r])
                    if stop - start >= 2:
                        a, b = sorted(rng.integers(start, stop, size=2))
                        perm[a:b + 1] = perm[a:b + 1][::-1]
            new_pop.append((perm, breaks))
        pop = new_pop
        fits = []
        for perm, breaks in pop:
            routes = _decode_routes(perm, breaks)
            check_partition(routes)
            fits.append(route_score(routes))
        fits = np.array(fits)
        gi = int(fits.argmax())
        if fits[gi] > best[2]:
            best = (pop[gi][0].copy(), pop[gi][1].copy(), float(fits[gi]))

    routes = _decode_routes(best[0], best[1])
    check_partition(routes)
    return routes
