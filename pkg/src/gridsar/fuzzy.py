"""Fuzzy aggregation calculus used to grade candidate plans.

Three aggregation stages turn per-cell membership degrees into a single
grade for a trajectory: goals are combined with a generalized (power)
mean, constraints with a parameterized Yager T-norm, and the two results
are fused with a standard T-norm.  A weighted variant of the goal stage
lets per-cell tuning weights sharpen or flatten individual contributions
through the exponent.

All operations map [0, 1] inputs to [0, 1] outputs, are monotone in every
input, and are invariant under permutation of steps/cells/goals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "AggregationParams",
    "s_norm",
    "t_norm",
    "aggregate_goals",
    "aggregate_constraints",
    "aggregate_overall",
    "aggregate_goals_weighted",
    "cell_aggregated_score",
]

_S_NORMS = ("max", "probabilistic_sum")
_T_NORMS = ("product", "min")


@dataclass
class AggregationParams:
    """Exponents and operator choices for the aggregation stages.

    ``w_goal`` biases the goal mean toward the largest per-step degree as
    it grows; ``w_con`` sharpens the Yager penalty for partially violated
    constraints; ``w_agg`` trades goals against constraints in the final
    fusion (values <= 1 favour goals).  ``w_cluster`` and ``w_goal_parent``
    play the same roles for the coarse cluster layer.
    """

    w_goal: float = 20.0
    w_con: float = 5.0
    w_agg: float = 1.0
    w_cluster: float = 5.0
    w_goal_parent: float = 1.0
    s_norm: str = "max"
    t_norm: str = "product"

    def __post_init__(self):
        for name in ("w_goal", "w_con", "w_agg", "w_cluster", "w_goal_parent"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if self.w_con < 1.0:
            raise ValueError(f"w_con must be >= 1, got {self.w_con!r}")
        if self.s_norm not in _S_NORMS:
            raise ValueError(f"unknown s_norm {self.s_norm!r}; choose from {_S_NORMS}")
        if self.t_norm not in _T_NORMS:
            raise ValueError(f"unknown t_norm {self.t_norm!r}; choose from {_T_NORMS}")


def s_norm(degrees: Iterable[float], kind: str = "max") -> float:
    """Fuzzy disjunction of a tuple of degrees (empty input -> 0)."""
    if kind == "max":
        return max(degrees, default=0.0)
    if kind == "probabilistic_sum":
        out = 0.0
        for d in degrees:
            out = out + d - out * d
        return out
    raise ValueError(f"unknown s_norm {kind!r}")


def t_norm(a: float, b: float, kind: str = "product") -> float:
    """Fuzzy conjunction of two degrees."""
    if kind == "product":
        return a * b
    if kind == "min":
        return min(a, b)
    raise ValueError(f"unknown t_norm {kind!r}")


def aggregate_goals(per_step_degrees: Sequence[Sequence[float]],
                    params: AggregationParams) -> float:
    """Generalized-mean aggregation of goal degrees along a trajectory.

    Each step contributes the S-norm of its per-goal degrees; the power
    mean with exponent ``w_goal`` then combines the steps.  Large
    exponents pull the result toward the best step, so one high-value
    step (e.g. a likely target) can dominate a stream of small rewards.
    """
    if len(per_step_degrees) == 0:
        raise ValueError("aggregate_goals requires at least one step")
    w = params.w_goal
    terms = [s_norm(step, params.s_norm) ** w for step in per_step_degrees]
    return (math.fsum(terms) / len(terms)) ** (1.0 / w)


def aggregate_constraints(per_step_degrees: Sequence[Sequence[float]],
                          params: AggregationParams) -> float:
    """Yager T-norm aggregation of constraint satisfaction degrees.

    Returns ``max{0, 1 - (sum_steps sum_constraints (1 - mu^w_con))^(1/w_con)}``.
    Unlike a plain minimum, every partially violated constraint at every
    step adds to the penalty, so trajectories with more (or deeper)
    violations grade strictly worse.
    """
    w = params.w_con
    acc = math.fsum(1.0 - mu ** w for step in per_step_degrees for mu in step)
    return max(0.0, 1.0 - acc ** (1.0 / w))


def aggregate_overall(goal_degree: float, constraint_degree: float,
                      params: AggregationParams) -> float:
    """Fuse goal and constraint degrees with the configured T-norm."""
    return t_norm(goal_degree, constraint_degree ** params.w_agg, params.t_norm)


def aggregate_goals_weighted(observed_cells: Sequence[tuple[Sequence[float], float]],
                             max_observable_count: int,
                             params: AggregationParams) -> float:
    """Weighted goal aggregation over the observed cells of a plan.

    ``observed_cells`` pairs each cell's per-goal degree tuple with its
    tuning weight ``w_hat`` in [0, 1].  The S-normed degree of a cell is
    raised to ``w_goal + 1/w_hat`` before summing, so low-weight cells
    (far away or reached late) contribute only when their degree is close
    to 1.  A weight of exactly 0 contributes nothing: it is the
    continuous limit of ``x**(1/w_hat)`` for x < 1 and keeps the
    cooperative weight reduction (which can output exact zeros) well
    defined.  The fixed denominator ``max_observable_count`` stops the
    optimizer from gaming the mean by observing fewer cells.
    """
    if max_observable_count < len(observed_cells):
        raise ValueError("max_observable_count must be >= number of observed cells")
    w = params.w_goal
    terms = []
    for degrees, w_hat in observed_cells:
        if w_hat < 0.0 or w_hat > 1.0:
            raise ValueError(f"tuning weight outside [0, 1]: {w_hat!r}")
        if w_hat == 0.0:
            continue
        terms.append(s_norm(degrees, params.s_norm) ** (w + 1.0 / w_hat))
    return (math.fsum(terms) / max_observable_count) ** (1.0 / w)


def cell_aggregated_score(goal_degrees: Sequence[float],
                          constraint_degrees: Sequence[float] = ()) -> float:
    """Single-cell analogue of the trajectory grade.

    The best goal degree is capped by every constraint degree:
    ``min(max(goals), c_1, ..., c_n)``.  Used by the cluster layer to
    score individual cells without a trajectory context.
    """
    if len(goal_degrees) == 0:
        raise ValueError("cell_aggregated_score requires at least one goal degree")
    return min(max(goal_degrees), *constraint_degrees) if constraint_degrees \
        else max(goal_degrees)
