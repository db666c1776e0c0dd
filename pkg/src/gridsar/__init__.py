"""Multi-robot grid search-and-rescue: simulation, planning, benchmarking.

The package provides a ground-truth grid world with noisy distance-degraded
sensing, Bayesian and fuzzy knowledge maps, a fuzzy-aggregation
receding-horizon planner (single-level and bi-level parent-child), a
stochastic-cost baseline planner sharing the same encoding and solver, and
a deterministic batch harness with milestone win/advantage statistics.
"""

from .world import (CellStateSpace, Environment, RobotState, SensorModel,
                    Observation, MoveOutcome, ConfigurationError,
                    ContractViolation, generate_environment, step_robot,
                    detectability, sense, save_grid, load_grid)
from .belief import (ProbabilityMap, CertaintyMap, FuzzyMapSet,
                     MembershipFunctionBank, BeliefParams, default_bank,
                     eval_membership, bayes_update, update_certainty_map,
                     update_fuzzy_maps, grid_to_pgm)
from .fuzzy import (AggregationParams, aggregate_goals, aggregate_constraints,
                    aggregate_overall, aggregate_goals_weighted,
                    cell_aggregated_score)
from .solvers import PsoOptions, GaOptions, particle_swarm_maximize, \
    ga_route_assign
from .planner import (ControllerParams, TrajectoryPlan, ObservedCellSet,
                      FlmpcPlanner, decode_motion_plan, observed_set,
                      tuning_weights, grade_trajectory, max_observable_count)
from .baseline import (StochasticCostParams, StochasticPlanner, predict_maps,
                       grade_trajectory_stochastic)
from .coordination import (MissionParams, MissionLog, MissionState,
                           cooperative_weights, mission_step, run_mission,
                           run_single_level_mission)
from .clusters import (ClusterState, FuzzyCluster, ClusterRoute, ParentParams,
                       init_clusters, cluster_score, update_cluster_states,
                       split_merge_clusters, high_level_plan,
                       child_weight_transform, run_bilevel_mission)
from .harness import (Scenario, load_scenario, run_batch, compare_controllers,
                      WinAdvantageReport, export, replay)

__version__ = "0.1.0"
