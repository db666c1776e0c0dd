"""Ground-truth grid world: generation, robot motion rules, noisy sensing.

The world is a rectangular grid of square cells, each in one state from an
ordered state space (by default ``empty``, ``human``, ``obstacle``).  Robots
move one cell per time step in any of the 8 directions; moving into an
obstacle cancels the move, stepping onto a human rescues it (the cell
becomes empty).  Sensors report every cell within a circular radius, with a
confusion model that degrades quadratically with distance.

Coordinates are ``(x, y)`` with ``x`` in ``[0, width)`` and ``y`` in
``[0, height)``; grids are numpy arrays indexed ``[y, x]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "ContractViolation",
    "CellStateSpace",
    "RobotState",
    "SensorModel",
    "Observation",
    "MoveOutcome",
    "Environment",
    "generate_environment",
    "step_robot",
    "detectability",
    "sense",
    "disc_offsets",
    "save_grid",
    "load_grid",
]

EMPTY, HUMAN, OBSTACLE = 0, 1, 2


class ConfigurationError(ValueError):
    """A scenario or parameter set that cannot be realized."""


class ContractViolation(ValueError):
    """A caller broke an operation precondition."""


@dataclass(frozen=True)
class CellStateSpace:
    """Ordered set of cell state labels; indices are stable for a scenario."""

    states: tuple[str, ...] = ("empty", "human", "obstacle")

    def __post_init__(self):
        if len(self.states) < 2:
            raise ConfigurationError("state space needs at least 2 states")
        if len(set(self.states)) != len(self.states):
            raise ConfigurationError("state labels must be unique")

    def index(self, label: str) -> int:
        return self.states.index(label)

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class RobotState:
    id: int
    position: tuple[int, int]


@dataclass(frozen=True)
class SensorModel:
    """Distance-degraded confusion model for cell observations.

    At distance zero the sensor reports the true state with probability
    ``hit_prob`` and each specific wrong state with ``miss_prob``.  At
    distance ``delta`` the row is blended toward the constant
    ``blend_floor``:  ``p = p0 * d + blend_floor * (1 - d)`` with
    detectability ``d = max{1 - (delta/delta_max)^2, 0}``.

    Note: for 3 states the blended row sums to less than 1 (the 0.25
    blend constant implies 4 outcomes).  The likelihood ratios are kept
    verbatim; rows are renormalized only when sampling an observation,
    while Bayesian updates consume the raw rows (posterior normalization
    absorbs the scale).
    """

    hit_prob: float = 0.96
    miss_prob: float = 0.02
    blend_floor: float = 0.25
    delta_max: float = 6.0
    n_states: int = 3

    def __post_init__(self):
        if self.delta_max <= 0:
            raise ConfigurationError("delta_max must be positive")
        total = self.hit_prob + (self.n_states - 1) * self.miss_prob
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(
                f"hit_prob + (n_states-1)*miss_prob must equal 1, got {total}")

    def likelihood_row(self, observed: int, d: float) -> np.ndarray:
        """Unnormalized likelihoods p(observed | true state) at detectability d."""
        p0 = np.full(self.n_states, self.miss_prob)
        p0[observed] = self.hit_prob
        return p0 * d + self.blend_floor * (1.0 - d)


@dataclass(frozen=True)
class Observation:
    cell: tuple[int, int]
    observed_state: int
    detectability: float


class MoveOutcome(enum.Enum):
    MOVED = "moved"
    CANCELED = "canceled"
    RESCUED = "rescued"


@dataclass
class Environment:
    """Ground truth grid plus robot poses.

    ``truth`` is immutable during a mission except for the human -> empty
    transition on rescue.  Two robots may occupy the same cell; only
    obstacles cancel movement.
    """

    width: int
    height: int
    truth: np.ndarray
    robots: list[RobotState]
    rng_seed: int = 0
    state_space: CellStateSpace = field(default_factory=CellStateSpace)

    def __post_init__(self):
        if self.truth.shape != (self.height, self.width):
            raise ConfigurationError("truth grid shape must be (height, width)")
        for r in self.robots:
            x, y = r.position
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ConfigurationError(f"robot {r.id} outside grid")
            if self.truth[y, x] == OBSTACLE:
                raise ConfigurationError(f"robot {r.id} placed on an obstacle")

    @property
    def n_humans_left(self) -> int:
        return int(np.count_nonzero(self.truth == HUMAN))

    def copy(self) -> "Environment":
        return Environment(self.width, self.height, self.truth.copy(),
                           [RobotState(r.id, r.position) for r in self.robots],
                           self.rng_seed, self.state_space)


# --- generation -------------------------------------------------------------

_N8 = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]


def _reachable_mask(passable: np.ndarray, starts: list[tuple[int, int]]) -> np.ndarray:
    """Cells reachable from any start via 8-connected non-obstacle moves."""
    h, w = passable.shape
    seen = np.zeros_like(passable, dtype=bool)
    stack = [(x, y) for x, y in starts if passable[y, x]]
    for x, y in stack:
        seen[y, x] = True
    while stack:
        x, y = stack.pop()
        for dx, dy in _N8:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and passable[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                stack.append((nx, ny))
    return seen


def generate_environment(width: int, height: int, n_humans: int,
                         obstacle_density: float, n_robots: int,
                         seed: int, max_attempts: int = 1000) -> Environment:
    """Randomly generate a world, deterministic for a fixed seed.

    Obstacles are placed by an independent per-cell coin, humans and robots
    on distinct empty cells.  Placements that leave any human unreachable
    from every robot (8-connected over non-obstacle cells) are rejected and
    redrawn from the same stream, so the result depends only on the seed.
    """
    n_cells = width * height
    expected_obstacles = obstacle_density * n_cells
    if n_cells <= n_humans + n_robots + expected_obstacles:
        raise ConfigurationError(
            f"grid of {n_cells} cells cannot hold {n_humans} humans, "
            f"{n_robots} robots and ~{expected_obstacles:.0f} obstacles")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        obstacles = rng.random((height, width)) < obstacle_density
        free = np.flatnonzero(~obstacles.ravel())
        if len(free) < n_humans + n_robots:
            continue
        picks = rng.choice(free, size=n_humans + n_robots, replace=False)
        truth = np.zeros((height, width), dtype=np.int8)
        truth[obstacles] = OBSTACLE
        hy, hx = np.unravel_index(picks[:n_humans], (height, width))
        truth[hy, hx] = HUMAN
        robot_cells = [(int(x), int(y)) for y, x in
                       zip(*np.unravel_index(picks[n_humans:], (height, width)))]
        reach = _reachable_mask(~obstacles, robot_cells)
        if n_humans and not reach[hy, hx].all():
            continue
        robots = [RobotState(i, pos) for i, pos in enumerate(robot_cells)]
        return Environment(width, height, truth, robots, rng_seed=seed)
    raise ConfigurationError(
        f"could not place {n_humans} humans reachable from {n_robots} robots "
        f"at density {obstacle_density} in {max_attempts} attempts")


# --- motion ------------------------------------------------------------------

def step_robot(env: Environment, robot_id: int,
               target_cell: tuple[int, int]) -> MoveOutcome:
    """Apply one movement; see module docstring for the rules."""
    robot = env.robots[robot_id]
    if robot.id != robot_id:  # defensive; ids are list positions by construction
        robot = next(r for r in env.robots if r.id == robot_id)
    x, y = robot.position
    tx, ty = int(target_cell[0]), int(target_cell[1])
    if max(abs(tx - x), abs(ty - y)) > 1:
        raise ContractViolation(
            f"target {target_cell} not adjacent to robot at {(x, y)}")
    if not (0 <= tx < env.width and 0 <= ty < env.height):
        return MoveOutcome.CANCELED
    state = env.truth[ty, tx]
    if state == OBSTACLE:
        return MoveOutcome.CANCELED
    robot.position = (tx, ty)
    if state == HUMAN:
        env.truth[ty, tx] = EMPTY
        return MoveOutcome.RESCUED
    return MoveOutcome.MOVED


# --- sensing ------------------------------------------------------------------

def detectability(delta: float, delta_max: float) -> float:
    """Observation quality at distance delta: max{1 - (delta/delta_max)^2, 0}."""
    if delta < 0 or delta_max <= 0:
        raise ContractViolation("delta must be >= 0 and delta_max > 0")
    return max(1.0 - (delta / delta_max) ** 2, 0.0)


_DISC_CACHE: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def disc_offsets(radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer offsets (dx, dy, dist) with Euclidean dist < radius.

    Fixed row-major order (dy, then dx) so observation streams are
    reproducible.
    """
    got = _DISC_CACHE.get(radius)
    if got is None:
        r = int(np.ceil(radius))
        dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
        dist = np.hypot(dx, dy)
        keep = dist < radius
        got = (dx[keep].astype(np.int64), dy[keep].astype(np.int64), dist[keep])
        _DISC_CACHE[radius] = got
    return got


def sense_arrays(env: Environment, position: tuple[int, int],
                 sensor: SensorModel, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sensing pass; returns (xs, ys, observed_states, detects).

    One observation per cell with positive detectability (circular
    neighborhood of ``delta_max``).  Each observed state is drawn from the
    renormalized blended likelihood row of the cell's true state.
    """
    px, py = position
    dx, dy, dist = disc_offsets(sensor.delta_max)
    xs, ys = dx + px, dy + py
    inb = (xs >= 0) & (xs < env.width) & (ys >= 0) & (ys < env.height)
    xs, ys, dist = xs[inb], ys[inb], dist[inb]
    d = 1.0 - (dist / sensor.delta_max) ** 2
    true_states = env.truth[ys, xs]
    n, s = len(xs), sensor.n_states
    rows = np.full((n, s), sensor.miss_prob)
    rows[np.arange(n), true_states] = sensor.hit_prob
    rows = rows * d[:, None] + sensor.blend_floor * (1.0 - d[:, None])
    cdf = np.cumsum(rows, axis=1)
    u = rng.random(n) * cdf[:, -1]
    observed = (u[:, None] >= cdf).sum(axis=1)
    return xs, ys, observed.astype(np.int8), d


def sense(env: Environment, robot_position: tuple[int, int],
          sensor_model: SensorModel, rng: np.random.Generator) -> list[Observation]:
    xs, ys, obs, d = sense_arrays(env, robot_position, sensor_model, rng)
    return [Observation((int(x), int(y)), int(o), float(di))
            for x, y, o, di in zip(xs, ys, obs, d)]


# --- plain-text grid files ----------------------------------------------------

_CHARS = {EMPTY: ".", HUMAN: "H", OBSTACLE: "#"}


def save_grid(env: Environment, path: str) -> None:
    """Write the world as text: header ``W H``, then H rows of W characters."""
    rows = [[_CHARS[int(v)] for v in env.truth[y]] for y in range(env.height)]
    for r in env.robots:
        x, y = r.position
        rows[y][x] = "R"
    with open(path, "w", encoding="ascii") as f:
        f.write(f"{env.width} {env.height}\n")
        for row in rows:
            f.write("".join(row) + "\n")


def load_grid(path: str, rng_seed: int = 0) -> Environment:
    """Read a world written by :func:`save_grid`; robots get ids in reading order."""
    with open(path, encoding="ascii") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ConfigurationError(f"{path}: bad header, expected 'W H'")
        width, height = int(header[0]), int(header[1])
        truth = np.zeros((height, width), dtype=np.int8)
        robots: list[RobotState] = []
        for y in range(height):
            line = f.readline().rstrip("\n")
            if len(line) != width:
                raise ConfigurationError(f"{path}: row {y} has {len(line)} cells, "
                                         f"expected {width}")
            for x, ch in enumerate(line):
                if ch == "#":
                    truth[y, x] = OBSTACLE
                elif ch == "H":
                    truth[y, x] = HUMAN
                elif ch == "R":
                    robots.append(RobotState(len(robots), (x, y)))
                elif ch != ".":
                    raise ConfigurationError(f"{path}: unknown cell char {ch!r}")
    return Environment(width, height, truth, robots, rng_seed=rng_seed)
