"""Team knowledge state: probability map, certainty map, fuzzy map set.

New observations first update the per-cell categorical beliefs (Bayes rule
with the distance-blended likelihood rows).  The fuzzy layers are then
refreshed outside any optimization loop: static layers are memberships of
the updated beliefs, while the dynamic ``uncertainty`` layer has memory and
reacts to how consistent the new measurements were with the current
most-likely state.

Fuzzy layers and their roles (consumed by the planners):

==========================  ===========  =======
layer                       role         dynamic
==========================  ===========  =======
passability                 constraint   no
human_detection_reward      reward       no
exploration_reward          reward       no
uncertainty                 auxiliary    yes
measurement_consistency     auxiliary    no
==========================  ===========  =======
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .world import HUMAN, OBSTACLE, ConfigurationError, ContractViolation, \
    SensorModel

__all__ = [
    "Piecewise1D",
    "Bilinear2D",
    "MembershipFunctionBank",
    "default_bank",
    "eval_membership",
    "ProbabilityMap",
    "bayes_update",
    "CertaintyMap",
    "update_certainty_map",
    "FuzzyMapSet",
    "BeliefParams",
    "update_fuzzy_maps",
    "grid_to_pgm",
]

LAYER_ROLES = {
    "passability": "constraint",
    "human_detection_reward": "reward",
    "exploration_reward": "reward",
    "uncertainty": "auxiliary_dynamic",
    "measurement_consistency": "auxiliary_static",
}

REWARD_LAYERS = ("human_detection_reward", "exploration_reward")
CONSTRAINT_LAYERS = ("passability",)


# --- membership functions -----------------------------------------------------

@dataclass(frozen=True)
class Piecewise1D:
    """Piecewise-linear membership function with explicit breakpoints."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or len(self.xs) < 2:
            raise ConfigurationError("need >= 2 matching breakpoints")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ConfigurationError("breakpoints must be strictly increasing")
        if any(not (0.0 <= y <= 1.0) for y in self.ys):
            raise ConfigurationError("membership values must lie in [0, 1]")

    def __call__(self, x):
        # np.interp clamps outside the declared domain
        return np.interp(x, self.xs, self.ys)


@dataclass(frozen=True)
class Bilinear2D:
    """Bilinearly interpolated membership surface on a rectangular grid.

    ``z[i, j]`` is the value at ``(xs[i], ys[j])``; inputs are clamped to
    the declared domain.
    """

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    z: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        zz = np.asarray(self.z, dtype=float)
        if zz.shape != (len(self.xs), len(self.ys)):
            raise ConfigurationError("z must have shape (len(xs), len(ys))")
        for axis in (self.xs, self.ys):
            if len(axis) < 2 or any(b <= a for a, b in zip(axis, axis[1:])):
                raise ConfigurationError("breakpoints must be strictly increasing")
        if zz.min() < 0.0 or zz.max() > 1.0:
            raise ConfigurationError("membership values must lie in [0, 1]")

    def __call__(self, x, y):
        xs = np.asarray(self.xs)
        ys = np.asarray(self.ys)
        zz = np.asarray(self.z, dtype=float)
        x = np.clip(x, xs[0], xs[-1])
        y = np.clip(y, ys[0], ys[-1])
        i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        j = np.clip(np.searchsorted(ys, y, side="right") - 1, 0, len(ys) - 2)
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = (y - ys[j]) / (ys[j + 1] - ys[j])
        return (zz[i, j] * (1 - tx) * (1 - ty) + zz[i + 1, j] * tx * (1 - ty)
                + zz[i, j + 1] * (1 - tx) * ty + zz[i + 1, j + 1] * tx * ty)


@dataclass(frozen=True)
class MembershipFunctionBank:
    functions: dict

    def __call__(self, name: str):
        if name not in self.functions:
            raise KeyError(f"unknown membership function {name!r}")
        return self.functions[name]


def default_bank() -> MembershipFunctionBank:
    """Breakpoint tables for the search-and-rescue fuzzy variables.

    * ``passability`` -- input P(obstacle); fully passable up to 0.1,
      impassable from 0.4 on.
    * ``human_detection_reward`` -- input P(human); zero below 0.5, rising
      to a cap of 0.95 at 0.98.  The cap is deliberately below 1 so the
      per-cell tuning weights keep influencing decisions (a degree of
      exactly 1 would be a fixed point of any power).
    * ``exploration_reward`` -- identity on the uncertainty degree.
    * ``measurement_consistency`` -- surface of (detectability, likelihood
      of the observed state under the current most-likely state); 0.5 at
      zero detectability, sweeping to [0, 1] at full detectability.
    * ``uncertainty_observed_multiplier`` -- surface of (detectability,
      consistency) applied multiplicatively to the uncertainty of an
      observed cell; consistency <= 0.5 has no effect, fully consistent
      close observations scale uncertainty by (1 - detectability).
    """
    return MembershipFunctionBank({
        "passability": Piecewise1D((0.0, 0.1, 0.4, 1.0), (1.0, 1.0, 0.0, 0.0)),
        "human_detection_reward":
            Piecewise1D((0.0, 0.5, 0.98, 1.0), (0.0, 0.0, 0.95, 0.95)),
        "exploration_reward": Piecewise1D((0.0, 1.0), (0.0, 1.0)),
        "measurement_consistency":
            Bilinear2D((0.0, 1.0), (0.0, 1.0), ((0.5, 0.5), (0.0, 1.0))),
        "uncertainty_observed_multiplier":
            Bilinear2D((0.0, 1.0), (0.0, 0.5, 1.0),
                       ((1.0, 1.0, 1.0), (1.0, 1.0, 0.0))),
    })


def eval_membership(bank: MembershipFunctionBank, function_name: str, inputs):
    """Evaluate a named membership function; inputs outside the domain clamp."""
    fn = bank(function_name)
    if isinstance(fn, Bilinear2D):
        x, y = inputs
        return fn(x, y)
    return fn(inputs)


# --- probability map -----------------------------------------------------------

@dataclass
class ProbabilityMap:
    """Grid of categorical belief vectors over the cell state space.

    Every belief vector sums to 1; entries that are exactly 0 stay 0 under
    Bayes updates (absorbing certainty).  ``zero_posterior_count`` counts
    updates discarded because the posterior mass vanished numerically.
    """

    values: np.ndarray
    zero_posterior_count: int = 0

    @classmethod
    def initial(cls, width: int, height: int,
                belief: tuple[float, ...] = (0.34, 0.33, 0.33)) -> "ProbabilityMap":
        b = np.asarray(belief, dtype=float)
        if abs(b.sum() - 1.0) > 1e-9 or (b < 0).any():
            raise ConfigurationError("initial belief must be a distribution")
        return cls(np.tile(b, (height, width, 1)))

    @property
    def shape(self):
        return self.values.shape

    def copy(self) -> "ProbabilityMap":
        return ProbabilityMap(self.values.copy(), self.zero_posterior_count)


def _obs_arrays(observations) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(observations, tuple) and len(observations) == 4:
        xs, ys, states, ds = observations
        return (np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64),
                np.asarray(states, dtype=np.int64), np.asarray(ds, dtype=float))
    xs = np.array([o.cell[0] for o in observations], dtype=np.int64)
    ys = np.array([o.cell[1] for o in observations], dtype=np.int64)
    states = np.array([o.observed_state for o in observations], dtype=np.int64)
    ds = np.array([o.detectability for o in observations], dtype=float)
    return xs, ys, states, ds


def bayes_update(prob_map: ProbabilityMap, observations,
                 sensor_model: SensorModel,
                 assume_unique: bool = False) -> ProbabilityMap:
    """Bayes rule per observed cell with the blended likelihood rows.

    ``observations`` is a list of :class:`~gridsar.world.Observation` or a
    ``(xs, ys, states, detects)`` array tuple.  Multiple observations of
    the same cell combine by likelihood product (order independent).
    Unobserved cells are unchanged.  ``assume_unique`` skips the duplicate
    grouping; only pass it when every observed cell occurs once (e.g. a
    single sensing disc), as the baseline's prediction rolls do.
    """
    xs, ys, states, ds = _obs_arrays(observations)
    new = prob_map.copy()
    if len(xs) == 0:
        return new
    if (ds <= 0).any():
        raise ContractViolation("observations must carry detectability > 0")
    h, w, s = prob_map.values.shape
    n = len(xs)
    rows = np.full((n, s), sensor_model.miss_prob)
    rows[np.arange(n), states] = sensor_model.hit_prob
    rows = rows * ds[:, None] + sensor_model.blend_floor * (1.0 - ds[:, None])
    flat = ys * w + xs
    if assume_unique:
        uniq, likelihood = flat, rows
    else:
        uniq, inv = np.unique(flat, return_inverse=True)
        likelihood = np.ones((len(uniq), s))
        np.multiply.at(likelihood, inv, rows)
    beliefs = new.values.reshape(-1, s)
    post = beliefs[uniq] * likelihood
    den = post.sum(axis=1)
    ok = den > 0
    beliefs[uniq[ok]] = post[ok] / den[ok, None]
    new.zero_posterior_count += int((~ok).sum())
    return new


# --- certainty map (stochastic-cost baseline state) ----------------------------

@dataclass
class CertaintyMap:
    """Per-cell certainty degree in [0, 1]; the baseline controller's memory.

    Observed cells gain certainty proportional to detectability,
    ``z' = 1 - (1 - z) (1 - d)``; unobserved cells decay, ``z' = decay * z``.
    The published baseline describes this only qualitatively; the law above
    is the declared reconstruction used here and by the baseline only.
    """

    values: np.ndarray

    @classmethod
    def initial(cls, width: int, height: int) -> "CertaintyMap":
        return cls(np.zeros((height, width)))

    def copy(self) -> "CertaintyMap":
        return CertaintyMap(self.values.copy())


def update_certainty_map(cert_map: CertaintyMap, observations,
                         decay: float, assume_unique: bool = False
                         ) -> CertaintyMap:
    if not (0.0 < decay <= 1.0):
        raise ContractViolation(f"decay must lie in (0, 1], got {decay!r}")
    xs, ys, _, ds = _obs_arrays(observations)
    h, w = cert_map.values.shape
    z = cert_map.values
    out = decay * z
    if len(xs):
        flat = ys * w + xs
        if assume_unique:
            uniq, miss_factor = flat, 1.0 - ds
        else:
            uniq, inv = np.unique(flat, return_inverse=True)
            miss_factor = np.ones(len(uniq))
            np.multiply.at(miss_factor, inv, 1.0 - ds)
        zf = out.ravel()
        zf[uniq] = 1.0 - (1.0 - z.ravel()[uniq]) * miss_factor
    return CertaintyMap(out)


# --- fuzzy map set --------------------------------------------------------------

@dataclass
class BeliefParams:
    """Knobs for the fuzzy map update pipeline.

    ``uncertainty_rise / rise_divisor`` is the per-update increase of the
    uncertainty of unobserved cells below the ceiling; large environments
    use a divisor of 100 so certainty is not washed out early.  The sensor
    model supplies the likelihood rows that feed measurement consistency.
    """

    uncertainty_ceiling: float = 0.648
    uncertainty_rise: float = 0.002
    rise_divisor: float = 1.0
    sensor: SensorModel = field(default_factory=SensorModel)
    bank: MembershipFunctionBank = field(default_factory=default_bank)


@dataclass
class FuzzyMapSet:
    """Named grids of fuzzy degrees plus the membership bank that feeds them."""

    layers: dict
    bank: MembershipFunctionBank

    def __post_init__(self):
        if set(self.layers) != set(LAYER_ROLES):
            raise ConfigurationError(
                f"expected layers {sorted(LAYER_ROLES)}, got {sorted(self.layers)}")

    @classmethod
    def initial(cls, width: int, height: int,
                initial_belief=(0.34, 0.33, 0.33),
                bank: MembershipFunctionBank | None = None) -> "FuzzyMapSet":
        """Mission-start layers: uncertainty 1 everywhere, rest from the prior."""
        bank = bank or default_bank()
        uncertainty = np.ones((height, width))
        p_obst = np.full((height, width), float(initial_belief[OBSTACLE]))
        p_hum = np.full((height, width), float(initial_belief[HUMAN]))
        return cls({
            "passability": np.asarray(bank("passability")(p_obst), dtype=float),
            "human_detection_reward":
                np.asarray(bank("human_detection_reward")(p_hum), dtype=float),
            "exploration_reward":
                np.asarray(bank("exploration_reward")(uncertainty), dtype=float),
            "uncertainty": uncertainty,
            "measurement_consistency": np.full((height, width), 0.5),
        }, bank)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def copy(self) -> "FuzzyMapSet":
        return FuzzyMapSet({k: v.copy() for k, v in self.layers.items()}, self.bank)

    # -- serialization ----------------------------------------------------

    def save(self, directory, prefix: str = "fuzzy") -> None:
        """Flat binary grid per layer plus a JSON sidecar with dimensions."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        h, w = self.layers["uncertainty"].shape
        names = sorted(self.layers)
        for name in names:
            self.layers[name].astype("<f8").tofile(directory / f"{prefix}_{name}.bin")
        sidecar = {"width": w, "height": h, "dtype": "<f8", "layers": names}
        (directory / f"{prefix}.json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, directory, prefix: str = "fuzzy",
             bank: MembershipFunctionBank | None = None) -> "FuzzyMapSet":
        directory = Path(directory)
        sidecar = json.loads((directory / f"{prefix}.json").read_text())
        h, w = sidecar["height"], sidecar["width"]
        layers = {}
        for name in sidecar["layers"]:
            data = np.fromfile(directory / f"{prefix}_{name}.bin", dtype="<f8")
            layers[name] = data.reshape(h, w)
        return cls(layers, bank or default_bank())


def grid_to_pgm(grid: np.ndarray) -> bytes:
    """8-bit binary PGM (P5) of a [0, 1] degree grid; brightness = degree*255."""
    h, w = grid.shape
    data = np.clip(np.rint(grid * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + data.tobytes()


def update_fuzzy_maps(fuzzy_maps: FuzzyMapSet, prob_map_new: ProbabilityMap,
                      observations, params: BeliefParams) -> FuzzyMapSet:
    """Refresh all fuzzy layers after a Bayes update.

    The dynamic uncertainty layer is lowered on observed cells through the
    (detectability, consistency) multiplier surface -- contradictory
    measurements (consistency <= 0.5) have no effect -- and rises slowly
    toward the ceiling on unobserved cells (values at or above the ceiling
    are fixed points).  Static layers are recomputed from the updated
    probability map and the new uncertainty.
    """
    bank = fuzzy_maps.bank
    xs, ys, states, ds = _obs_arrays(observations)
    h, w = fuzzy_maps["uncertainty"].shape
    beliefs = prob_map_new.values

    mc_layer = fuzzy_maps["measurement_consistency"].copy()
    uncertainty = fuzzy_maps["uncertainty"].copy()

    observed_mask = np.zeros((h, w), dtype=bool)
    if len(xs):
        sensor = params.sensor
        map_state = beliefs[ys, xs].argmax(axis=1)
        p0 = np.where(states == map_state, sensor.hit_prob, sensor.miss_prob)
        likelihood = p0 * ds + sensor.blend_floor * (1.0 - ds)
        mc = np.asarray(eval_membership(bank, "measurement_consistency",
                                        (ds, likelihood)), dtype=float)
        mult = np.asarray(eval_membership(bank, "uncertainty_observed_multiplier",
                                          (ds, mc)), dtype=float)
        flat = ys * w + xs
        uniq, inv = np.unique(flat, return_inverse=True)
        # repeated sightings of a cell in one batch compound multiplicatively
        mult_prod = np.ones(len(uniq))
        np.multiply.at(mult_prod, inv, mult)
        uncertainty.ravel()[uniq] *= mult_prod
        # consistency layer keeps the last value written, in batch order
        rev_first = np.unique(flat[::-1], return_index=True)[1]
        mc_layer.ravel()[uniq] = mc[len(flat) - 1 - rev_first]
        observed_mask.ravel()[uniq] = True

    unobserved = ~observed_mask
    ceiling = params.uncertainty_ceiling
    rate = params.uncertainty_rise / params.rise_divisor
    below = unobserved & (uncertainty < ceiling)
    uncertainty[below] = np.minimum(ceiling, uncertainty[below] + rate)

    layers = {
        "uncertainty": uncertainty,
        "measurement_consistency": mc_layer,
        "passability": np.asarray(
            bank("passability")(beliefs[:, :, OBSTACLE]), dtype=float),
        "human_detection_reward": np.asarray(
            bank("human_detection_reward")(beliefs[:, :, HUMAN]), dtype=float),
        "exploration_reward": np.asarray(
            bank("exploration_reward")(uncertainty), dtype=float),
    }
    return FuzzyMapSet(layers, bank)
