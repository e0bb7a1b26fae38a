"""Stochastic contextual linear bandit environment.

Randomness is organised as named streams keyed by ``(seed, agent, kind)``.
Every stream yields exactly one draw per round, so the value used at round
``t`` is fixed by its position in the stream. Drawing a whole batch at once
or one round at a time gives the same numbers, and agents can be simulated
in any order or in parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError

NORM_TOL = 1e-12

# stream kinds; fixed integers so the spawn keys never change
STREAM_INSTANCE = 0
STREAM_CONTEXT = 1
STREAM_ACTION = 2
STREAM_NOISE = 3
STREAM_POLICY = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the sub-stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class GroundTruth:
    theta_star: np.ndarray
    noise_sigma: float = 0.1
    clip_rewards: bool = False

    def __post_init__(self):
        th = np.array(self.theta_star, dtype=float)
        if th.ndim != 1:
            raise DimensionError("theta_star must be a vector")
        if np.linalg.norm(th) > 1.0 + NORM_TOL:
            raise ConfigError(f"||theta_star|| = {np.linalg.norm(th):.6g} > 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        th.setflags(write=False)
        object.__setattr__(self, "theta_star", th)

    @property
    def d(self) -> int:
        return self.theta_star.size

    def to_dict(self) -> dict:
        return {
            "theta_star": self.theta_star.tolist(),
            "noise_sigma": self.noise_sigma,
            "clip_rewards": self.clip_rewards,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(np.asarray(data["theta_star"]), float(data.get("noise_sigma", 0.1)), bool(data.get("clip_rewards", False)))


@dataclass(frozen=True)
class DecisionSupport:
    """Finite-support distribution over K-armed context sets.

    ``sets`` has shape (L, K, d); ``weights`` has shape (L,).
    """

    sets: np.ndarray
    weights: np.ndarray = None
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sets = np.array(self.sets, dtype=float)
        if sets.ndim != 3 or 0 in sets.shape:
            raise DimensionError("sets must have shape (L, K, d) with every axis nonempty")
        if np.any(np.linalg.norm(sets, axis=2) > 1.0 + NORM_TOL):
            raise ConfigError("every arm vector must have norm at most 1")
        if self.weights is None:
            w = np.full(sets.shape[0], 1.0 / sets.shape[0])
        else:
            w = np.array(self.weights, dtype=float)
        if w.shape != (sets.shape[0],) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ConfigError("weights must be a probability vector with one entry per set")
        sets.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "weights", w)
        cdf = np.cumsum(w)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", cdf)

    @property
    def size(self) -> int:
        return self.sets.shape[0]

    @property
    def k(self) -> int:
        return self.sets.shape[1]

    @property
    def d(self) -> int:
        return self.sets.shape[2]

    def index_from_uniform(self, u) -> np.ndarray:
        idx = np.searchsorted(self._cdf, np.asarray(u), side="right")
        return np.minimum(idx, self.size - 1)

    def to_dict(self) -> dict:
        return {"d": self.d, "K": self.k, "sets": self.sets.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DecisionSupport":
        sets = np.asarray(data["sets"], dtype=float)
        if sets.shape[1:] != (int(data["K"]), int(data["d"])):
            raise ConfigError(f"sets shape {sets.shape} does not match K={data['K']}, d={data['d']}")
        return cls(sets, np.asarray(data["weights"], dtype=float))


def save_instance(path: str | Path, support: DecisionSupport, gt: GroundTruth | None = None) -> None:
    data = support.to_dict()
    if gt is not None:
        data["ground_truth"] = gt.to_dict()
    Path(path).write_text(json.dumps(data))


def load_instance(path: str | Path) -> tuple[DecisionSupport, GroundTruth | None]:
    data = json.loads(Path(path).read_text())
    gt = GroundTruth.from_dict(data["ground_truth"]) if "ground_truth" in data else None
    return DecisionSupport.from_dict(data), gt


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_support(d: int, k: int, size: int, rng: np.random.Generator) -> DecisionSupport:
    """Uniform support over ``size`` sets of ``k`` Gaussian directions on the unit sphere."""
    return DecisionSupport(_unit_rows(rng.standard_normal((size, k, d))))


def random_ground_truth(d: int, rng: np.random.Generator, noise_sigma: float = 0.1, clip_rewards: bool = False) -> GroundTruth:
    return GroundTruth(_unit_rows(rng.standard_normal(d)), noise_sigma, clip_rewards)


def make_instance(seed: int, d: int, k: int, support_size: int = 100, noise_sigma: float = 0.1, clip_rewards: bool = False):
    """Support and ground truth for a seed, drawn from the instance stream."""
    rng = stream(seed, STREAM_INSTANCE)
    gt = random_ground_truth(d, rng, noise_sigma, clip_rewards)
    support = random_support(d, k, support_size, rng)
    return support, gt


def sample_decision_set(support: DecisionSupport, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    idx = int(support.index_from_uniform(rng.random()))
    return idx, support.sets[idx]


def reward(x, gt: GroundTruth, rng: np.random.Generator):
    """<theta*, x> + N(0, sigma^2) noise; works row-wise on a stack of arms."""
    x = np.asarray(x, dtype=float)
    mean = x @ gt.theta_star
    y = mean + gt.noise_sigma * rng.standard_normal(np.shape(mean))
    if gt.clip_rewards:
        y = np.clip(y, -1.0, 1.0)
    return float(y) if np.ndim(y) == 0 else y


def noisy_rewards(means: np.ndarray, normals: np.ndarray, gt: GroundTruth) -> np.ndarray:
    y = means + gt.noise_sigma * normals
    return np.clip(y, -1.0, 1.0) if gt.clip_rewards else y


def instantaneous_regret(arms, chosen, gt: GroundTruth) -> float:
    vals = np.asarray(arms, dtype=float) @ gt.theta_star
    return float(max(vals.max() - np.asarray(chosen, dtype=float) @ gt.theta_star, 0.0))


@dataclass
class RegretLedger:
    """Realized regret, per agent and per round.

    ``inst`` has shape (T, N); row t holds round t+1.
    """

    inst: np.ndarray

    @classmethod
    def empty(cls, horizon: int, n_agents: int) -> "RegretLedger":
        return cls(np.zeros((horizon, n_agents)))

    def record(self, rounds: np.ndarray, agent: int, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if np.any(values < -1e-12):
            raise ValueError("instantaneous regret must be non-negative")
        self.inst[rounds, agent] = np.maximum(values, 0.0)

    @property
    def horizon(self) -> int:
        return self.inst.shape[0]

    @property
    def n_agents(self) -> int:
        return self.inst.shape[1]

    def cumulative_per_agent(self) -> np.ndarray:
        return np.cumsum(self.inst, axis=0)

    def cumulative_total(self) -> np.ndarray:
        return np.cumsum(self.inst.sum(axis=1))

    def total(self) -> float:
        return float(self.inst.sum())

    def per_agent_final(self) -> np.ndarray:
        return self.inst.sum(axis=0)

    def merge(self, other: "RegretLedger") -> "RegretLedger":
        """Combine ledgers for disjoint agent sets (columns that are zero in one)."""
        return RegretLedger(self.inst + other.inst)


def lower_bound_delta(d: int, horizon: int) -> float:
    return math.sqrt(d / horizon) / 8.0


def make_lower_bound_instance(d: int, horizon: int, rng: np.random.Generator, noise_sigma: float = 1.0):
    """Hard instance: two-arm sets (e_{2j-1}, e_{2j}), theta* blocks (+-Delta, 0)."""
    if d < 2 or d % 2:
        raise ConfigError(f"dimension must be even and positive, got {d}")
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    delta = lower_bound_delta(d, horizon)
    eye = np.eye(d)
    sets = np.stack([eye[2 * j: 2 * j + 2] for j in range(d // 2)])
    theta = np.zeros(d)
    signs = rng.choice([-1.0, 1.0], size=d // 2)
    theta[0::2] = signs * delta
    if np.linalg.norm(theta) > 1.0:
        raise ConfigError(f"horizon {horizon} too short for d={d}: ||theta*|| = {np.linalg.norm(theta):.4g} > 1")
    return DecisionSupport(sets), GroundTruth(theta, noise_sigma)
