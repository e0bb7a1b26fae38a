"""Server-based distributed batch elimination (DisBE-LUCB).

Rounds are split into M batches on a doubly exponential grid. During a
batch each agent plays its frozen policy on the arms that survive every
elimination test so far. At the batch end each agent uploads the d-vector
``u = sum x_t y_t`` over the first half of its batch, the server returns
the sum over agents, and each agent rebuilds its statistics

    Lambda_m = lambda I + (N T_m / 2) E_{X ~ D_m} E_{x ~ pi_{m-1}(X)}[x x^T]
    theta_m  = Lambda_m^{-1} sum_j u_m^j

with the expectation computed exactly over the known finite support. The
next policy comes from :func:`policies.build_exploration_policy` on the
second-half context sets.

:func:`simulate` is the batch engine shared with the decentralized variant
in :mod:`distbandit.decbe`; the two differ only in the grid, the radius and
how per-agent sums are formed.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .core_math import IllConditionedError, quadratic_forms, spd_inverse, spd_solve
from .environment import (
    STREAM_ACTION,
    STREAM_CONTEXT,
    STREAM_NOISE,
    STREAM_POLICY,
    DecisionSupport,
    GroundTruth,
    RegretLedger,
    noisy_rewards,
    stream,
)
from .errors import ConfigError, DesignConvergenceError, DimensionError
from .policies import (
    GOptimalPolicy,
    _SetIndex,
    core_identification,
    g_optimal_design,
    mixed_softmax_build,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constants of the confidence intervals
# ---------------------------------------------------------------------------


def regularizer(d: int, horizon: int, delta: float) -> float:
    return 5.0 * math.log(4.0 * d * horizon / delta)


def confidence_radius(k_arms: int, n_agents: int, horizon: int, delta: float, lam: float) -> float:
    return 6.0 * math.sqrt(math.log(2.0 * k_arms * n_agents * horizon / delta)) + math.sqrt(lam)


def default_quantization_step(beta: float, n_agents: int, d: int, horizon: int) -> float:
    return beta / (n_agents * math.sqrt(d * horizon))


# ---------------------------------------------------------------------------
# Batch grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchGrid:
    m_batches: int
    a: float
    lengths: tuple[int, ...]
    boundaries: tuple[int, ...]
    horizon: int
    mixing_rounds: int = 0

    def batch_range(self, m: int) -> tuple[int, int]:
        """0-based half-open round range of batch m (1-based), truncated at the horizon."""
        start = min(self.boundaries[m - 1], self.horizon)
        end = min(self.boundaries[m], self.horizon)
        return start, end


def default_batch_count(n_agents: int, horizon: int, d: int, s_rounds: int = 0) -> int:
    ratio = n_agents * (horizon + s_rounds) / d
    if ratio <= 1:
        raise ConfigError(f"N(T+S)/d = {ratio:.4g} must exceed 1")
    return max(2, math.ceil(1.0 + math.log2(math.log2(ratio) / 2.0 + 1.0)))


def grid_constant(n_agents: int, horizon: int, d: int, m_batches: int, s_rounds: int = 0) -> float:
    span = horizon + s_rounds
    return math.sqrt(span) * (n_agents * span / d) ** (1.0 / (2.0 * (2 ** (m_batches - 1) - 1)))


def _grid(n_agents: int, horizon: int, d: int, m_batches: int, s_rounds: int) -> BatchGrid:
    if n_agents * (horizon + s_rounds) <= d:
        raise ConfigError("grid undefined: need N (T + S) > d")
    if m_batches == 0:
        m_batches = default_batch_count(n_agents, horizon, d, s_rounds)
    if m_batches < 2:
        raise ConfigError("need at least two batches")
    a = grid_constant(n_agents, horizon, d, m_batches, s_rounds)
    first = math.floor(a * math.sqrt(d / n_agents) + s_rounds)
    lengths = [first, first]
    while len(lengths) < m_batches:
        lengths.append(math.floor(a * math.sqrt(lengths[-1] - s_rounds) + s_rounds))
    for m, t in enumerate(lengths, 1):
        if t <= s_rounds or t < 1:
            raise ConfigError(f"batch {m} has length {t}, not more than the {s_rounds} mixing rounds")
    total = sum(lengths)
    if total < horizon:
        # floor rounding can leave the grid a few rounds short
        lengths[-1] += horizon - total
    bounds = [0]
    for t in lengths:
        bounds.append(bounds[-1] + t)
    return BatchGrid(m_batches, a, tuple(lengths), tuple(bounds), horizon, s_rounds)


def batch_grid(n_agents: int, t_horizon: int, d: int, m_batches: int = 0) -> BatchGrid:
    """T_1 = T_2 = a sqrt(d/N), T_m = floor(a sqrt(T_{m-1})), with T_M = T."""
    return _grid(n_agents, t_horizon, d, m_batches, 0)


# ---------------------------------------------------------------------------
# Per-agent statistics and elimination
# ---------------------------------------------------------------------------


@dataclass
class AgentStats:
    lam: float
    beta: float
    grams: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    policy: object = field(default_factory=GOptimalPolicy)
    _inverses: list = field(default_factory=list, repr=False)

    @classmethod
    def initial(cls, d: int, lam: float, beta: float, radius: float | None = None) -> "AgentStats":
        st = cls(lam, beta)
        st.append(lam * np.eye(d), np.zeros(d), beta if radius is None else radius)
        return st

    def append(self, gram: np.ndarray, theta: np.ndarray, radius: float | None = None) -> None:
        self.grams.append(np.asarray(gram, dtype=float))
        self.thetas.append(np.asarray(theta, dtype=float))
        self.radii.append(self.beta if radius is None else float(radius))
        self._inverses.append(spd_inverse(gram))

    @property
    def batch(self) -> int:
        return len(self.grams) - 1

    def inverse(self, k: int) -> np.ndarray:
        return self._inverses[k]


def elimination_mask(arms: np.ndarray, gram_inv: np.ndarray, theta: np.ndarray, radius: float) -> np.ndarray:
    """True where <theta, x> + r ||x|| >= max_y (<theta, y> - r ||y||), per set.

    ``arms`` has shape (..., K, d); the test runs along the K axis.
    """
    means = arms @ theta
    widths = radius * np.sqrt(quadratic_forms(arms, gram_inv))
    lcb_best = (means - widths).max(axis=-1, keepdims=True)
    return means + widths >= lcb_best


def eliminate(arms, stats: AgentStats, radius: float | None = None, upto: int | None = None) -> np.ndarray:
    """Arms passing every elimination test k = 0..upto-1 (default: all recorded)."""
    arms = np.asarray(arms, dtype=float)
    if arms.ndim != 2 or arms.shape[0] == 0:
        raise DimensionError("elimination needs a nonempty (k, d) set")
    upto = len(stats.grams) if upto is None else upto
    keep = np.ones(arms.shape[0], dtype=bool)
    for k in range(upto):
        r = stats.radii[k] if radius is None else radius
        keep &= elimination_mask(arms, stats.inverse(k), stats.thetas[k], r)
    return arms[keep]


def compute_gram(lam: float, n_agents: int, t_m: float, esm) -> np.ndarray:
    """lambda I + (N T_m / 2) esm."""
    esm = getattr(esm, "entries", esm)
    esm = np.asarray(esm, dtype=float)
    return lam * np.eye(esm.shape[0]) + 0.5 * n_agents * t_m * esm


def update_theta(gram, u_sum) -> np.ndarray:
    return spd_solve(getattr(gram, "entries", gram), u_sum)


# ---------------------------------------------------------------------------
# Communication
# ---------------------------------------------------------------------------


@dataclass
class CommLedger:
    """Scalars and bits put on the wire.

    ``scalars_sent`` counts agent transmissions (uploads, or gossip sends);
    ``broadcast_scalars`` counts the server's replies.
    """

    n_agents: int
    scalars_sent: int = 0
    broadcast_scalars: int = 0
    bits_sent: int = 0
    rounds_with_communication: int = 0
    per_agent_scalars: np.ndarray = None
    per_agent_bits: np.ndarray = None

    def __post_init__(self):
        if self.per_agent_scalars is None:
            self.per_agent_scalars = np.zeros(self.n_agents, dtype=np.int64)
        if self.per_agent_bits is None:
            self.per_agent_bits = np.zeros(self.n_agents, dtype=np.int64)

    def record_send(self, agent: int, scalars: int, bits: int = 0) -> None:
        self.scalars_sent += int(scalars)
        self.bits_sent += int(bits)
        self.per_agent_scalars[agent] += int(scalars)
        self.per_agent_bits[agent] += int(bits)

    def record_broadcast(self, scalars: int) -> None:
        self.broadcast_scalars += int(scalars)

    def total(self, convention: str = "upload") -> int:
        if convention == "upload":
            return self.scalars_sent
        if convention == "upload_broadcast":
            return self.scalars_sent + self.broadcast_scalars
        raise ValueError(f"unknown convention {convention!r}")

    def to_dict(self) -> dict:
        return {
            "scalars_sent": self.scalars_sent,
            "broadcast_scalars": self.broadcast_scalars,
            "bits_sent": self.bits_sent,
            "rounds_with_communication": self.rounds_with_communication,
            "per_agent_scalars": self.per_agent_scalars.tolist(),
            "per_agent_bits": self.per_agent_bits.tolist(),
        }


@dataclass(frozen=True)
class BatchMessage:
    agent: int
    batch: int
    u: np.ndarray
    quantized: np.ndarray | None = None
    bits: int = 0

    @property
    def payload(self) -> np.ndarray:
        return self.u if self.quantized is None else self.quantized


def quantization_bits(d: int, eps0: float, value_range: float) -> int:
    return d * math.ceil(math.log2(2.0 * value_range / eps0 + 1.0))


def quantize_message(u, eps0: float, value_range: float | None = None) -> tuple[np.ndarray, int]:
    """Round each entry to the nearest multiple of eps0, ties away from zero.

    ``value_range`` bounds |u_j| (half the batch length for a first-half sum)
    and sets the bit count d * ceil(log2(2 range / eps0 + 1)); without it the
    observed max |u_j| is used.
    """
    if eps0 <= 0:
        raise ValueError("eps0 must be positive")
    u = np.asarray(u, dtype=float)
    q = np.sign(u) * np.floor(np.abs(u) / eps0 + 0.5) * eps0
    if value_range is None:
        value_range = float(np.max(np.abs(u))) if u.size else 0.0
    return q, quantization_bits(u.size, eps0, value_range)


def server_aggregate(messages: list[BatchMessage], n_agents: int | None = None, ledger: CommLedger | None = None) -> np.ndarray:
    """Sum of the agents' payloads, in agent order; one message per agent."""
    if not messages:
        raise ValueError("no messages to aggregate")
    n_agents = len(messages) if n_agents is None else n_agents
    agents = [m.agent for m in messages]
    if len(set(agents)) != len(agents):
        raise ValueError("duplicate agent message")
    if sorted(agents) != list(range(n_agents)):
        raise ValueError(f"expected one message from each of {n_agents} agents, got {sorted(agents)}")
    if len({m.batch for m in messages}) != 1:
        raise ValueError("messages belong to different batches")
    ordered = sorted(messages, key=lambda m: m.agent)
    total = np.zeros_like(np.asarray(ordered[0].payload, dtype=float))
    for msg in ordered:
        total = total + msg.payload
    if ledger is not None:
        d = total.size
        for msg in ordered:
            ledger.record_send(msg.agent, d, msg.bits)
        ledger.record_broadcast(d * n_agents)
        ledger.rounds_with_communication += 1
    return total


# ---------------------------------------------------------------------------
# Estimated-distribution variant
# ---------------------------------------------------------------------------


def relaxed_radius(k_arms: int, n_agents: int, horizon: int, delta: float, lam: float, eps_m: float) -> float:
    return 6.0 * math.sqrt(math.log(2.0 * k_arms * n_agents * horizon / delta) / (1.0 - eps_m)) + 4.0 * math.sqrt(lam)


def relaxed_confidence(gram, eps_m: float, k_arms: int, n_agents: int, horizon: int, delta: float, lam: float, t_m: float | None = None, rng: np.random.Generator | None = None):
    """Perturbed Gram matrix within (1 +- eps_m) Lambda, and the enlarged radius.

    The perturbation is Lambda^{1/2} (I + E) Lambda^{1/2} with E symmetric,
    ||E||_2 = eps_m. When ``t_m`` is given, eps_m <= sqrt(lambda / (N t_m))
    is enforced.
    """
    gram = np.asarray(getattr(gram, "entries", gram), dtype=float)
    if not 0 <= eps_m < 1:
        raise ValueError("eps_m must lie in [0, 1)")
    if t_m is not None and eps_m > math.sqrt(lam / (n_agents * t_m)) * (1 + 1e-12):
        raise ValueError(f"eps_m = {eps_m:g} exceeds sqrt(lambda / (N T_m)) = {math.sqrt(lam / (n_agents * t_m)):.4g}")
    radius = relaxed_radius(k_arms, n_agents, horizon, delta, lam, eps_m)
    if eps_m == 0:
        return gram.copy(), radius
    rng = rng if rng is not None else np.random.default_rng(0)
    d = gram.shape[0]
    g = rng.standard_normal((d, d))
    e = 0.5 * (g + g.T)
    e *= eps_m / np.linalg.norm(e, 2)
    vals, vecs = np.linalg.eigh(gram)
    root = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    pert = root @ (np.eye(d) + e) @ root
    return 0.5 * (pert + pert.T), radius


# ---------------------------------------------------------------------------
# Batch engine
# ---------------------------------------------------------------------------


@dataclass
class RunTrace:
    grid: BatchGrid
    lam: float
    radius: float
    set_index: np.ndarray
    arm_index: np.ndarray
    comm_scalars: np.ndarray
    comm_bits: np.ndarray
    stats: list
    best_arm_eliminated: np.ndarray
    policy_kinds: list
    anomalies: Counter
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class RunOutput:
    regret: RegretLedger
    comm: CommLedger
    trace: RunTrace
    config: RunConfig


# aggregate(batch, u_stack (N, d), first_half, ledger) -> per-agent sums (N, d)
Aggregator = Callable[[int, np.ndarray, int, CommLedger], np.ndarray]


class _DesignCache:
    """G-optimal designs keyed by (support set, survivor mask)."""

    def __init__(self, sets: np.ndarray):
        self.sets = sets
        self.cache: dict = {}
        self.unconverged = 0

    def probs(self, j: int, mask: np.ndarray) -> np.ndarray:
        key = (j, mask.tobytes())
        hit = self.cache.get(key)
        if hit is None:
            arms = self.sets[j][mask]
            try:
                p = g_optimal_design(arms).probs
            except DesignConvergenceError as exc:
                self.unconverged += 1
                p = exc.weights
            hit = np.zeros(mask.size)
            hit[mask] = p
            self.cache[key] = hit
        return hit

    def matrix(self, masks: np.ndarray) -> np.ndarray:
        return np.stack([self.probs(j, masks[j]) for j in range(masks.shape[0])])


def _policy_marginals(policy, sets: np.ndarray, masks: np.ndarray, g_probs: np.ndarray) -> np.ndarray:
    if isinstance(policy, GOptimalPolicy):
        return g_probs
    mix = np.zeros_like(g_probs)
    for p, m in policy.components:
        if p == 0:
            continue
        q = quadratic_forms(sets, m)
        with np.errstate(divide="ignore"):
            logits = np.where(masks & (q > 0), policy.alpha * np.log(np.where(q > 0, q, 1.0)), -np.inf)
        degenerate = ~np.isfinite(logits).any(axis=1) | (policy.alpha == 0)
        logits[degenerate] = np.where(masks[degenerate], 0.0, -np.inf)
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        mix += p * e / e.sum(axis=1, keepdims=True)
    return 0.5 * g_probs + 0.5 * mix


def _exploration_policy(lambda_prime, set_ids, masks, sets, designs: _DesignCache, k_arms, anomalies):
    uniq, inverse = np.unique(set_ids, return_inverse=True)
    unique_sets = [sets[j][masks[j]] for j in uniq]
    idx = _SetIndex.__new__(_SetIndex)
    idx.unique = unique_sets
    idx.ids = inverse
    idx.counts = np.bincount(inverse, minlength=len(uniq))
    idx.d = sets.shape[2]
    idx.g_probs = [designs.probs(j, masks[j])[masks[j]] for j in uniq]
    idx.g_moments = np.stack([(s * p[:, None]).T @ s for s, p in zip(unique_sets, idx.g_probs)])
    idx.max_k = k_arms
    if lambda_prime >= 1:
        anomalies["lambda_prime>=1"] += 1
    try:
        core = core_identification(lambda_prime, unique_sets, _index=idx)
    except Exception as exc:  # CoreIdentificationError
        anomalies[f"core_identification:{getattr(exc, 'reason', type(exc).__name__)}"] += 1
        return GOptimalPolicy()
    sel = np.asarray(core.indices)
    core_idx = _SetIndex.__new__(_SetIndex)
    core_idx.unique = idx.unique
    core_idx.ids = idx.ids[sel]
    core_idx.counts = np.bincount(core_idx.ids, minlength=len(idx.unique))
    core_idx.d = idx.d
    core_idx.g_probs = idx.g_probs
    core_idx.g_moments = idx.g_moments
    core_idx.max_k = k_arms
    try:
        return mixed_softmax_build(lambda_prime, None, k_arms, _index=core_idx)
    except Exception as exc:  # MixedSoftmaxError
        anomalies[f"mixed_softmax:{type(exc).__name__}"] += 1
        return GOptimalPolicy()


def simulate(
    gt: GroundTruth,
    support: DecisionSupport,
    cfg: RunConfig,
    grid: BatchGrid,
    radius: float,
    aggregate: Aggregator,
    relaxed_eps: float = 0.0,
) -> RunOutput:
    t0 = time.perf_counter()
    n, horizon, d = cfg.n_agents, cfg.horizon, support.d
    if gt.d != d:
        raise DimensionError("ground truth and support dimensions differ")
    k_arms = support.k
    sets = support.sets
    n_sets = support.size
    lam = regularizer(d, horizon, cfg.delta)
    theta_star = gt.theta_star
    values = sets @ theta_star
    best_vals = values.max(axis=1)
    best_arm = values.argmax(axis=1)

    regret = RegretLedger.empty(horizon, n)
    ledger = CommLedger(n)
    set_index = np.zeros((horizon, n), dtype=np.int32)
    arm_index = np.zeros((horizon, n), dtype=np.int32)
    comm_scalars = np.zeros(horizon, dtype=np.int64)
    comm_bits = np.zeros(horizon, dtype=np.int64)
    comm_marks = []
    anomalies: Counter = Counter()
    policy_kinds = []

    ctx_rng = [stream(cfg.seed, STREAM_CONTEXT, i) for i in range(n)]
    act_rng = [stream(cfg.seed, STREAM_ACTION, i) for i in range(n)]
    noise_rng = [stream(cfg.seed, STREAM_NOISE, i) for i in range(n)]
    pert_rng = [stream(cfg.seed, STREAM_POLICY, i) for i in range(n)]

    stats = [AgentStats.initial(d, lam, radius) for _ in range(n)]
    masks = [np.ones((n_sets, k_arms), dtype=bool) for _ in range(n)]
    designs = _DesignCache(sets)
    best_elim = np.zeros(n, dtype=np.int64)

    for m in range(1, grid.m_batches + 1):
        start, end = grid.batch_range(m)
        n_rounds = end - start
        window = min(grid.lengths[m - 1] - grid.mixing_rounds, n_rounds)
        half = (window + 1) // 2
        u_stack = np.zeros((n, d))
        esm = np.zeros((n, d, d))
        second_half = []
        policy_kinds.append([stats[i].policy.kind for i in range(n)])
        for i in range(n):
            g_probs = designs.matrix(masks[i])
            probs = _policy_marginals(stats[i].policy, sets, masks[i], g_probs)
            esm[i] = np.einsum("j,jk,jka,jkb->ab", support.weights, probs, sets, sets)
            if n_rounds == 0:
                second_half.append(np.zeros(0, dtype=int))
                continue
            idx = support.index_from_uniform(ctx_rng[i].random(n_rounds))
            ua = act_rng[i].random(n_rounds)
            z = noise_rng[i].standard_normal(n_rounds)
            cdf = np.cumsum(probs[idx], axis=1)
            arm = np.minimum((cdf <= (ua * cdf[:, -1])[:, None]).sum(axis=1), k_arms - 1)
            x = sets[idx, arm]
            means = values[idx, arm]
            y = noisy_rewards(means, z, gt)
            regret.record(np.arange(start, end), i, best_vals[idx] - means)
            best_elim[i] += int(np.count_nonzero(~masks[i][idx, best_arm[idx]]))
            set_index[start:end, i] = idx
            arm_index[start:end, i] = arm
            u_stack[i] = x[:half].T @ y[:half]
            second_half.append(idx[half:window])
        sums = aggregate(m, u_stack, half, ledger)
        comm_marks.append((max(end, 1) - 1, ledger.total(cfg.comm_convention), ledger.bits_sent))

        lambda_prime = lam / (n * half) if half else None
        for i in range(n):
            st = stats[i]
            gram = compute_gram(lam, n, 2 * half, esm[i])
            r = radius
            if relaxed_eps:
                eps = relaxed_eps
                if half:
                    cap = math.sqrt(lam / (n * 2 * half))
                    if eps > cap:
                        anomalies["eps_m_clamped"] += 1
                        eps = cap
                gram, r = relaxed_confidence(gram, eps, k_arms, n, horizon, cfg.delta, lam, rng=pert_rng[i])
            try:
                theta = update_theta(gram, sums[i])
            except IllConditionedError:
                anomalies["ill_conditioned_gram"] += 1
                gram = lam * np.eye(d)
                theta = update_theta(gram, sums[i])
            st.append(gram, theta, r)
            masks[i] &= elimination_mask(sets, st.inverse(m), theta, r)
            if m < grid.m_batches and second_half[i].size and lambda_prime is not None:
                st.policy = _exploration_policy(lambda_prime, second_half[i], masks[i], sets, designs, k_arms, anomalies)

    # cumulative communication as of the end of each round
    for rnd, scal, bits in comm_marks:
        comm_scalars[rnd:] = scal
        comm_bits[rnd:] = bits
    if designs.unconverged:
        anomalies["g_design_unconverged"] += designs.unconverged
    trace = RunTrace(
        grid=grid,
        lam=lam,
        radius=radius,
        set_index=set_index,
        arm_index=arm_index,
        comm_scalars=comm_scalars,
        comm_bits=comm_bits,
        stats=stats,
        best_arm_eliminated=best_elim,
        policy_kinds=policy_kinds,
        anomalies=anomalies,
        wall_time=time.perf_counter() - t0,
    )
    return RunOutput(regret, ledger, trace, cfg)


def run_disbe(gt: GroundTruth, support: DecisionSupport, cfg: RunConfig) -> RunOutput:
    """Run the server-based algorithm; variant ``quantized`` or ``relaxed`` per config."""
    cfg.validate()
    n, horizon, d = cfg.n_agents, cfg.horizon, support.d
    grid = batch_grid(n, horizon, d, cfg.m_batches)
    lam = regularizer(d, horizon, cfg.delta)
    beta = confidence_radius(support.k, n, horizon, cfg.delta, lam)
    radius = beta
    eps0 = None
    if cfg.variant == "quantized":
        eps0 = cfg.eps0 if cfg.eps0 is not None else default_quantization_step(beta, n, d, horizon)
        radius = 2.0 * beta

    def aggregate(m, u_stack, half, ledger):
        msgs = []
        for i in range(n):
            if eps0 is None:
                msgs.append(BatchMessage(i, m, u_stack[i]))
            else:
                q, bits = quantize_message(u_stack[i], eps0, value_range=half)
                msgs.append(BatchMessage(i, m, u_stack[i], q, bits))
        total = server_aggregate(msgs, n, ledger)
        return np.broadcast_to(total, (n, total.size))

    relaxed = cfg.eps_m if cfg.variant == "relaxed" else 0.0
    if cfg.variant == "relaxed":
        radius = relaxed_radius(support.k, n, horizon, cfg.delta, lam, relaxed)
    out = simulate(gt, support, cfg, grid, radius, aggregate, relaxed_eps=relaxed)
    out.trace.extra.update({"beta": beta, "eps0": eps0})
    return out


# ---------------------------------------------------------------------------
# Diagnostics and output
# ---------------------------------------------------------------------------


def coverage_violations(stats: list[AgentStats], sets: np.ndarray, theta_star: np.ndarray) -> int:
    """Count (agent, batch) pairs where some support arm breaks its confidence interval."""
    arms = np.asarray(sets, dtype=float).reshape(-1, sets.shape[-1])
    bad = 0
    for st in stats:
        for k in range(1, len(st.grams)):
            err = np.abs(arms @ (st.thetas[k] - theta_star))
            width = st.radii[k] * np.sqrt(quadratic_forms(arms, st.inverse(k)))
            bad += int(np.any(err > width))
    return bad


def write_round_csv(path: str | Path, out: RunOutput) -> None:
    """Per-round rows: t, agent, inst_regret, cum_regret_total, comm_scalars, comm_bits."""
    inst = out.regret.inst
    cum = out.regret.cumulative_total()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "agent", "inst_regret", "cum_regret_total", "comm_scalars", "comm_bits"])
        for t in range(inst.shape[0]):
            for i in range(inst.shape[1]):
                w.writerow([t + 1, i, repr(float(inst[t, i])), repr(float(cum[t])), int(out.trace.comm_scalars[t]), int(out.trace.comm_bits[t])])


def run_summary(out: RunOutput) -> dict:
    tr = out.trace
    return {
        "config": out.config.to_dict(),
        "m_batches": tr.grid.m_batches,
        "batch_lengths": list(tr.grid.lengths),
        "lambda": tr.lam,
        "radius": tr.radius,
        "final_regret": out.regret.total(),
        "per_agent_regret": out.regret.per_agent_final().tolist(),
        "comm": out.comm.to_dict(),
        "comm_scalars": out.comm.total(out.config.comm_convention),
        "best_arm_eliminated_rounds": tr.best_arm_eliminated.tolist(),
        "anomalies": dict(tr.anomalies),
        "wall_time": tr.wall_time,
    }
