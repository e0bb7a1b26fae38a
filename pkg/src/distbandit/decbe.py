"""Decentralized batch elimination (DecBE-LUCB) over a communication graph.

There is no server. At the end of each batch the agents spend the last S
rounds of the batch gossiping their d-vectors with Chebyshev-accelerated
running consensus, so that after S steps agent i holds an estimate of
``sum_j u_j``. The rest of the loop is the server algorithm with the
radius doubled and the batch grid stretched by S.

With |lambda_2| the second eigenvalue modulus of P, the iterates are

    nu_{l+1} = (2 w_l / (|lambda_2| w_{l+1})) P nu_l - (w_{l-1} / w_{l+1}) nu_{l-1}

with w_0 = 1, w_1 = 1 / |lambda_2|, which gives nu_l = q_l(P) nu_0 for
q_l(P) = T_l(P / |lambda_2|) / T_l(1 / |lambda_2|).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core_math import AgentGraph, CommMatrix, build_communication_matrix, make_graph
from .disbe import (
    BatchGrid,
    CommLedger,
    RunOutput,
    _grid,
    confidence_radius,
    default_quantization_step,
    quantize_message,
    regularizer,
    simulate,
)
from .environment import DecisionSupport, GroundTruth
from .errors import ConfigError, GraphError, SpectralError


@dataclass(frozen=True)
class MixingBudget:
    s: int
    epsilon: float
    lambda2_abs: float
    note: str = ""

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("mixing budget must be at least one round")


def mixing_rounds(n_agents: int, epsilon: float, lambda2_abs: float) -> MixingBudget:
    """S = ceil(log(2N / eps) / sqrt(2 log(1 / |lambda_2|))), natural logs, at least 1."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not lambda2_abs < 1:
        raise SpectralError(f"|lambda_2| = {lambda2_abs:.6g} >= 1: graph disconnected or periodic")
    if lambda2_abs < 0:
        raise ValueError("|lambda_2| cannot be negative")
    if lambda2_abs == 0:
        return MixingBudget(1, epsilon, 0.0, "lambda_2 = 0: one gossip round is exact")
    s = math.ceil(math.log(2.0 * n_agents / epsilon) / math.sqrt(2.0 * math.log(1.0 / lambda2_abs)))
    return MixingBudget(max(1, s), epsilon, lambda2_abs)


def chebyshev_weights(lambda2_abs: float, steps: int) -> np.ndarray:
    """w_0..w_steps; w_l = T_l(1 / |lambda_2|)."""
    if not 0 < lambda2_abs < 1:
        raise SpectralError("Chebyshev weights need 0 < |lambda_2| < 1")
    w = np.empty(steps + 1)
    w[0] = 1.0
    if steps >= 1:
        w[1] = 1.0 / lambda2_abs
    for l in range(1, steps):
        w[l + 1] = 2.0 * w[l] / lambda2_abs - w[l - 1]
    return w


@dataclass
class ChebyshevState:
    """Running consensus state: ``nu_now`` = nu_l, ``nu_prev`` = nu_{l-1}, rows are agents."""

    step: int
    weights: list
    nu_now: np.ndarray
    nu_prev: np.ndarray | None = None

    @classmethod
    def start(cls, nu0, p: CommMatrix) -> "ChebyshevState":
        nu0 = np.asarray(nu0, dtype=float)
        if nu0.shape[0] != p.n:
            raise ValueError(f"expected {p.n} agent rows, got {nu0.shape[0]}")
        lam2 = p.lambda2_abs
        w = [1.0] if not lam2 > 0 else [1.0, 1.0 / lam2]
        return cls(1, w, p.entries @ nu0, nu0)


def chebyshev_step(state: ChebyshevState, p: CommMatrix) -> ChebyshevState:
    """Advance from nu_l to nu_{l+1}; each row mixes only with its graph neighbours through P."""
    if state.nu_prev is None or state.step < 1:
        raise ValueError("state is not initialized; use ChebyshevState.start")
    lam2 = p.lambda2_abs
    if not 0 < lam2 < 1:
        raise SpectralError("Chebyshev acceleration needs 0 < |lambda_2| < 1")
    w = list(state.weights)
    while len(w) < state.step + 2:
        w.append(2.0 * w[-1] / lam2 - w[-2])
    l = state.step
    a = 2.0 * w[l] / (lam2 * w[l + 1])
    b = w[l - 1] / w[l + 1]
    nxt = a * (p.entries @ state.nu_now) - b * state.nu_prev
    return ChebyshevState(l + 1, w, nxt, state.nu_now)


def _ensure_comm_matrix(p) -> CommMatrix:
    if isinstance(p, CommMatrix):
        return p
    return CommMatrix(np.asarray(p, dtype=float))


def gossip_consensus(initial, p, budget: MixingBudget | int, ledger: CommLedger | None = None, trace_csv=None, batch: int = 0) -> np.ndarray:
    """Estimates N q_S(P) U of the network sum, one row per agent.

    ``initial`` has shape (N, d); each column is an independent scalar chain.
    Every step each agent sends its d entries to each neighbour.
    """
    p = _ensure_comm_matrix(p)
    nu0 = np.asarray(initial, dtype=float)
    if nu0.ndim == 1:
        nu0 = nu0[:, None]
    n = p.n
    if n < 2:
        raise SpectralError("gossip needs at least two agents")
    s = budget.s if isinstance(budget, MixingBudget) else int(budget)
    if s < 1:
        raise ValueError("need at least one gossip step")
    d = nu0.shape[1]
    off = p.entries != 0
    np.fill_diagonal(off, False)
    degrees = off.sum(axis=1)
    rows = []
    state = ChebyshevState.start(nu0, p)
    _record(ledger, degrees, d)
    rows.append(state.nu_now)
    for _ in range(1, s):
        state = chebyshev_step(state, p)
        _record(ledger, degrees, d)
        rows.append(state.nu_now)
    if ledger is not None:
        ledger.rounds_with_communication += s
    if trace_csv is not None:
        _dump_trace(trace_csv, batch, rows)
    return n * state.nu_now


def _record(ledger, degrees, d):
    if ledger is None:
        return
    for i, deg in enumerate(degrees):
        ledger.record_send(i, int(deg) * d)


def _dump_trace(path, batch, rows):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["batch", "step", "agent", "coord", "value"])
        for step, nu in enumerate(rows, 1):
            for i in range(nu.shape[0]):
                for c in range(nu.shape[1]):
                    w.writerow([batch, step, i, c, repr(float(nu[i, c]))])


def decbe_grid(n_agents: int, t_horizon: int, d: int, m_batches: int = 0, s_rounds: int = 0) -> BatchGrid:
    """T_1 = T_2 = a sqrt(d/N) + S, T_m = floor(a sqrt(T_{m-1} - S) + S), a computed in T + S."""
    if s_rounds < 0:
        raise ConfigError("s_rounds must be non-negative")
    return _grid(n_agents, t_horizon, d, m_batches, s_rounds)


def decbe_radius(k_arms: int, n_agents: int, horizon: int, delta: float, lam: float) -> float:
    """gamma = 12 sqrt(log(2KNT/delta)) + 2 sqrt(lambda), i.e. twice beta."""
    return 2.0 * confidence_radius(k_arms, n_agents, horizon, delta, lam)


def run_decbe(gt: GroundTruth, support: DecisionSupport, graph, cfg: RunConfig, trace_csv=None) -> RunOutput:
    """Run the decentralized algorithm on ``graph`` (AgentGraph, CommMatrix, or a graph spec)."""
    cfg.validate()
    n, horizon, d = cfg.n_agents, cfg.horizon, support.d
    if n < 2:
        raise ConfigError("the decentralized algorithm needs at least two agents")
    if cfg.variant == "relaxed":
        raise ConfigError("the relaxed variant is only defined for the server algorithm")
    if isinstance(graph, CommMatrix):
        p, g = graph, None
    else:
        g = graph if isinstance(graph, AgentGraph) else make_graph(graph, n)
        p = build_communication_matrix(g, cfg.comm_scheme)
    if p.n != n:
        raise GraphError(f"graph has {p.n} nodes but n_agents = {n}")
    lam = regularizer(d, horizon, cfg.delta)
    beta = confidence_radius(support.k, n, horizon, cfg.delta, lam)
    gamma = 2.0 * beta
    eps = cfg.consensus_eps if cfg.consensus_eps is not None else beta / math.sqrt(d)
    budget = mixing_rounds(n, eps, p.lambda2_abs)
    grid = decbe_grid(n, horizon, d, cfg.m_batches, budget.s)
    radius = gamma
    eps0 = None
    if cfg.variant == "quantized":
        eps0 = cfg.eps0 if cfg.eps0 is not None else default_quantization_step(beta, n, d, horizon)
        radius = 2.0 * gamma

    def aggregate(m, u_stack, half, ledger):
        init = u_stack
        if eps0 is not None:
            init = np.empty_like(u_stack)
            for i in range(n):
                init[i], bits = quantize_message(u_stack[i], eps0, value_range=half)
                ledger.bits_sent += bits
                ledger.per_agent_bits[i] += bits
        return gossip_consensus(init, p, budget, ledger, trace_csv=trace_csv, batch=m)

    out = simulate(gt, support, cfg, grid, radius, aggregate)
    n_edges = int((np.count_nonzero(p.entries) - np.count_nonzero(np.diag(p.entries))) // 2)
    out.trace.extra.update({
        "beta": beta,
        "gamma": gamma,
        "mixing_rounds": budget.s,
        "consensus_eps": eps,
        "lambda2_abs": p.lambda2_abs,
        "n_edges": n_edges,
        "eps0": eps0,
        "budget_note": budget.note,
    })
    return out
