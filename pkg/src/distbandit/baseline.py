"""Event-triggered distributed LinUCB (DisLinUCB), used as a comparison baseline.

Each agent runs ridge LinUCB on the shared statistics from the last sync
plus its own data since then. When an agent's local log-det growth times
the rounds since the last sync exceeds a threshold D, every agent uploads
its (d x d, d) increment and the increments are merged. The threshold
defaults to T log T / (d N).
"""

from __future__ import annotations

import math
import time
from collections import Counter

import numpy as np

from .config import RunConfig
from .core_math import sherman_morrison_update, spd_inverse
from .disbe import CommLedger, RunOutput, RunTrace
from .environment import (
    STREAM_CONTEXT,
    STREAM_NOISE,
    DecisionSupport,
    GroundTruth,
    RegretLedger,
    noisy_rewards,
    stream,
)

RIDGE = 1.0


def default_threshold(horizon: int, d: int, n_agents: int) -> float:
    return horizon * math.log(max(horizon, 2)) / (d * n_agents)


def linucb_width(d: int, n_agents: int, horizon: int, delta: float, sigma: float, lam: float = RIDGE) -> float:
    """sqrt(lambda) + sigma sqrt(2 log(1/delta) + d log(1 + N T / (d lambda)))."""
    return math.sqrt(lam) + sigma * math.sqrt(2.0 * math.log(1.0 / delta) + d * math.log(1.0 + n_agents * horizon / (d * lam)))


def dislinucb_baseline(gt: GroundTruth, support: DecisionSupport, cfg: RunConfig) -> RunOutput:
    t0 = time.perf_counter()
    cfg.validate()
    n, horizon, d = cfg.n_agents, cfg.horizon, support.d
    threshold = cfg.sync_threshold if cfg.sync_threshold is not None else default_threshold(horizon, d, n)
    alpha = linucb_width(d, n, horizon, cfg.delta, max(gt.noise_sigma, 1e-3))
    sets = support.sets
    values = sets @ gt.theta_star
    best = values.max(axis=1)

    ctx = [stream(cfg.seed, STREAM_CONTEXT, i) for i in range(n)]
    noise = [stream(cfg.seed, STREAM_NOISE, i) for i in range(n)]
    regret = RegretLedger.empty(horizon, n)
    ledger = CommLedger(n)
    comm_scalars = np.zeros(horizon, dtype=np.int64)
    set_index = np.zeros((horizon, n), dtype=np.int32)
    arm_index = np.zeros((horizon, n), dtype=np.int32)

    w_sync = RIDGE * np.eye(d)
    b_sync = np.zeros(d)
    dv = np.zeros((n, d, d))
    db = np.zeros((n, d))
    vinv = np.stack([spd_inverse(w_sync)] * n)
    logdet_sync = d * math.log(RIDGE)
    logdet = np.full(n, logdet_sync)
    last_sync = 0
    syncs = 0

    for t in range(horizon):
        trigger = False
        for i in range(n):
            j = int(support.index_from_uniform(ctx[i].random()))
            arms = sets[j]
            theta = vinv[i] @ (b_sync + db[i])
            width = np.sqrt(np.einsum("ka,ab,kb->k", arms, vinv[i], arms))
            k = int(np.argmax(arms @ theta + alpha * width))
            x = arms[k]
            y = float(noisy_rewards(values[j, k], noise[i].standard_normal(), gt))
            regret.inst[t, i] = max(best[j] - values[j, k], 0.0)
            set_index[t, i] = j
            arm_index[t, i] = k
            logdet[i] += math.log1p(float(x @ vinv[i] @ x))
            vinv[i] = sherman_morrison_update(vinv[i], x)
            dv[i] += np.outer(x, x)
            db[i] += y * x
            if (t + 1 - last_sync) * (logdet[i] - logdet_sync) > threshold:
                trigger = True
        if trigger:
            for i in range(n):
                ledger.record_send(i, d * d + d)
            ledger.record_broadcast(n * (d * d + d))
            ledger.rounds_with_communication += 1
            w_sync = w_sync + dv.sum(axis=0)
            b_sync = b_sync + db.sum(axis=0)
            dv[:] = 0.0
            db[:] = 0.0
            inv = spd_inverse(w_sync)
            vinv[:] = inv
            logdet_sync = float(np.linalg.slogdet(w_sync)[1])
            logdet[:] = logdet_sync
            last_sync = t + 1
            syncs += 1
        comm_scalars[t] = ledger.total(cfg.comm_convention)

    trace = RunTrace(
        grid=None,
        lam=RIDGE,
        radius=alpha,
        set_index=set_index,
        arm_index=arm_index,
        comm_scalars=comm_scalars,
        comm_bits=np.zeros(horizon, dtype=np.int64),
        stats=[],
        best_arm_eliminated=np.zeros(n, dtype=np.int64),
        policy_kinds=[],
        anomalies=Counter(),
        wall_time=time.perf_counter() - t0,
        extra={"threshold": threshold, "syncs": syncs},
    )
    return RunOutput(regret, ledger, trace, cfg)
