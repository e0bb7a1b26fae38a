import math

import numpy as np

from distbandit.baseline import default_threshold, dislinucb_baseline, linucb_width
from distbandit.config import RunConfig
from distbandit.environment import STREAM_NOISE, make_instance, stream


def cfg(**kw):
    base = dict(n_agents=3, d=3, k_arms=5, horizon=400, seed=2, support_size=10)
    base.update(kw)
    return RunConfig(**base)


def test_infinite_threshold_means_no_communication():
    c = cfg(sync_threshold=math.inf)
    sup, gt = make_instance(c.seed, c.d, c.k_arms, c.support_size)
    out = dislinucb_baseline(gt, sup, c)
    assert out.comm.scalars_sent == 0
    assert out.trace.extra["syncs"] == 0
    # every agent matches a from-scratch single-agent LinUCB on its own data
    alpha = linucb_width(c.d, c.n_agents, c.horizon, c.delta, gt.noise_sigma)
    for i in range(c.n_agents):
        v, b = np.eye(c.d), np.zeros(c.d)
        noise = stream(c.seed, STREAM_NOISE, i).standard_normal(c.horizon)
        for t in range(c.horizon):
            arms = sup.sets[out.trace.set_index[t, i]]
            vinv = np.linalg.inv(v)
            score = arms @ (vinv @ b) + alpha * np.sqrt(np.einsum("ka,ab,kb->k", arms, vinv, arms))
            k = int(np.argmax(score))
            assert k == out.trace.arm_index[t, i]
            x = arms[k]
            v += np.outer(x, x)
            b += (x @ gt.theta_star + gt.noise_sigma * noise[t]) * x


def test_zero_threshold_syncs_every_round():
    c = cfg(sync_threshold=0.0)
    sup, gt = make_instance(c.seed, c.d, c.k_arms, c.support_size)
    out = dislinucb_baseline(gt, sup, c)
    assert out.comm.scalars_sent == c.n_agents * (c.d**2 + c.d) * c.horizon


def test_default_threshold_and_learning():
    assert default_threshold(1000, 4, 5) == 1000 * math.log(1000) / 20
    c = cfg(horizon=3000, n_agents=2)
    sup, gt = make_instance(c.seed, c.d, c.k_arms, c.support_size)
    out = dislinucb_baseline(gt, sup, c)
    inst = out.regret.inst.sum(axis=1)
    assert inst[-500:].mean() < inst[:100].mean()
    assert 0 < out.comm.scalars_sent < c.n_agents * (c.d**2 + c.d) * c.horizon
    assert out.comm.scalars_sent % (c.n_agents * (c.d**2 + c.d)) == 0
