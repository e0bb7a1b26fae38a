import math

import numpy as np
import pytest

from distbandit.environment import (
    DecisionSupport,
    GroundTruth,
    RegretLedger,
    instantaneous_regret,
    load_instance,
    lower_bound_delta,
    make_instance,
    make_lower_bound_instance,
    noisy_rewards,
    reward,
    sample_decision_set,
    save_instance,
    stream,
)
from distbandit.errors import ConfigError, DimensionError


def test_streams_are_positional_and_independent():
    a = stream(7, 1, 0).random(100)
    b = np.concatenate([stream(7, 1, 0).random(40), np.zeros(0)])
    assert np.array_equal(a[:40], b)
    assert not np.array_equal(a, stream(7, 1, 1).random(100))
    assert not np.array_equal(a, stream(8, 1, 0).random(100))


def test_ground_truth_validation():
    with pytest.raises(ConfigError):
        GroundTruth(np.array([1.0, 1.0]))
    with pytest.raises(ConfigError):
        GroundTruth(np.array([0.5]), noise_sigma=-1)
    with pytest.raises(DimensionError):
        GroundTruth(np.eye(2))
    gt = GroundTruth(np.array([0.6, 0.8]), 0.2, True)
    assert GroundTruth.from_dict(gt.to_dict()).to_dict() == gt.to_dict()


def test_support_validation():
    with pytest.raises(ConfigError):
        DecisionSupport(np.full((1, 2, 2), 1.0))
    with pytest.raises(ConfigError):
        DecisionSupport(np.zeros((2, 1, 2)), weights=[0.7, 0.7])
    with pytest.raises(DimensionError):
        DecisionSupport(np.zeros((2, 2)))


def test_sample_single_set_and_zero_weight():
    one = DecisionSupport(np.eye(2)[None])
    rng = np.random.default_rng(0)
    assert all(sample_decision_set(one, rng)[0] == 0 for _ in range(50))
    two = DecisionSupport(np.stack([np.eye(2), -np.eye(2)]), weights=[1.0, 0.0])
    assert all(sample_decision_set(two, rng)[0] == 0 for _ in range(500))


def test_sample_uniform_frequencies():
    sup = DecisionSupport(np.zeros((4, 1, 2)))
    idx = sup.index_from_uniform(np.random.default_rng(3).random(100_000))
    freq = np.bincount(idx, minlength=4) / 1e5
    sigma = math.sqrt(0.25 * 0.75 / 1e5)
    assert np.all(np.abs(freq - 0.25) < 3 * sigma)


def test_reward_examples():
    th = np.array([0.6, 0.8])
    gt = GroundTruth(th, 0.0)
    rng = np.random.default_rng(0)
    assert reward(th, gt, rng) == pytest.approx(1.0)
    assert reward(np.array([0.8, -0.6]), gt, rng) == pytest.approx(0.0)
    noisy = GroundTruth(th, 0.1)
    x = np.array([1.0, 0.0])
    ys = reward(np.tile(x, (10_000, 1)), noisy, rng)
    assert abs(ys.mean() - 0.6) < 4 * 0.1 / 100
    clipped = GroundTruth(th, 5.0, clip_rewards=True)
    assert np.all(np.abs(reward(np.tile(x, (1000, 1)), clipped, rng)) <= 1.0)
    assert np.array_equal(noisy_rewards(np.zeros(2), np.ones(2), noisy), np.full(2, 0.1))


def test_instantaneous_regret():
    e1 = np.array([1.0, 0.0])
    gt = GroundTruth(e1, 0.0)
    assert instantaneous_regret([e1, -e1], -e1, gt) == 2.0
    assert instantaneous_regret([e1, -e1], e1, gt) == 0.0
    rng = np.random.default_rng(5)
    gt = GroundTruth(np.array([0.3, -0.2, 0.5]), 0.0)
    for _ in range(20):
        arms = rng.standard_normal((5, 3))
        arms /= np.linalg.norm(arms, axis=1, keepdims=True)
        j = rng.integers(5)
        brute = max(float(a @ gt.theta_star) for a in arms) - float(arms[j] @ gt.theta_star)
        assert instantaneous_regret(arms, arms[j], gt) == pytest.approx(brute)


def test_regret_ledger():
    led = RegretLedger.empty(4, 2)
    led.record(np.arange(4), 0, [1.0, 0.0, 0.5, 0.0])
    led.record(np.arange(4), 1, [0.0, 0.0, 0.0, 2.0])
    assert led.total() == 3.5
    assert np.array_equal(led.cumulative_total(), [1.0, 1.0, 1.5, 3.5])
    assert np.all(np.diff(led.cumulative_per_agent(), axis=0) >= 0)
    with pytest.raises(ValueError):
        led.record(np.arange(1), 0, [-0.1])
    a = RegretLedger.empty(2, 2)
    b = RegretLedger.empty(2, 2)
    a.record(np.arange(2), 0, [1.0, 1.0])
    b.record(np.arange(2), 1, [2.0, 2.0])
    assert np.array_equal(a.merge(b).per_agent_final(), [2.0, 4.0])


def test_instance_roundtrip_and_determinism(tmp_path):
    sup, gt = make_instance(11, 3, 5, support_size=7)
    sup2, gt2 = make_instance(11, 3, 5, support_size=7)
    assert np.array_equal(sup.sets, sup2.sets) and np.array_equal(gt.theta_star, gt2.theta_star)
    assert np.allclose(np.linalg.norm(sup.sets, axis=2), 1.0)
    path = tmp_path / "inst.json"
    save_instance(path, sup, gt)
    sup3, gt3 = load_instance(path)
    assert np.array_equal(sup3.sets, sup.sets) and np.array_equal(gt3.theta_star, gt.theta_star)
    assert set(sup.to_dict()) == {"d", "K", "sets", "weights"}


def test_lower_bound_instance():
    rng = np.random.default_rng(0)
    sup, gt = make_lower_bound_instance(2, 1024, rng)
    assert sup.size == 1
    assert np.array_equal(sup.sets[0], np.eye(2))
    assert abs(gt.theta_star[0]) == lower_bound_delta(2, 1024) and gt.theta_star[1] == 0.0
    assert lower_bound_delta(4, 1024) == 1 / 128
    with pytest.raises(ConfigError):
        make_lower_bound_instance(3, 1024, rng)
    for _ in range(20):
        sup, gt = make_lower_bound_instance(8, 1024, rng)
        assert np.linalg.norm(gt.theta_star) == pytest.approx(lower_bound_delta(8, 1024) * 2)
