import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distbandit.errors import CoreIdentificationError, DesignConvergenceError, ExplorationPolicyError, MixedSoftmaxError
from distbandit.policies import (
    GOptimalPolicy,
    MixedSoftmaxPolicy,
    build_exploration_policy,
    core_identification,
    expected_second_moment,
    g_optimal_design,
    g_value,
    lambda_deviation,
    mixed_softmax_build,
    mixed_softmax_q,
    policy_from_dict,
    sample_action,
    softmax_alpha,
    softmax_policy,
    softmax_probs,
)

E1, E2 = np.eye(2)


def unit_rows(rng, k, d):
    x = rng.standard_normal((k, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- G-optimal design ------------------------------------------------------


def test_design_standard_basis():
    for d in (2, 3, 6):
        w = g_optimal_design(np.eye(d))
        assert np.allclose(w.probs, 1 / d)
        assert w.g_value == pytest.approx(d)


def test_design_single_arm_and_zero_arms():
    w = g_optimal_design(np.array([[0.3, 0.4]]))
    assert w.probs.tolist() == [1.0] and w.g_value == pytest.approx(1.0)
    w = g_optimal_design(np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert w.probs.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        g_optimal_design(np.zeros((2, 3)))


def test_design_matches_simplex_grid():
    arms = np.array([E1, E2, (E1 + E2) / math.sqrt(2)])
    w = g_optimal_design(arms)
    step = 1e-3
    best, best_p = np.inf, None
    grid = np.arange(0.0, 1.0 + step / 2, step)
    for a in grid[::5]:
        for b in grid[::5]:
            if a + b > 1 + 1e-12:
                continue
            p = np.array([a, b, max(1 - a - b, 0.0)])
            g = g_value(arms, p)
            if g < best:
                best, best_p = g, p
    assert w.g_value == pytest.approx(2.0, rel=1e-3)
    assert best == pytest.approx(2.0, rel=1e-3)
    assert g_value(arms, w.probs) <= best * (1 + 1e-3)
    assert np.allclose(w.probs, best_p, atol=0.02)


def test_design_nonconvergence_reports_weights():
    rng = np.random.default_rng(0)
    arms = unit_rows(rng, 30, 6)
    with pytest.raises(DesignConvergenceError) as info:
        g_optimal_design(arms, tol=1e-9, max_iter=2)
    assert info.value.weights.sum() == pytest.approx(1.0)


def test_design_certificate_random():
    rng = np.random.default_rng(2)
    for _ in range(30):
        d, k = rng.integers(1, 9), rng.integers(1, 31)
        arms = unit_rows(rng, k, d)
        w = g_optimal_design(arms)
        r = np.linalg.matrix_rank(arms)
        assert g_value(arms, w.probs) <= r * 1.05


# --- softmax ---------------------------------------------------------------


def test_softmax_examples():
    arms = np.array([E1, E2])
    p = softmax_policy(arms, np.diag([4.0, 1.0]), math.log(2)).probs
    v = 4 ** math.log(2)
    assert p[0] == pytest.approx(v / (v + 1)) and p[0] == pytest.approx(0.7233, abs=1e-4)
    assert np.allclose(softmax_policy(np.array([E1, E1, E1]), np.diag([2.0, 1.0]), 1.5).probs, 1 / 3)
    assert np.allclose(softmax_policy(unit_rows(np.random.default_rng(0), 5, 3), np.eye(3), 2.0).probs, 0.2)
    assert np.allclose(softmax_probs(arms, np.zeros((2, 2)), 1.0), 0.5)
    with pytest.raises(ValueError):
        softmax_policy(arms, np.eye(2), 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3))
def test_softmax_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    arms = unit_rows(rng, 6, 3)
    g = rng.standard_normal((3, 3))
    m = g @ g.T + 0.1 * np.eye(3)
    a = softmax_policy(arms, m, math.log(6)).probs
    b = softmax_policy(arms, c * m, math.log(6)).probs
    assert np.allclose(a, b, atol=1e-9)
    assert a.sum() == pytest.approx(1.0, abs=1e-9) and np.all(a >= 0)


# --- core identification -----------------------------------------------------


def naive_core(lambda_prime, sets, cap=64):
    """Step-by-step transcription of the shrink loop, designs recomputed every time."""
    d = sets[0].shape[1]
    n = len(sets)
    alive = list(range(n))
    for xi in range(1, cap + 1):
        a = lambda_prime * np.eye(d)
        for j in alive:
            p = g_optimal_design(sets[j]).probs
            a += sum(pk * np.outer(x, x) for pk, x in zip(p, sets[j])) / n
        ainv = np.linalg.inv(a)
        qmax = {j: max(float(x @ ainv @ x) for x in sets[j]) for j in alive}
        if max(qmax.values()) > d**5:
            return alive, xi, max(qmax.values())
        alive = [j for j in alive if qmax[j] <= d**5 / 2]
    return None


def test_core_trace_against_naive():
    sets = [np.array([E1])] * 38 + [np.array([E2]), np.array([E1, 0.8 * E2])]
    core = core_identification(0.01, sets)
    alive, xi, q = naive_core(0.01, sets)
    assert list(core.indices) == alive
    assert core.iterations == xi == 2
    assert 39 not in alive or 38 not in alive
    assert len(alive) == 39 and 38 not in alive
    assert core.max_quadratic_form == pytest.approx(q)
    assert q == pytest.approx(35.6, abs=0.1)


def test_core_immediate_return():
    # e2 is covered by 1 of 100 sets: its form is 1 / (1e-4 + 0.01) > 32
    sets = [np.array([E1])] * 99 + [np.array([E2])]
    core = core_identification(1e-4, sets)
    assert core.indices == tuple(range(100)) and core.iterations == 1


def test_core_cap_when_lambda_large():
    with pytest.raises(CoreIdentificationError) as info:
        core_identification(1.0, [np.array([E1, E2])] * 4)
    assert info.value.reason == "iteration_cap"
    with pytest.raises(CoreIdentificationError):
        core_identification(1e-4, [np.array([E1])])


def test_core_empty():
    # d = 1: every form is 1 / 1.5, above d^5 / 2 but not above d^5
    sets = [np.array([[1.0]])] * 3
    with pytest.raises(CoreIdentificationError) as info:
        core_identification(0.5, sets)
    assert info.value.reason == "empty"


# --- mixed softmax -----------------------------------------------------------


def naive_mixed_softmax(lambda_prime, sets, k_arms):
    d = sets[0].shape[1]
    big_l = len(sets)
    q = mixed_softmax_q(d)
    alpha = math.log(k_arms)
    u = lambda_prime * q * big_l * np.eye(d)
    for s in sets:
        p = g_optimal_design(s).probs
        u += 0.5 * q * sum(pk * np.outer(x, x) for pk, x in zip(p, s))
    ws, lengths = [u.copy()], [0]
    for step in range(q * big_l):
        w = ws[-1]
        s = sets[step % big_l]
        p = softmax_probs(s, np.linalg.inv(w), alpha)
        u = u + sum(pk * np.outer(x, x) for pk, x in zip(p, s))
        lengths[-1] += 1
        if np.linalg.slogdet(u)[1] - np.linalg.slogdet(w)[1] > math.log(2):
            ws.append(u.copy())
            lengths.append(0)
    if lengths[-1] == 0:
        ws.pop()
        lengths.pop()
    qual = np.array([t if t >= big_l else 0 for t in lengths], dtype=float)
    return qual / qual.sum(), [q * big_l * np.linalg.inv(w) for w in ws], lengths


def test_mixed_softmax_matches_naive():
    rng = np.random.default_rng(4)
    sets = [unit_rows(rng, 3, 2) for _ in range(5)]
    pol = mixed_softmax_build(1e-3, sets, k_arms=3, chunk=7)
    probs, mats, lengths = naive_mixed_softmax(1e-3, sets, 3)
    assert list(pol.epoch_lengths) == lengths
    assert np.allclose(pol.probs, probs)
    for (_, m), ref in zip(pol.components, mats):
        assert np.allclose(m, ref, rtol=1e-8)
    assert sum(pol.epoch_lengths) == mixed_softmax_q(2) * 5


def test_mixed_softmax_single_epoch():
    pol = mixed_softmax_build(10.0, [np.array([E1, E2])], k_arms=2)
    assert len(pol.components) == 1 and pol.probs[0] == 1.0
    assert pol.alpha == softmax_alpha(2)


def test_mixed_softmax_doubling_and_structure():
    rng = np.random.default_rng(9)
    for _ in range(10):
        d = int(rng.integers(2, 5))
        sets = [unit_rows(rng, int(rng.integers(2, 6)), d) for _ in range(int(rng.integers(2, 8)))]
        pol = mixed_softmax_build(1e-4, sets, k_arms=5)
        assert pol.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(np.diff(pol.log_det_w) > math.log(2))
        for _, m in pol.components:
            assert np.linalg.eigvalsh(m)[0] > 0


def test_mixed_softmax_all_short_epochs():
    # d = 1, Q = 1: U goes 5.01 -> 15.01, doubling after 6 of 10 steps; both epochs < L
    pol_sets = [np.array([[1.0]])] * 10
    with pytest.raises(MixedSoftmaxError):
        mixed_softmax_build(1e-3, pol_sets, k_arms=2, chunk=3)


def test_exploration_policy_composition():
    sets = [np.array([E1])] * 38 + [np.array([E2]), np.array([E1, 0.8 * E2])]
    pol = build_exploration_policy(0.01, sets, k_arms=2)
    core = core_identification(0.01, sets)
    ref = mixed_softmax_build(0.01, [sets[i] for i in core.indices], k_arms=2)
    assert pol == ref
    assert pol.alpha == math.log(2)
    with pytest.raises(ExplorationPolicyError):
        build_exploration_policy(1.0, sets)


# --- sampling and expectations ---------------------------------------------


def two_component_policy():
    return MixedSoftmaxPolicy(((0.3, np.diag([4.0, 1.0, 1.0])), (0.7, np.diag([1.0, 1.0, 9.0]))), math.log(4))


def test_sample_action_marginal_and_branches():
    rng = np.random.default_rng(0)
    arms = unit_rows(rng, 4, 3)
    pol = two_component_policy()
    n = 100_000
    draws = np.array([sample_action(pol, arms, rng, return_branch=True) for _ in range(n)])
    g_freq = np.mean(draws[:, 1] == -1)
    assert abs(g_freq - 0.5) < 3 * math.sqrt(0.25 / n)
    emp = np.bincount(draws[:, 0], minlength=4) / n
    assert 0.5 * np.abs(emp - pol.marginal(arms)).sum() < 0.01
    assert sample_action(pol, arms[:1], rng) == 0


def test_policy_json_roundtrip():
    pol = two_component_policy()
    assert policy_from_dict(pol.to_dict()) == pol
    assert policy_from_dict(GOptimalPolicy().to_dict()) == GOptimalPolicy()


def test_expected_second_moment_examples():
    e1, e2 = np.eye(3)[:2]
    assert np.allclose(expected_second_moment(GOptimalPolicy(), [np.array([e1])]).entries, np.outer(e1, e1))
    got = expected_second_moment(GOptimalPolicy(), [np.array([e1]), np.array([e2])]).entries
    assert np.allclose(got, np.diag([0.5, 0.5, 0.0]))
    full = [np.array([e1, e2])]
    assert np.allclose(expected_second_moment(GOptimalPolicy(), [np.zeros((0, 3))], full_sets=full).entries, np.diag([0.5, 0.5, 0]))


def test_expected_second_moment_monte_carlo():
    rng = np.random.default_rng(1)
    sets = [unit_rows(rng, 4, 3) for _ in range(3)]
    w = np.array([0.2, 0.5, 0.3])
    pol = two_component_policy()
    exact = expected_second_moment(pol, sets, w).entries
    assert np.trace(exact) <= 1 + 1e-12
    n = 1_000_000
    set_idx = rng.choice(3, size=n, p=w)
    acc = np.zeros((3, 3))
    for j in range(3):
        m = pol.marginal(sets[j])
        cnt = np.bincount(rng.choice(4, size=int(np.sum(set_idx == j)), p=m), minlength=4)
        acc += sum(c * np.outer(x, x) for c, x in zip(cnt, sets[j]))
    assert np.max(np.abs(acc / n - exact)) < 1e-2


def test_lambda_deviation_examples():
    for d in (2, 4):
        lp = 0.3
        assert lambda_deviation(GOptimalPolicy(), [np.eye(d)], lp) == pytest.approx(math.sqrt(1 / (lp + 1 / d)))
    assert lambda_deviation(GOptimalPolicy(), [np.array([[1.0]])], 1.0) == pytest.approx(math.sqrt(0.5))
    assert lambda_deviation(GOptimalPolicy(), [np.eye(3)], 1e6) <= 1 / math.sqrt(1e6)
