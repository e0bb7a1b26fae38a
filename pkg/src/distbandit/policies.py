"""Exploration policies over finite context sets.

A policy maps a context set (array of shape (k, d)) to a distribution over
its arms. Two kinds exist:

* :class:`GOptimalPolicy` plays the G-optimal design of each set.
* :class:`MixedSoftmaxPolicy` plays the G-optimal design half of the time
  and otherwise a mixture of softmax policies ``p(x) ~ (x^T M_i x)^alpha``.

The mixed policy is built by :func:`build_exploration_policy`, which finds
a core of the input sets (:func:`core_identification`) and then runs the
determinant-doubling epoch construction (:func:`mixed_softmax_build`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_math import PsdMatrix, quadratic_forms, spd_inverse, stack_outer
from .errors import (
    CoreIdentificationError,
    DesignConvergenceError,
    DimensionError,
    ExplorationPolicyError,
    MixedSoftmaxError,
)

log = logging.getLogger(__name__)

ZERO_NORM = 1e-12
CORE_MAX_ITER = 64
LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# G-optimal design
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignWeights:
    probs: np.ndarray
    g_value: float = float("nan")
    rank: int = 0
    iterations: int = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("design weights must be a probability vector")
        object.__setattr__(self, "probs", p)


def g_value(arms: np.ndarray, probs: np.ndarray) -> float:
    """max_x x^T V(pi)^+ x, restricted to the span of the arms."""
    arms = np.asarray(arms, dtype=float)
    z, _ = _span_coordinates(arms)
    v = stack_outer(z, probs)
    try:
        vinv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        return float("inf")
    return float(quadratic_forms(z, vinv).max())


def _span_coordinates(arms: np.ndarray) -> tuple[np.ndarray, int]:
    _, s, vt = np.linalg.svd(arms, full_matrices=False)
    if s.size == 0 or s[0] <= ZERO_NORM:
        return arms[:, :0], 0
    r = int(np.sum(s > s[0] * 1e-10))
    return arms @ vt[:r].T, r


def g_optimal_design(arms, tol: float = 1e-3, max_iter: int | None = None) -> DesignWeights:
    """Frank-Wolfe (with away steps) on log det V(pi).

    Stops once g(pi) <= r (1 + tol), where r is the rank of the arms; by
    Kiefer-Wolfowitz r is the optimum. Zero arms get zero weight.
    """
    arms = np.asarray(arms, dtype=float)
    if arms.ndim != 2 or arms.shape[0] == 0:
        raise DimensionError("design needs a nonempty (k, d) array of arms")
    k, d = arms.shape
    nz = np.linalg.norm(arms, axis=1) > ZERO_NORM
    if not nz.any():
        raise ValueError("all arms are zero; the design is undefined")
    if max_iter is None:
        max_iter = 10 * d * k
    z, r = _span_coordinates(arms[nz])
    w = np.full(z.shape[0], 1.0 / z.shape[0])
    target = r * (1.0 + tol)
    g = None
    it = 0
    for it in range(max_iter + 1):
        vinv = np.linalg.inv(stack_outer(z, w))
        g = quadratic_forms(z, vinv)
        j = int(np.argmax(g))
        if g[j] <= target:
            break
        if it == max_iter:
            probs = np.zeros(k)
            probs[nz] = w
            raise DesignConvergenceError(
                f"G-optimal design not certified after {max_iter} iterations (g={g[j]:.6g}, rank={r})",
                weights=probs,
                g_value=float(g[j]),
            )
        support = np.flatnonzero(w > 0)
        kk = support[np.argmin(g[support])]
        if g[j] - r >= r - g[kk] or w[kk] >= 1.0:
            tau = (g[j] - r) / (r * (g[j] - 1.0))
            w *= 1.0 - tau
            w[j] += tau
        else:
            tau_max = w[kk] / (1.0 - w[kk])
            tau = tau_max if g[kk] <= 1.0 else min((r - g[kk]) / (r * (g[kk] - 1.0)), tau_max)
            w *= 1.0 + tau
            w[kk] = 0.0 if tau == tau_max else w[kk] - tau
            w = np.maximum(w, 0.0)
        w /= w.sum()
    probs = np.zeros(k)
    probs[nz] = w
    return DesignWeights(probs, float(g.max()), r, it)


def design_second_moment(arms: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return stack_outer(arms, probs)


# ---------------------------------------------------------------------------
# Softmax policies
# ---------------------------------------------------------------------------


def softmax_probs(arms: np.ndarray, m: np.ndarray, alpha: float) -> np.ndarray:
    q = quadratic_forms(arms, m)
    if alpha == 0.0 or not np.any(q > 0.0):
        return np.full(q.shape, 1.0 / q.shape[-1])
    with np.errstate(divide="ignore"):
        logits = alpha * np.log(q)
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def softmax_policy(arms, m, alpha: float) -> DesignWeights:
    """p(x_i) proportional to (x_i^T M x_i)^alpha; uniform when every form is 0."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    m = m.entries if isinstance(m, PsdMatrix) else np.asarray(m, dtype=float)
    return DesignWeights(softmax_probs(np.asarray(arms, dtype=float), m, alpha))


def softmax_alpha(k_arms: int) -> float:
    return math.log(k_arms)


# ---------------------------------------------------------------------------
# Policy objects
# ---------------------------------------------------------------------------


class GOptimalPolicy:
    """Plays the G-optimal design of whatever set it is given."""

    kind = "g_optimal"

    def __init__(self, tol: float = 1e-3):
        self.tol = tol

    def marginal(self, arms, g_probs=None) -> np.ndarray:
        if g_probs is not None:
            return np.asarray(g_probs)
        return g_optimal_design(arms, self.tol).probs

    def to_dict(self) -> dict:
        return {"kind": self.kind}

    def __eq__(self, other):
        return isinstance(other, GOptimalPolicy)

    def __repr__(self):
        return "GOptimalPolicy()"


@dataclass(frozen=True, eq=False)
class MixedSoftmaxPolicy:
    components: tuple[tuple[float, np.ndarray], ...]
    alpha: float
    epoch_lengths: tuple[int, ...] = field(default=(), compare=False)
    log_det_w: tuple[float, ...] = field(default=(), compare=False)

    kind = "mixed_softmax"

    def __post_init__(self):
        comps = tuple((float(p), np.asarray(m, dtype=float)) for p, m in self.components)
        ps = np.array([p for p, _ in comps])
        if not comps or np.any(ps < 0) or not math.isclose(ps.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("component probabilities must be a nonempty probability vector")
        object.__setattr__(self, "components", comps)

    def __eq__(self, other):
        if not isinstance(other, MixedSoftmaxPolicy) or len(other.components) != len(self.components):
            return False
        return self.alpha == other.alpha and all(
            p == q and np.array_equal(m, n) for (p, m), (q, n) in zip(self.components, other.components)
        )

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for p, _ in self.components])

    def softmax_mixture(self, arms) -> np.ndarray:
        arms = np.asarray(arms, dtype=float)
        out = np.zeros(arms.shape[0])
        for p, m in self.components:
            if p > 0:
                out += p * softmax_probs(arms, m, self.alpha)
        return out

    def marginal(self, arms, g_probs=None) -> np.ndarray:
        """(1/2) pi^G + (1/2) sum_i p_i pi^S_{M_i} on this set."""
        if g_probs is None:
            g_probs = g_optimal_design(arms).probs
        return 0.5 * np.asarray(g_probs) + 0.5 * self.softmax_mixture(arms)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "components": [{"p": p, "M": m.tolist()} for p, m in self.components],
        }


def policy_from_dict(data: dict):
    if data.get("kind") == "g_optimal":
        return GOptimalPolicy()
    comps = tuple((c["p"], np.asarray(c["M"])) for c in data["components"])
    return MixedSoftmaxPolicy(comps, float(data["alpha"]))


def sample_action(policy, arms, rng: np.random.Generator, return_branch: bool = False):
    """Two-stage draw: fair coin for the G-optimal branch, else component i w.p. p_i.

    The branch is -1 for the G-optimal design, otherwise the component index.
    """
    arms = np.asarray(arms, dtype=float)
    if isinstance(policy, GOptimalPolicy) or rng.random() < 0.5:
        branch = -1
        probs = g_optimal_design(arms).probs
    else:
        branch = int(rng.choice(len(policy.components), p=policy.probs))
        probs = softmax_probs(arms, policy.components[branch][1], policy.alpha)
    idx = int(rng.choice(arms.shape[0], p=probs))
    return (idx, branch) if return_branch else idx


def expected_second_moment(policy, survivor_sets: Sequence[np.ndarray], weights=None, full_sets=None) -> PsdMatrix:
    """Exact E_X E_{x ~ pi(X)}[x x^T] over a finite list of sets.

    An empty survivor set is replaced by the matching entry of ``full_sets``.
    """
    n = len(survivor_sets)
    if n == 0:
        raise ValueError("need at least one set")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    d = None
    acc = None
    for j, arms in enumerate(survivor_sets):
        arms = np.asarray(arms, dtype=float)
        if arms.shape[0] == 0:
            if full_sets is None:
                raise ValueError(f"survivor set {j} is empty and no full set was given")
            log.warning("survivor set %d is empty; using the full set", j)
            arms = np.asarray(full_sets[j], dtype=float)
        if acc is None:
            d = arms.shape[1]
            acc = np.zeros((d, d))
        acc += w[j] * stack_outer(arms, policy.marginal(arms))
    return PsdMatrix(acc)


def lambda_deviation(policy, sets: Sequence[np.ndarray], lambda_prime: float, weights=None) -> float:
    """E_X[max_x ||x||_{(lambda' I + E E[y y^T])^{-1}}] over a finite support."""
    esm = expected_second_moment(policy, sets, weights).entries
    ainv = spd_inverse(lambda_prime * np.eye(esm.shape[0]) + esm)
    n = len(sets)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return float(sum(w[j] * np.sqrt(quadratic_forms(np.asarray(s, dtype=float), ainv).max()) for j, s in enumerate(sets)))


# ---------------------------------------------------------------------------
# Core identification and the mixed-softmax construction
# ---------------------------------------------------------------------------


class _SetIndex:
    """Deduplicated view of a list of sets: unique sets plus per-entry ids."""

    def __init__(self, sets: Sequence[np.ndarray], g_designs=None):
        if len(sets) == 0:
            raise ValueError("need at least one context set")
        keys = {}
        self.unique = []
        ids = []
        for s in sets:
            s = np.asarray(s, dtype=float)
            key = (s.shape, s.tobytes())
            if key not in keys:
                keys[key] = len(self.unique)
                self.unique.append(s)
            ids.append(keys[key])
        self.ids = np.asarray(ids)
        self.counts = np.bincount(self.ids, minlength=len(self.unique))
        self.d = self.unique[0].shape[1]
        g_designs = g_designs or {}
        self.g_probs = []
        for s in self.unique:
            key = (s.shape, s.tobytes())
            probs = g_designs.get(key)
            if probs is None:
                probs = g_optimal_design(s).probs
            self.g_probs.append(probs)
        self.g_moments = np.stack([stack_outer(s, p) for s, p in zip(self.unique, self.g_probs)])
        self.max_k = max(s.shape[0] for s in self.unique)

    def __len__(self):
        return self.ids.size


@dataclass(frozen=True)
class CoreSet:
    indices: tuple[int, ...]
    lambda_prime: float
    iterations: int
    max_quadratic_form: float


def core_identification(lambda_prime: float, sets: Sequence[np.ndarray], max_iter: int = CORE_MAX_ITER, _index=None) -> CoreSet:
    """Shrink the set list until some arm has x^T A(C)^{-1} x > d^5.

    A(C) = lambda' I + (1/L) sum_{X in C} E_{x ~ pi^G(X)}[x x^T]; each round
    keeps only the sets whose largest quadratic form is at most d^5 / 2.
    """
    if lambda_prime <= 0:
        raise ValueError("lambda_prime must be positive")
    idx = _index if _index is not None else _SetIndex(sets)
    d = idx.d
    thresh = float(d) ** 5
    n_total = len(idx)
    alive = np.ones(n_total, dtype=bool)
    unique_max = np.zeros(len(idx.unique))
    for xi in range(1, max_iter + 1):
        counts = np.bincount(idx.ids[alive], minlength=len(idx.unique))
        a = lambda_prime * np.eye(d) + np.tensordot(counts, idx.g_moments, axes=1) / n_total
        ainv = spd_inverse(a)
        for u, s in enumerate(idx.unique):
            unique_max[u] = quadratic_forms(s, ainv).max() if counts[u] else -np.inf
        top = float(unique_max.max())
        if top > thresh:
            return CoreSet(tuple(np.flatnonzero(alive).tolist()), lambda_prime, xi, top)
        keep = alive & (unique_max[idx.ids] <= thresh / 2)
        if not keep.any():
            raise CoreIdentificationError("core became empty", "empty", xi)
        if np.array_equal(keep, alive):
            # fixed point: the list can never change again, so the cap is certain
            raise CoreIdentificationError(
                f"no set exceeds d^5 = {thresh:g} (max {top:.4g}) and none can be removed; "
                f"iteration cap {max_iter} would be reached",
                "iteration_cap",
                max_iter,
            )
        alive = keep
    raise CoreIdentificationError(f"iteration cap {max_iter} reached", "iteration_cap", max_iter)


def mixed_softmax_q(d: int) -> int:
    return max(1, math.ceil(2 * d * d * math.log(d))) if d > 1 else 1


def _softmax_moments(unique, m, alpha):
    return np.stack([stack_outer(s, softmax_probs(s, m, alpha)) for s in unique])


def mixed_softmax_build(lambda_prime: float, sets: Sequence[np.ndarray], k_arms: int | None = None, chunk: int = 4096, _index=None) -> MixedSoftmaxPolicy:
    """Determinant-doubling epochs over Q passes of the input sets.

    Each step adds the softmax second moment of the next set (temperature
    W_n^{-1}) to U; a new epoch starts when det U / det W_n > 2.
    Components get weight proportional to epoch length, counting only epochs
    at least L steps long, and matrix M_i = Q L W_i^{-1}.
    """
    if lambda_prime <= 0:
        raise ValueError("lambda_prime must be positive")
    idx = _index if _index is not None else _SetIndex(sets)
    d = idx.d
    big_l = len(idx)
    q = mixed_softmax_q(d)
    total = q * big_l
    alpha = softmax_alpha(k_arms if k_arms is not None else idx.max_k)
    eye = np.eye(d)
    u = lambda_prime * total * eye + 0.5 * q * np.tensordot(idx.counts, idx.g_moments, axes=1)
    w_mats = [u]
    w_logdets = [np.linalg.slogdet(u)[1]]
    lengths = [0]
    moments = _softmax_moments(idx.unique, spd_inverse(u), alpha)
    s = 0
    while s < total:
        stop = min(s + chunk, total)
        steps = moments[idx.ids[np.arange(s, stop) % big_l]]
        cum = u + np.cumsum(steps, axis=0)
        logdets = np.linalg.slogdet(cum)[1]
        hit = np.flatnonzero(logdets - w_logdets[-1] > LOG2)
        if hit.size == 0:
            lengths[-1] += stop - s
            u = cum[-1]
            s = stop
            continue
        h = int(hit[0])
        lengths[-1] += h + 1
        u = cum[h]
        s += h + 1
        w_mats.append(u)
        w_logdets.append(float(logdets[h]))
        lengths.append(0)
        moments = _softmax_moments(idx.unique, spd_inverse(u), alpha)
    if lengths[-1] == 0:
        # the doubling happened on the very last step; that epoch is empty
        w_mats.pop()
        w_logdets.pop()
        lengths.pop()
    lengths_arr = np.asarray(lengths, dtype=float)
    qualifying = np.where(lengths_arr >= big_l, lengths_arr, 0.0)
    if qualifying.sum() == 0:
        raise MixedSoftmaxError(f"every epoch is shorter than L = {big_l}")
    probs = qualifying / qualifying.sum()
    comps = tuple((float(p), total * spd_inverse(w)) for p, w in zip(probs, w_mats))
    return MixedSoftmaxPolicy(comps, alpha, tuple(int(x) for x in lengths), tuple(float(x) for x in w_logdets))


def build_exploration_policy(lambda_prime: float, sets: Sequence[np.ndarray], k_arms: int | None = None, g_designs=None) -> MixedSoftmaxPolicy:
    """Core identification followed by the mixed-softmax construction on the core."""
    idx = _SetIndex(sets, g_designs)
    try:
        core = core_identification(lambda_prime, sets, _index=idx)
        core_sets = [idx.unique[i] for i in idx.ids[list(core.indices)]]
        return mixed_softmax_build(lambda_prime, core_sets, k_arms, _index=_SetIndex(core_sets, _designs_of(idx)))
    except (CoreIdentificationError, MixedSoftmaxError) as exc:
        raise ExplorationPolicyError(str(exc)) from exc


def _designs_of(idx: _SetIndex) -> dict:
    return {(s.shape, s.tobytes()): p for s, p in zip(idx.unique, idx.g_probs)}
