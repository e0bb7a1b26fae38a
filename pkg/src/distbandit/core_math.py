"""Dense linear algebra and communication-graph utilities.

Everything here works on small dense matrices (d and N in the tens). Graph
generation leans on networkx; the communication matrices themselves are
built by hand so that the weighting rules are explicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
from scipy import linalg as sla

from .errors import DimensionError, GraphError, IllConditionedError, NotPSDError, SpectralError

SYM_RTOL = 1e-12
PSD_ATOL = 1e-10
EIG_ATOL = 1e-10
ROW_SUM_ATOL = 1e-10
LAMBDA2_ZERO = 1e-12
MAX_CONDITION = 1e12


# ---------------------------------------------------------------------------
# PSD matrices and norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsdMatrix:
    """Symmetric positive semi-definite matrix, validated on construction."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if not np.allclose(m, m.T, rtol=0.0, atol=SYM_RTOL * scale):
            raise NotPSDError("matrix is not symmetric")
        m = 0.5 * (m + m.T)
        if m.size and np.linalg.eigvalsh(m)[0] < -PSD_ATOL * scale:
            raise NotPSDError("matrix has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, d: int, scale: float = 1.0) -> "PsdMatrix":
        return cls(scale * np.eye(d))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _as_matrix(m) -> np.ndarray:
    return m.entries if isinstance(m, PsdMatrix) else np.asarray(m, dtype=float)


def weighted_norm(x, m) -> float:
    """Return sqrt(x^T m x)."""
    x = np.asarray(x, dtype=float)
    a = _as_matrix(m)
    if a.ndim != 2 or x.ndim != 1 or a.shape != (x.size, x.size):
        raise DimensionError(f"cannot take the {a.shape}-weighted norm of a vector of size {x.size}")
    q = float(x @ a @ x)
    if q < 0.0:
        if q < -PSD_ATOL * max(1.0, float(np.max(np.abs(a)))):
            raise NotPSDError(f"negative quadratic form {q:g}")
        q = 0.0
    return float(np.sqrt(q))


def quadratic_forms(xs: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Row-wise x^T m x for a stack of vectors, clipped at zero."""
    xs = np.asarray(xs, dtype=float)
    q = np.einsum("...i,ij,...j->...", xs, m, xs)
    return np.maximum(q, 0.0)


def condition_number(m) -> float:
    ev = np.linalg.eigvalsh(_as_matrix(m))
    if ev[0] <= 0.0:
        return np.inf
    return float(ev[-1] / ev[0])


def spd_factor(m):
    """Cholesky factor of a positive definite matrix, refusing bad conditioning."""
    a = _as_matrix(m)
    cond = condition_number(a)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(f"condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
    return sla.cho_factor(a, lower=True, check_finite=False)


def spd_solve(m, b) -> np.ndarray:
    return sla.cho_solve(spd_factor(m), np.asarray(b, dtype=float), check_finite=False)


def spd_inverse(m) -> np.ndarray:
    a = _as_matrix(m)
    inv = sla.cho_solve(spd_factor(a), np.eye(a.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def logdet_spd(m) -> float:
    sign, val = np.linalg.slogdet(_as_matrix(m))
    if sign <= 0:
        raise NotPSDError("log-determinant of a matrix that is not positive definite")
    return float(val)


def sherman_morrison_update(inv: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Inverse of (A + x x^T) given inv = A^{-1}."""
    v = inv @ x
    return inv - np.outer(v, v) / (1.0 + x @ v)


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentGraph:
    n: int
    edges: tuple[tuple[int, int], ...]
    degrees: tuple[int, ...] = field(init=False)
    delta_max: int = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph needs at least one node")
        seen = set()
        norm = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={self.n}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
            norm.append(key)
        object.__setattr__(self, "edges", tuple(sorted(norm)))
        deg = [0] * self.n
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        object.__setattr__(self, "degrees", tuple(deg))
        object.__setattr__(self, "delta_max", max(deg))
        if not self.is_connected():
            raise GraphError("graph is not connected")

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def is_connected(self) -> bool:
        return self.n == 1 or nx.is_connected(self.to_networkx())

    def is_regular(self) -> bool:
        return len(set(self.degrees)) == 1

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def neighbors(self, i: int) -> list[int]:
        return [v for u, v in self.edges if u == i] + [u for u, v in self.edges if v == i]

    @classmethod
    def from_networkx(cls, g: nx.Graph) -> "AgentGraph":
        g = nx.convert_node_labels_to_integers(g)
        return cls(g.number_of_nodes(), tuple(g.edges()))


def parse_edge_list(text: str, n: int | None = None) -> AgentGraph:
    """Parse ``u v`` lines (0-indexed). Blank lines and ``#`` comments are skipped."""
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'u v', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if n is None:
        n = 1 + max((max(e) for e in edges), default=0)
    return AgentGraph(n, tuple(edges))


def read_edge_list(path: str | Path, n: int | None = None) -> AgentGraph:
    return parse_edge_list(Path(path).read_text(), n)


def format_edge_list(g: AgentGraph) -> str:
    return "".join(f"{u} {v}\n" for u, v in g.edges)


def complete_graph(n: int) -> AgentGraph:
    return AgentGraph.from_networkx(nx.complete_graph(n))


def cycle_graph(n: int) -> AgentGraph:
    if n < 3:
        return path_graph(n)
    return AgentGraph.from_networkx(nx.cycle_graph(n))


def path_graph(n: int) -> AgentGraph:
    return AgentGraph.from_networkx(nx.path_graph(n))


def star_graph(n: int) -> AgentGraph:
    # networkx's star_graph(k) has k + 1 nodes
    return AgentGraph.from_networkx(nx.star_graph(n - 1))


def erdos_renyi_graph(n: int, p: float, seed: int, max_tries: int = 1000) -> AgentGraph:
    """Connected G(n, p) sample; resamples with successive seeds until connected."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        g = nx.gnp_random_graph(n, p, seed=int(rng.integers(2**31)))
        if n == 1 or nx.is_connected(g):
            return AgentGraph.from_networkx(g)
    raise GraphError(f"no connected G({n}, {p}) sample in {max_tries} tries")


GRAPH_FAMILIES = {
    "complete": complete_graph,
    "cycle": cycle_graph,
    "path": path_graph,
    "star": star_graph,
}


def make_graph(spec: dict | str, n: int) -> AgentGraph:
    """Build a graph from a config spec: a family name, or a dict with ``family``.

    Dict forms: ``{"family": "erdos_renyi", "p": 0.3, "seed": 1}`` or
    ``{"edge_list": "path/to/file"}``.
    """
    if isinstance(spec, str):
        spec = {"family": spec}
    if "edge_list" in spec:
        return read_edge_list(spec["edge_list"], n)
    family = spec.get("family", "complete")
    if family == "erdos_renyi":
        return erdos_renyi_graph(n, float(spec.get("p", 0.5)), int(spec.get("seed", 0)))
    try:
        return GRAPH_FAMILIES[family](n)
    except KeyError:
        raise GraphError(f"unknown graph family {family!r}") from None


# ---------------------------------------------------------------------------
# Communication matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CommMatrix:
    entries: np.ndarray
    lambda2_abs: float = field(init=False)

    def __post_init__(self):
        p = np.array(self.entries, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionError(f"communication matrix must be square, got {p.shape}")
        if not np.allclose(p, p.T, rtol=0.0, atol=1e-12):
            raise GraphError("communication matrix is not symmetric")
        if not np.allclose(p.sum(axis=1), 1.0, rtol=0.0, atol=ROW_SUM_ATOL):
            raise GraphError("communication matrix rows do not sum to 1")
        p = 0.5 * (p + p.T)
        p.setflags(write=False)
        object.__setattr__(self, "entries", p)
        ev = np.sort(np.abs(np.linalg.eigvalsh(p)))[::-1]
        if ev[0] > 1.0 + EIG_ATOL:
            raise GraphError(f"eigenvalue of modulus {ev[0]:.6g} > 1")
        l2 = float(ev[1]) if p.shape[0] > 1 else float("nan")
        if l2 < LAMBDA2_ZERO:
            l2 = 0.0
        object.__setattr__(self, "lambda2_abs", l2)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def respects(self, g: AgentGraph) -> bool:
        a = g.adjacency() + np.eye(g.n)
        return bool(np.all(self.entries[a == 0] == 0.0))


def build_communication_matrix(g: AgentGraph, scheme: str = "metropolis") -> CommMatrix:
    """Symmetric doubly stochastic matrix supported on the edges of ``g``.

    ``laplacian``: I - D^{-1/2} L D^{-1/2} / (delta_max + 1); only valid on
    regular graphs, where it is doubly stochastic.
    ``metropolis``: 1 / (2 max(d_i, d_j)) on each edge, residual on the diagonal.
    """
    if g.n < 2:
        raise GraphError("a communication matrix needs at least two agents")
    if not g.is_connected():
        raise GraphError("graph is not connected")
    deg = np.asarray(g.degrees, dtype=float)
    if scheme == "laplacian":
        if not g.is_regular():
            raise GraphError("laplacian scheme requires a regular graph (rows would not sum to 1)")
        a = g.adjacency()
        lap = np.diag(deg) - a
        dinv = np.diag(1.0 / np.sqrt(deg))
        p = np.eye(g.n) - dinv @ lap @ dinv / (g.delta_max + 1)
    elif scheme == "metropolis":
        p = np.zeros((g.n, g.n))
        for u, v in g.edges:
            p[u, v] = p[v, u] = 1.0 / (2.0 * max(deg[u], deg[v]))
        p[np.diag_indices(g.n)] = 1.0 - p.sum(axis=1)
    else:
        raise GraphError(f"unknown scheme {scheme!r}")
    return CommMatrix(p)


def second_eigenvalue_modulus(p: CommMatrix | np.ndarray) -> float:
    """|lambda_2|; raises if it is undefined (n = 1) or zero."""
    if not isinstance(p, CommMatrix):
        p = CommMatrix(p)
    if p.n < 2:
        raise SpectralError("a single agent has no second eigenvalue")
    if p.lambda2_abs == 0.0:
        raise SpectralError("|lambda_2| = 0: consensus is exact in one step; Chebyshev weights undefined")
    return p.lambda2_abs


def stack_outer(xs: np.ndarray, weights: Sequence[float] | np.ndarray | None = None) -> np.ndarray:
    """sum_k w_k x_k x_k^T for rows x_k of ``xs``."""
    xs = np.asarray(xs, dtype=float)
    if weights is None:
        return xs.T @ xs
    return (xs * np.asarray(weights, dtype=float)[:, None]).T @ xs

