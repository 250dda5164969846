"""Directed communication graphs and their column-stochastic mixing weights.

Edge convention, used everywhere in this package: an edge ``(i, j)`` means
agent ``j`` transmits to agent ``i``.  Hence ``j`` is an in-neighbor of
``i`` and ``i`` is an out-neighbor of ``j``.  Nodes are 0-based in memory;
the JSON interchange format uses 1-based indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

COLUMN_SUM_TOL = 1e-12
DEFAULT_MAX_ATTEMPTS = 10_000


class GraphGenerationError(RuntimeError):
    """Rejection sampling could not produce a strongly connected graph."""


@dataclass(frozen=True, eq=True)
class DirectedNetwork:
    """A directed graph on agents 0..n-1 with no self-edges.

    ``edges`` is kept in canonical sorted order so that identical graphs
    compare and serialize identically.
    """

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"agent count must be positive, got {self.n}")
        seen = set()
        for edge in self.edges:
            i, j = edge
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {edge} out of range for n={self.n}")
            if i == j:
                raise ValueError(f"self-edge {edge} is not allowed")
            if edge in seen:
                raise ValueError(f"duplicate edge {edge}")
            seen.add(edge)
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def in_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """in_neighbors[i] = sorted senders j with (i, j) in edges."""
        buckets: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            buckets[i].append(j)
        return tuple(tuple(b) for b in buckets)

    @cached_property
    def out_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """out_neighbors[j] = sorted receivers i with (i, j) in edges."""
        buckets: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            buckets[j].append(i)
        return tuple(tuple(sorted(b)) for b in buckets)

    @cached_property
    def in_degrees(self) -> np.ndarray:
        return np.array([len(b) for b in self.in_neighbors], dtype=np.int64)

    @cached_property
    def out_degrees(self) -> np.ndarray:
        return np.array([len(b) for b in self.out_neighbors], dtype=np.int64)

    @cached_property
    def receivers(self) -> np.ndarray:
        """Receiver index of every edge, aligned with ``edges`` order."""
        return np.array([i for i, _ in self.edges], dtype=np.int64)

    @cached_property
    def senders(self) -> np.ndarray:
        """Sender index of every edge, aligned with ``edges`` order."""
        return np.array([j for _, j in self.edges], dtype=np.int64)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix A with A[i, j] = True iff (i, j) is an edge."""
        a = np.zeros((self.n, self.n), dtype=bool)
        if self.edges:
            a[self.receivers, self.senders] = True
        return a

    def to_json_dict(self) -> dict:
        """1-based JSON document ``{"n": .., "edges": [[i, j], ..]}``."""
        return {"n": self.n, "edges": [[i + 1, j + 1] for i, j in self.edges]}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DirectedNetwork":
        edges = tuple((int(i) - 1, int(j) - 1) for i, j in doc["edges"])
        return cls(int(doc["n"]), edges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DirectedNetwork":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def check_strong_connectivity(net: DirectedNetwork) -> bool:
    """True iff every node reaches every other node along directed edges.

    Two breadth-first sweeps from node 0: one along information flow
    (sender -> receiver) and one against it.
    """
    if net.n == 1:
        return True

    def sweep(neighbors) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == net.n

    # node 0 reaches all (follow out-neighbors), and all reach node 0
    # (follow in-neighbors backwards)
    return sweep(net.out_neighbors) and sweep(net.in_neighbors)


def generate_erdos_renyi(
    n: int,
    connect_prob: float,
    seed: int,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> DirectedNetwork:
    """Sample a strongly connected directed Erdos-Renyi graph.

    Every ordered pair (i, j), i != j, is an edge independently with
    probability ``connect_prob``.  Whole draws are rejected until one is
    strongly connected, which preserves the ER distribution conditioned
    on connectivity.  Identical (n, connect_prob, seed) give identical
    graphs.
    """
    if n < 2:
        raise ValueError(f"need at least 2 agents, got n={n}")
    if not (0.0 < connect_prob <= 1.0):
        raise ValueError(f"connect_prob must be in (0, 1], got {connect_prob}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        mask = rng.random((n, n)) < connect_prob
        np.fill_diagonal(mask, False)
        recv, send = np.nonzero(mask)
        net = DirectedNetwork(n, tuple(zip(recv.tolist(), send.tolist())))
        if check_strong_connectivity(net):
            return net
    raise GraphGenerationError(
        f"no strongly connected graph in {max_attempts} attempts; "
        f"connect_prob={connect_prob} is likely too low for n={n}"
    )


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """A column-stochastic weight matrix tied to a directed network.

    Invariants checked at construction: entries in [0, 1]; nonzero
    exactly on the diagonal and the network's edges; every column sums
    to 1 within ``COLUMN_SUM_TOL``; strictly positive diagonal.
    """

    net: DirectedNetwork
    matrix: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.matrix, dtype=float)
        n = self.net.n
        if p.shape != (n, n):
            raise ValueError(f"weight matrix shape {p.shape} != ({n}, {n})")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("weight matrix entries must lie in [0, 1]")
        diag = np.diag(p)
        if np.any(diag <= 0.0):
            raise ValueError("all self-weights p_ii must be strictly positive")
        support = self.net.adjacency()
        off = p.copy()
        np.fill_diagonal(off, 0.0)
        if np.any((off != 0.0) & ~support):
            raise ValueError("nonzero weight on a pair that is not an edge")
        if np.any((off == 0.0) & support):
            raise ValueError("zero weight on an edge of the network")
        col_err = np.abs(p.sum(axis=0) - 1.0).max()
        if col_err > COLUMN_SUM_TOL:
            raise ValueError(
                f"columns must sum to 1 within {COLUMN_SUM_TOL}, worst error {col_err:.3e}"
            )
        p.flags.writeable = False
        object.__setattr__(self, "matrix", p)

    @property
    def n(self) -> int:
        return self.net.n

    @cached_property
    def diagonal(self) -> np.ndarray:
        d = np.diag(self.matrix).copy()
        d.flags.writeable = False
        return d

    @cached_property
    def p_hat(self) -> np.ndarray:
        """Off-diagonal part; column sub-stochastic (every column sum < 1)."""
        h = self.matrix.copy()
        np.fill_diagonal(h, 0.0)
        h.flags.writeable = False
        return h

    @cached_property
    def p_tilde(self) -> np.ndarray:
        """diag(p_ii - 1) + off-diagonal part, i.e. matrix - I; columns sum to 0."""
        t = self.matrix - np.eye(self.n)
        t.flags.writeable = False
        return t

    @cached_property
    def edge_weights(self) -> np.ndarray:
        """Weight of every edge, aligned with ``net.edges`` order."""
        w = self.matrix[self.net.receivers, self.net.senders].copy()
        w.flags.writeable = False
        return w


def equal_neighbor_weights(net: DirectedNetwork) -> WeightMatrix:
    """Out-degree based equal neighbor rule: p_ij = 1 / (1 + out_degree(j))
    for i an out-neighbor of j and for i = j, else 0.

    Requires a strongly connected network (then every out-degree is at
    least 1 and every agent keeps a strictly positive self-weight).
    """
    if not check_strong_connectivity(net):
        raise ValueError("equal-neighbor weights require a strongly connected network")
    share = 1.0 / (1.0 + net.out_degrees.astype(float))
    p = np.zeros((net.n, net.n))
    p[net.receivers, net.senders] = share[net.senders]
    p[np.diag_indices(net.n)] = share
    return WeightMatrix(net, p)


def weight_matrix_from_array(net: DirectedNetwork, matrix) -> WeightMatrix:
    """Wrap an externally supplied column-stochastic matrix, validating it."""
    return WeightMatrix(net, np.array(matrix, dtype=float))


def split_weight_matrix(weights: WeightMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Return (off-diagonal part, off-diagonal part + diag(p_ii - 1))."""
    return weights.p_hat, weights.p_tilde
