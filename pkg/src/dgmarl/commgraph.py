"""Time-varying communication topology, consensus weights, and gossip averaging.

Neighborhoods are inclusive: neighbors(i) always contains i itself, matching
the convention the consensus weights are defined on. Reported node degree
excludes self.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import ConfigError, UsageError


class CommGraph:
    """Undirected communication topology over n agents.

    Adjacency stores no self-edges; inclusive neighborhoods add self on read.
    Instances are immutable after construction and safe for concurrent reads.
    """

    __slots__ = ("n", "adj")

    def __init__(self, n: int, edges=()):
        if n < 1:
            raise ConfigError(f"graph needs at least one node, got n={n}")
        self.n = n
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ConfigError(f"edge ({i},{j}) out of range for n={n}")
            if i != j:
                adj[i, j] = True
                adj[j, i] = True
        adj.setflags(write=False)
        self.adj = adj

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "CommGraph":
        adj = np.asarray(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ConfigError(f"adjacency must be square, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ConfigError("adjacency must be symmetric")
        g = cls(adj.shape[0])
        a = adj.copy()
        np.fill_diagonal(a, False)
        a.setflags(write=False)
        g.adj = a
        return g

    def neighbors(self, i: int) -> list[int]:
        """Inclusive neighborhood of i, ascending (self always present)."""
        if not (0 <= i < self.n):
            raise UsageError(f"agent id {i} out of range for n={self.n}")
        out = [j for j in range(self.n) if self.adj[i, j] or j == i]
        return out

    def degree(self, i: int) -> int:
        """Inclusive neighborhood size |N^i| (counts self)."""
        if not (0 <= i < self.n):
            raise UsageError(f"agent id {i} out of range for n={self.n}")
        return int(self.adj[i].sum()) + 1

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adj[i, j])

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edge list with i < j, lexicographic."""
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.adj[i, j]:
                    out.append((i, j))
        return out

    def __eq__(self, other):
        return isinstance(other, CommGraph) and self.n == other.n and np.array_equal(self.adj, other.adj)

    def __repr__(self):
        return f"CommGraph(n={self.n}, edges={len(self.edges())})"


def neighbors(g: CommGraph, i: int) -> list[int]:
    return g.neighbors(i)


def is_connected(g: CommGraph) -> bool:
    """True iff a breadth-first traversal from node 0 reaches every node."""
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.nonzero(g.adj[u])[0]:
            if not seen[v]:
                seen[v] = True
                queue.append(int(v))
    return bool(seen.all())


def components(g: CommGraph) -> list[list[int]]:
    """Connected components as sorted node lists (diagnostics for the
    connected-graph check)."""
    seen = np.zeros(g.n, dtype=bool)
    comps = []
    for start in range(g.n):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        comp = [start]
        while queue:
            u = queue.popleft()
            for v in np.nonzero(g.adj[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(int(v))
                    queue.append(int(v))
        comps.append(sorted(comp))
    return comps


def hop_distances(g: CommGraph, i: int) -> np.ndarray:
    """Graph distances from node i (-1 for unreachable)."""
    dist = np.full(g.n, -1, dtype=int)
    dist[i] = 0
    queue = deque([i])
    while queue:
        u = queue.popleft()
        for v in np.nonzero(g.adj[u])[0]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(int(v))
    return dist


def consensus_weights(g: CommGraph) -> np.ndarray:
    """Row-stochastic mixing weights: c(i,j) = 1/|N^i| over the inclusive
    neighborhood, 0 elsewhere. Rows sum to 1 (up to float rounding)."""
    C = np.zeros((g.n, g.n))
    for i in range(g.n):
        ns = g.neighbors(i)
        w = 1.0 / len(ns)
        for j in ns:
            C[i, j] = w
    return C


def radius_graph(positions, comm_range: float) -> CommGraph:
    """Edge (i,j) iff Euclidean distance <= comm_range, i != j."""
    if comm_range <= 0:
        raise ConfigError(f"comm_range must be positive, got {comm_range}")
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    g = CommGraph(n)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        d = np.linalg.norm(pos - pos[i], axis=1)
        within = d <= comm_range
        within[i] = False
        adj[i] = within
    adj = adj | adj.T  # guard against asymmetric float comparisons
    adj.setflags(write=False)
    g.adj = adj
    return g


def average_node_degree(g: CommGraph) -> float:
    """Mean over agents of |N^i| - 1 (self excluded from the reported degree)."""
    return float(np.mean([g.degree(i) - 1 for i in range(g.n)]))


def gossip_average(values, g: CommGraph, rounds: int,
                   weights: np.ndarray | None = None) -> np.ndarray:
    """Iterate x <- Cx for `rounds` rounds with the consensus weights of g.

    Implemented in delta form x_i + sum_j c_ij (x_j - x_i) so a vector of
    identical values is a bit-exact fixed point.
    """
    x = np.asarray(values, dtype=np.float64).copy()
    if x.shape != (g.n,):
        raise ConfigError(f"values shape {x.shape} does not match n={g.n}")
    C = consensus_weights(g) if weights is None else weights
    for _ in range(rounds):
        diffs = x[None, :] - x[:, None]  # diffs[i, j] = x_j - x_i
        x = x + (C * diffs).sum(axis=1)
    return x


def exact_average(values) -> float:
    """The arithmetic mean: the simulator-side oracle for the gossip limit on
    regular graphs (and the team-reward definition)."""
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def gossip_limit(values, g: CommGraph) -> np.ndarray:
    """Fixed point of x <- Cx on a connected graph.

    The walk over inclusive neighborhoods has the degree-proportional
    stationary distribution pi_i = |N^i| / sum_k |N^k|, so the limit is the
    degree-weighted average of the inputs (uniform mean on regular graphs).
    """
    x = np.asarray(values, dtype=np.float64)
    deg = np.array([g.degree(i) for i in range(g.n)], dtype=np.float64)
    pi = deg / deg.sum()
    return np.full(g.n, float(pi @ x))


# ---------------------------------------------------------------- edge-list IO

def to_edgelist_text(g: CommGraph) -> str:
    """First line n, then one `i j` pair per line."""
    lines = [str(g.n)]
    lines += [f"{i} {j}" for i, j in g.edges()]
    return "\n".join(lines) + "\n"


def from_edgelist_text(text: str) -> CommGraph:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("empty edge-list text")
    try:
        n = int(lines[0])
        edges = []
        for ln in lines[1:]:
            i, j = ln.split()
            edges.append((int(i), int(j)))
    except ValueError as e:
        raise ConfigError(f"bad edge-list line: {e}") from e
    return CommGraph(n, edges)


# ---------------------------------------------------------------- constructors

def ring_graph(n: int) -> CommGraph:
    return CommGraph(n, [(i, (i + 1) % n) for i in range(n)] if n > 2 else ([(0, 1)] if n == 2 else []))

def chain_graph(n: int) -> CommGraph:
    return CommGraph(n, [(i, i + 1) for i in range(n - 1)])

def complete_graph(n: int) -> CommGraph:
    return CommGraph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])
