"""Closed-form communication cost and transmission-energy calculators.

Scalar counts use inclusive neighborhood sizes (self included), matching the
consensus-weight convention; transmission energy ignores self-loops because
no radio transmission happens to oneself. Costs are measured in transmitted
scalars with every scalar counted the same across methods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class CostParams:
    """Symbol bag for the cost and energy formulas.

    Per-agent lists must have length n; `degrees` are inclusive neighborhood
    sizes |N^i|; `hops_to_center` are the multi-hop route lengths K^i to the
    central sink.
    """

    n: int
    obs_sizes: list[int]
    act_sizes: list[int]
    feat_size: int = 0                 # |h|
    param_size: int = 0                # |psi|
    hops: int = 0                      # K
    degrees: list[int] = field(default_factory=list)
    hops_to_center: list[int] = field(default_factory=list)
    bits: float = 1.0                  # b, per transmitted payload
    bits_per_agent: list[float] = field(default_factory=list)
    distances: np.ndarray | None = None       # pairwise d_ij
    center_distances: list[float] = field(default_factory=list)
    alpha: float = 2.0                 # path-loss exponent
    comm_radius: float | None = None   # optional neighbor-distance contract

    def validate(self) -> "CostParams":
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if len(self.obs_sizes) != self.n or len(self.act_sizes) != self.n:
            raise ConfigError("obs_sizes/act_sizes must have length n")
        if not (2.0 <= self.alpha <= 4.0):
            raise ConfigError(f"path-loss exponent must be in [2,4], got {self.alpha}")
        return self

    @classmethod
    def homogeneous(cls, n: int, obs_size: int, act_size: int, **kw) -> "CostParams":
        return cls(n=n, obs_sizes=[obs_size] * n, act_sizes=[act_size] * n, **kw).validate()


def worst_case_line_hops(n: int) -> list[int]:
    """Hop counts on a 1-D line with the central sink at node 0: K^i = i."""
    return list(range(n))


def path_degrees(n: int) -> list[int]:
    """Inclusive neighborhood sizes on a path graph."""
    if n == 1:
        return [1]
    return [2] + [3] * (n - 2) + [2]


def ring_degrees(n: int) -> list[int]:
    """Inclusive neighborhood sizes on a ring (n >= 3)."""
    if n < 3:
        return path_degrees(n)
    return [3] * n


# ------------------------------------------------------------- scalar counts

def ctde_train_cost(p: CostParams) -> int:
    """Single-hop gather to the central learner: sum_i (|O^i| + |A^i|)."""
    return int(sum(o + a for o, a in zip(p.obs_sizes, p.act_sizes)))


def ctde_multihop_cost(p: CostParams) -> int:
    """Multi-hop routed gather: sum_i K^i (|O^i| + |A^i|)."""
    if len(p.hops_to_center) != p.n:
        raise ConfigError("hops_to_center must have length n")
    return int(sum(k * (o + a)
                   for k, o, a in zip(p.hops_to_center, p.obs_sizes, p.act_sizes)))


def dg_mp_cost(p: CostParams) -> int:
    """K-hop message passing: K * sum_i |N^i| * |h|."""
    if len(p.degrees) != p.n:
        raise ConfigError("degrees must have length n")
    return int(p.hops * sum(p.degrees) * p.feat_size)


def dg_param_cost(p: CostParams) -> int:
    """One neighbor-averaging round: sum_i |N^i| * |psi|."""
    if len(p.degrees) != p.n:
        raise ConfigError("degrees must have length n")
    return int(sum(p.degrees) * p.param_size)


def dg_total_cost(p: CostParams) -> int:
    """Message passing plus parameter averaging."""
    return dg_mp_cost(p) + dg_param_cost(p)


# ------------------------------------------------------------------- energy

def tx_energy(bits: float, distance: float, alpha: float) -> float:
    """Energy to transmit `bits` over `distance`: b * d^alpha."""
    if not (2.0 <= alpha <= 4.0):
        raise ConfigError(f"path-loss exponent must be in [2,4], got {alpha}")
    if bits < 0 or distance < 0:
        raise ConfigError("bits and distance must be non-negative")
    return bits * distance ** alpha


def ctde_energy(p: CostParams) -> float:
    """Per-update energy of the gather: sum_i b_i * d_{i,center}^alpha."""
    if len(p.center_distances) != p.n:
        raise ConfigError("center_distances must have length n")
    bits = p.bits_per_agent if p.bits_per_agent else [p.bits] * p.n
    return float(sum(tx_energy(b, d, p.alpha) for b, d in zip(bits, p.center_distances)))


def dg_energy(p: CostParams, halve_double_counting: bool = False) -> float:
    """Per-round neighbor-exchange energy: sum_i sum_{j in N^i, j != i} b d_ij^alpha.

    Each undirected edge is counted twice (both directions transmit); pass
    halve_double_counting=True to report per physical edge instead. Self-loops
    cost nothing. Neighbor distances above the comm radius violate the
    radius-graph contract and are rejected.
    """
    if p.distances is None:
        raise ConfigError("dg_energy requires the pairwise distance matrix")
    D = np.asarray(p.distances, dtype=np.float64)
    if D.shape != (p.n, p.n):
        raise ConfigError(f"distances shape {D.shape} != ({p.n},{p.n})")
    total = 0.0
    for i in range(p.n):
        for j in _neighbor_ids(p, i):
            if j == i:
                continue
            if p.comm_radius is not None and D[i, j] > p.comm_radius:
                raise ConfigError(
                    f"neighbor distance d({i},{j})={D[i, j]} exceeds comm radius "
                    f"{p.comm_radius}")
            total += tx_energy(p.bits, float(D[i, j]), p.alpha)
    return total / 2.0 if halve_double_counting else total


def _neighbor_ids(p: CostParams, i: int) -> list[int]:
    """Neighbor ids, preferring an explicit adjacency over degree lists."""
    if getattr(p, "adjacency", None) is not None:
        return [j for j in range(p.n) if p.adjacency[i][j] or j == i]
    raise ConfigError("dg_energy requires adjacency (set via with_graph)")


def with_graph(p: CostParams, graph) -> CostParams:
    """Bind a CommGraph: fills inclusive degrees and adjacency."""
    p.degrees = [graph.degree(i) for i in range(p.n)]
    p.adjacency = graph.adj  # type: ignore[attr-defined]
    return p


# ---------------------------------------------------------------- sweep + fits

#: Sizes for the scaling figure. One transmitted scalar costs the same in
#: every method; feature embeddings are narrower than raw observation+action
#: payloads, and parameter averaging is amortized over the steps between
#: update barriers.
FIGURE_PRESET = {
    "obs_size": 32,
    "act_size": 4,
    "feat_size": 8,
    "param_size": 1000,
    "param_update_interval": 500,
}


@dataclass
class SweepRow:
    method: str
    n: int
    hops: int
    cost: float
    energy: float


def cost_sweep(n_values, preset: dict | None = None) -> list[SweepRow]:
    """Per-step training-communication cost curves versus team size.

    Methods: single-hop CTDE, worst-case multi-hop CTDE (1-D line, sink at
    one end), and the distributed learner with K = N/2 hops on the same line
    (bounded degree), with parameter averaging amortized over the update
    interval. Energy columns use unit-spaced ring layouts (neighbors at
    constant distance) for the distributed method and the line layout for
    the centralized ones.
    """
    ps = dict(FIGURE_PRESET)
    if preset:
        ps.update(preset)
    rows = []
    for n in n_values:
        if n < 2:
            raise ConfigError(f"sweep needs n >= 2, got {n}")
        o, a = ps["obs_size"], ps["act_size"]
        line_pos = [float(i) for i in range(n)]  # unit spacing, sink at node 0
        # single-hop CTDE
        p = CostParams.homogeneous(n, o, a, center_distances=line_pos, alpha=2.0)
        rows.append(SweepRow("ctde", n, 1, float(ctde_train_cost(p)), ctde_energy(p)))
        # worst-case multi-hop CTDE on the line
        p = CostParams.homogeneous(n, o, a, hops_to_center=worst_case_line_hops(n),
                                   center_distances=line_pos, alpha=2.0)
        rows.append(SweepRow("ctde_multihop", n, max(worst_case_line_hops(n)),
                             float(ctde_multihop_cost(p)), ctde_energy(p)))
        # distributed: K = N/2 on the same bounded-degree line
        K = max(1, n // 2)
        p = CostParams.homogeneous(n, o, a, feat_size=ps["feat_size"],
                                   param_size=ps["param_size"], hops=K,
                                   degrees=path_degrees(n), alpha=2.0)
        cost = dg_mp_cost(p) + dg_param_cost(p) / ps["param_update_interval"]
        ring = _ring_layout_params(n, ps["feat_size"])
        rows.append(SweepRow("dg", n, K, float(cost), dg_energy(ring)))
    return rows


def _ring_layout_params(n: int, bits: float) -> CostParams:
    """Agents on a circle with unit neighbor spacing; ring adjacency."""
    from .commgraph import ring_graph
    radius = n / (2.0 * math.pi)
    angles = 2.0 * math.pi * np.arange(n) / n
    pos = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    D = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    p = CostParams.homogeneous(n, 1, 1, bits=bits, distances=D, alpha=2.0)
    return with_graph(p, ring_graph(n))


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def sweep_to_csv(rows: list[SweepRow]) -> str:
    lines = ["method,N,K,cost,energy"]
    for r in rows:
        lines.append(f"{r.method},{r.n},{r.hops},{r.cost!r},{r.energy!r}")
    return "\n".join(lines) + "\n"


DEFAULT_SWEEP_N = [8, 10, 12, 16, 20, 24, 32, 40, 48, 64, 80, 96, 112, 128]
