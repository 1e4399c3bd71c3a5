"""Per-agent graph-attention stacks for K-hop message passing.

Each agent owns its attention parameters: one encoder mapping its raw
observation into the shared feature space, plus one (W, q) attention layer
per hop. A hop scores each inclusive neighbor j via q . leaky_relu(W [h_i||h_j]),
normalizes the scores over the neighborhood, and aggregates the neighbors'
raw features through tanh.

Two forward paths exist and produce bit-identical values:
  * `multihop_forward` runs all agents jointly without a tape (rollout,
    metrics, locality tests) and records the per-hop message arrays;
  * `chain_forward` replays one agent's own chain on a tape, treating the
    stored neighbor messages as constants, so gradients stay strictly local.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .commgraph import CommGraph
from .diffcore import Tape, Tensor, accum
from .errors import ConfigError

LEAKY_SLOPE = 0.2

AGGREGATIONS = ("attention", "mean")
NORMALIZATIONS = ("softmax", "softplus")


@dataclass
class DgatLayerParams:
    """One hop's attention parameters: W (attn_dim x 2*feat_dim), q (attn_dim)."""

    W: Tensor
    q: Tensor


class DgatStack:
    """Agent-local attention stack: encoder + one layer per hop."""

    def __init__(self, agent_id: int, obs_dim: int, feat_dim: int, attn_dim: int,
                 hops: int, rng: np.random.Generator, share_layers: bool = False):
        if hops < 0:
            raise ConfigError(f"hops must be >= 0, got {hops}")
        self.agent_id = agent_id
        self.obs_dim = obs_dim
        self.feat_dim = feat_dim
        self.attn_dim = attn_dim
        self.hops = hops
        self.share_layers = share_layers
        tag = f"agent{agent_id}.dgat"
        self.enc_W = dc.param(_uniform(rng, (feat_dim, obs_dim), obs_dim), f"{tag}.enc_W")
        self.enc_b = dc.param(np.zeros(feat_dim), f"{tag}.enc_b")
        n_layers = 1 if (share_layers and hops > 0) else hops
        self.layers = [
            DgatLayerParams(
                W=dc.param(_uniform(rng, (attn_dim, 2 * feat_dim), 2 * feat_dim), f"{tag}.W{k}"),
                q=dc.param(_uniform(rng, (attn_dim,), attn_dim), f"{tag}.q{k}"),
            )
            for k in range(n_layers)
        ]

    def layer(self, k: int) -> DgatLayerParams:
        return self.layers[0] if self.share_layers else self.layers[k]

    def params(self) -> list[Tensor]:
        out = [self.enc_W, self.enc_b]
        for lp in self.layers:
            out.extend([lp.W, lp.q])
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def shapes(self) -> list[tuple[str, list[int]]]:
        return [(p.name.split(".")[-1], list(p.data.shape)) for p in self.params()]


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------- value kernels
# Shared by the joint no-tape path and the taped per-agent path so both
# produce bit-identical features.

def _scores_np(W: np.ndarray, q: np.ndarray, h_i: np.ndarray, feats: np.ndarray):
    m = feats.shape[0]
    X = np.empty((m, 2 * h_i.shape[0]))
    X[:, : h_i.shape[0]] = h_i
    X[:, h_i.shape[0]:] = feats
    A = X @ W.T
    L = np.where(A >= 0.0, A, LEAKY_SLOPE * A)
    return X, A, L, L @ q


def _normalize_np(s: np.ndarray, normalization: str) -> np.ndarray:
    if normalization == "softmax":
        z = np.exp(s - s.max())
        return z / z.sum()
    if normalization == "softplus":
        v = np.logaddexp(0.0, s)
        return v / v.sum()
    raise ConfigError(f"unknown normalization {normalization!r}")


def _hop_out_np(alpha: np.ndarray, feats: np.ndarray) -> np.ndarray:
    return np.tanh(feats.T @ alpha)


# ------------------------------------------------------------------ operations

def encode(o, stack: DgatStack, tape: Tape | None = None) -> Tensor:
    """Project a raw observation into the shared feature space (hop-0 input)."""
    od = o.data if isinstance(o, Tensor) else np.asarray(o, dtype=np.float64)
    if od.shape != (stack.obs_dim,):
        raise ConfigError(
            f"agent {stack.agent_id}: observation dim {od.shape} != ({stack.obs_dim},)")
    return dc.linear(o if isinstance(o, Tensor) else od, stack.enc_W, stack.enc_b, tape)


def encode_np(stack: DgatStack, o: np.ndarray) -> np.ndarray:
    if o.shape != (stack.obs_dim,):
        raise ConfigError(
            f"agent {stack.agent_id}: observation dim {o.shape} != ({stack.obs_dim},)")
    return stack.enc_W.data @ o + stack.enc_b.data


def attention_score(stack: DgatStack, k: int, h_i, h_j, tape: Tape | None = None) -> Tensor:
    """Importance of neighbor j to agent i at hop k:
    q . leaky_relu(W [h_i || h_j])."""
    lp = stack.layer(k)
    x = dc.concat(h_i, h_j, tape)
    zero_b = np.zeros(stack.attn_dim)
    pre = dc.linear(x, lp.W, zero_b, tape)
    return dc.dot(lp.q, dc.leaky_relu(pre, LEAKY_SLOPE, tape), tape)


def attention_weights(stack: DgatStack, k: int, h_i: np.ndarray, feats: np.ndarray,
                      aggregation: str = "attention",
                      normalization: str = "softmax") -> np.ndarray:
    """Normalized weights over the inclusive neighborhood (no tape)."""
    m = feats.shape[0]
    if aggregation == "mean":
        return np.full(m, 1.0 / m)
    lp = stack.layer(k)
    _, _, _, s = _scores_np(lp.W.data, lp.q.data, h_i, feats)
    return _normalize_np(s, normalization)


def layer_forward(stacks: list[DgatStack], k: int, messages: np.ndarray, graph: CommGraph,
                  aggregation: str = "attention", normalization: str = "softmax"):
    """One synchronous hop for all agents.

    `messages` is the (n, feat_dim) array of hop-k features; returns the
    hop-(k+1) array plus each agent's attention weights over its neighborhood.
    """
    n = graph.n
    if len(stacks) != n or messages.shape[0] != n:
        raise ConfigError("layer_forward: stacks/messages/graph sizes disagree")
    out = np.empty_like(messages)
    alphas = []
    for i in range(n):
        ns = graph.neighbors(i)
        feats = messages[ns]
        alpha = attention_weights(stacks[i], k, messages[i], feats, aggregation, normalization)
        out[i] = _hop_out_np(alpha, feats)
        alphas.append(alpha)
    return out, alphas


@dataclass
class MultiHopResult:
    """Joint forward output: final features plus everything the update and
    the metrics need."""

    features: np.ndarray                 # (n, feat_dim) = per-agent inferred-global features
    hop_inputs: list[np.ndarray]         # hop k's input messages, len K
    attention_entropy: float             # mean over agents and hops
    communication_free: bool = False     # K = 0 ablation mode
    alphas: list[list[np.ndarray]] = field(default_factory=list)


def multihop_forward(stacks: list[DgatStack], obs: list[np.ndarray], graph: CommGraph,
                     hops: int | None = None, aggregation: str = "attention",
                     normalization: str = "softmax") -> MultiHopResult:
    """Encode all observations and run K synchronous hops.

    K = 0 returns the encoded features directly (communication-free mode,
    flagged in the result).
    """
    n = graph.n
    if len(stacks) != n or len(obs) != n:
        raise ConfigError("multihop_forward: stacks/obs/graph sizes disagree")
    K = stacks[0].hops if hops is None else hops
    h = np.stack([encode_np(stacks[i], obs[i]) for i in range(n)])
    if K == 0:
        return MultiHopResult(features=h, hop_inputs=[], attention_entropy=0.0,
                              communication_free=True)
    hop_inputs = []
    entropies = []
    all_alphas = []
    for k in range(K):
        hop_inputs.append(h)
        h, alphas = layer_forward(stacks, k, h, graph, aggregation, normalization)
        for a in alphas:
            entropies.append(-float(a @ np.log(np.maximum(a, 1e-300))))
        all_alphas.append(alphas)
    return MultiHopResult(features=h, hop_inputs=hop_inputs,
                          attention_entropy=float(np.mean(entropies)),
                          alphas=all_alphas)


def hop_forward_taped(tape: Tape, stack: DgatStack, k: int, h_i: Tensor,
                      neighbor_feats: np.ndarray, self_pos: int,
                      aggregation: str = "attention",
                      normalization: str = "softmax") -> Tensor:
    """One hop of one agent's own chain as a single fused tape node.

    `neighbor_feats` holds the inclusive neighborhood's hop-k features in
    ascending id order; row `self_pos` is replaced by the live value of h_i
    so the gradient flows through the agent's own chain only.
    """
    lp = stack.layer(k)
    d = stack.feat_dim
    feats = np.array(neighbor_feats)
    feats[self_pos] = h_i.data
    m = feats.shape[0]

    if aggregation == "mean":
        alpha = np.full(m, 1.0 / m)
        X = A = L = s = None
    else:
        X, A, L, s = _scores_np(lp.W.data, lp.q.data, h_i.data, feats)
        alpha = _normalize_np(s, normalization)
    u = feats.T @ alpha
    y = np.tanh(u)
    out = Tensor(y)
    if tape is None:
        return out

    Wd, qd = lp.W.data, lp.q.data

    def bw(gy):
        gu = gy * (1.0 - y * y)
        galpha = feats @ gu
        gh = alpha[self_pos] * gu  # aggregation term through the live self row
        if aggregation != "mean":
            if normalization == "softmax":
                gs = alpha * (galpha - float(alpha @ galpha))
            else:
                S = np.logaddexp(0.0, s).sum()
                gv = (galpha - float(galpha @ alpha)) / S
                gs = gv / (1.0 + np.exp(-s))  # d softplus = sigmoid
            gq = L.T @ gs
            gL = gs[:, None] * qd[None, :]
            gA = gL * np.where(A >= 0.0, 1.0, LEAKY_SLOPE)
            gW = gA.T @ X
            gX = gA @ Wd
            gh = gh + gX[:, :d].sum(axis=0) + gX[self_pos, d:]
            accum(lp.W, gW)
            accum(lp.q, gq)
        accum(h_i, gh)

    tape.record(out, bw)
    return out


def chain_forward(tape: Tape | None, stack: DgatStack, own_obs: np.ndarray,
                  hop_feats: list[np.ndarray], self_positions: list[int],
                  aggregation: str = "attention",
                  normalization: str = "softmax") -> Tensor:
    """Replay one agent's K-hop chain on a tape.

    hop_feats[k] is the (m_k, feat_dim) matrix of stored hop-k messages from
    the inclusive neighborhood (constants); self_positions[k] locates the
    agent's own row, which is substituted with the live chain value.
    """
    h = encode(own_obs, stack, tape)
    for k, (feats, pos) in enumerate(zip(hop_feats, self_positions)):
        h = hop_forward_taped(tape, stack, k, h, feats, pos, aggregation, normalization)
    return h


def consensus_loss(outputs: np.ndarray, graph: CommGraph, alpha: float) -> np.ndarray:
    """Per-agent consensus losses on current outputs:
    L^i = alpha / |N^i| * sum_{j in N^i} MSE(out_i, out_j)."""
    n = graph.n
    losses = np.zeros(n)
    if alpha == 0.0:
        return losses
    d = outputs.shape[1]
    for i in range(n):
        ns = graph.neighbors(i)
        total = 0.0
        for j in ns:
            diff = outputs[i] - outputs[j]
            total += float(diff @ diff) / d
        losses[i] = alpha * total / len(ns)
    return losses


def consensus_loss_term(tape: Tape | None, own_output: Tensor,
                        neighbor_outputs: list[np.ndarray], neighborhood_size: int,
                        alpha: float) -> Tensor:
    """One agent's consensus loss with neighbor outputs held constant.

    The self term of the neighborhood sum is identically zero on current
    outputs and carries no gradient, so only the stored non-self outputs
    appear; the divisor still counts the full inclusive neighborhood.
    """
    if alpha == 0.0 or not neighbor_outputs:
        return Tensor(np.asarray(0.0))
    nb = np.stack(neighbor_outputs)
    diffs = own_output.data[None, :] - nb
    d = diffs.shape[1]
    coef = alpha / neighborhood_size
    out = Tensor(np.asarray(coef * float((diffs * diffs).sum()) / d))
    if tape is not None:
        def bw(g, own_output=own_output, diffs=diffs, coef=coef, d=d):
            accum(own_output, (2.0 * coef * float(g) / d) * diffs.sum(axis=0))
        tape.record(out, bw)
    return out


def dsgd_average(stacks: list[DgatStack], weights: np.ndarray) -> None:
    """Barrier-style neighbor averaging of all attention-stack parameters.

    new_i = p_i + sum_j c(i,j) (p_j - p_i), evaluated from a snapshot of every
    stack (all local steps complete first), then assigned. The delta form
    keeps identical parameters a bit-exact fixed point. Policy and value
    parameters are never touched here.
    """
    n = len(stacks)
    if weights.shape != (n, n):
        raise ConfigError(f"weights shape {weights.shape} != ({n},{n})")
    ref = [(p.name.split(".")[-1], p.data.shape) for p in stacks[0].params()]
    per_stack = []
    for st in stacks:
        ps = st.params()
        sig = [(p.name.split(".")[-1], p.data.shape) for p in ps]
        if sig != ref:
            raise ConfigError(
                f"agent {st.agent_id}: stack shapes {sig} differ from agent "
                f"{stacks[0].agent_id}: {ref}")
        per_stack.append(ps)
    n_params = len(ref)
    snapshot = [[per_stack[i][s].data for i in range(n)] for s in range(n_params)]
    for s in range(n_params):
        vals = snapshot[s]
        for i in range(n):
            acc = np.zeros_like(vals[i])
            for j in range(n):
                cij = weights[i, j]
                if cij != 0.0 and j != i:
                    acc += cij * (vals[j] - vals[i])
            per_stack[i][s].data = vals[i] + acc


def stack_spread(stacks: list[DgatStack]) -> float:
    """Max over parameters of the max pairwise entry gap across agents."""
    worst = 0.0
    n_params = len(stacks[0].params())
    allp = [st.params() for st in stacks]
    for s in range(n_params):
        stackvals = np.stack([allp[i][s].data for i in range(len(stacks))])
        worst = max(worst, float((stackvals.max(axis=0) - stackvals.min(axis=0)).max()))
    return worst
