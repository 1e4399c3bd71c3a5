"""Per-agent actor-critic on augmented observations.

Each agent owns a discrete policy and a scalar value head over
[local observation || inferred-global feature], a rollout buffer, and one
Adam optimizer spanning its full parameter set (attention stack included)
so gradient clipping is a per-agent global norm. Nothing here ever reads
another agent's parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dgat as dg
from . import diffcore as dc
from .diffcore import Tape, Tensor, accum
from .errors import ConfigError, UsageError


@dataclass
class PpoConfig:
    """Clipped-surrogate PPO settings."""

    clip_eps: float = 0.2
    gamma: float = 0.98
    gae_lambda: float = 0.95
    epochs: int = 5
    batch_size: int = 0          # 0 = one minibatch over the whole buffer
    entropy_coeff: float = 0.001
    huber: bool = True
    huber_delta: float = 10.0
    lr: float = 5e-4

    def validate(self) -> "PpoConfig":
        if not (0.0 < self.clip_eps < 1.0):
            raise ConfigError(f"clip_eps must be in (0,1), got {self.clip_eps}")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError(f"gamma must be in [0,1), got {self.gamma}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError(f"gae_lambda must be in [0,1], got {self.gae_lambda}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        return self


class Mlp:
    """Small tanh MLP; the output layer is linear with optional init gain."""

    def __init__(self, dims: list[int], rng: np.random.Generator,
                 out_gain: float = 1.0, name: str = "mlp"):
        if len(dims) < 2:
            raise ConfigError("Mlp needs at least input and output dims")
        self.dims = list(dims)
        self.name = name
        self.weights = []
        self.biases = []
        last = len(dims) - 2
        for layer, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            gain = out_gain if layer == last else 1.0
            self.weights.append(dc.param(dg._uniform(rng, (dout, din), din, gain),
                                         f"{name}.W{layer}"))
            self.biases.append(dc.param(np.zeros(dout), f"{name}.b{layer}"))

    def params(self) -> list[Tensor]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        h = x
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = W.data @ h + b.data
            if layer != last:
                h = np.tanh(h)
        return h

    def forward(self, x, tape: Tape | None = None) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = dc.linear(h, W, b, tape)
            if layer != last:
                h = dc.tanh(h, tape)
        return h

    def forward_split(self, const_prefix: np.ndarray, live,
                      tape: Tape | None = None) -> Tensor:
        """Whole-MLP forward as one fused tape node.

        Input is [const_prefix || live]; `live` (a Tensor or None) receives
        the input gradient for its slice. Matches forward_np bitwise because
        the concatenated input goes through the same matmul order.
        """
        if live is None:
            x = const_prefix
        else:
            x = np.concatenate([const_prefix, live.data])
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = W.data @ h + b.data
            if layer != last:
                h = np.tanh(h)
            acts.append(h)
        out = Tensor(h)
        if tape is None:
            return out
        weights, biases = self.weights, self.biases
        n_prefix = const_prefix.shape[0]

        def bw(g):
            for layer in range(last, -1, -1):
                h_in = acts[layer]
                accum(weights[layer], g[:, None] * h_in[None, :])
                accum(biases[layer], g)
                if layer > 0:
                    g = weights[layer].data.T @ g
                    g = g * (1.0 - h_in * h_in)
                elif live is not None:
                    accum(live, (weights[0].data.T @ g)[n_prefix:])

        tape.record(out, bw)
        return out

    def shapes(self):
        return [(p.name.split(".")[-1], list(p.data.shape)) for p in self.params()]


class AgentNets:
    """Policy and value networks of one agent."""

    def __init__(self, input_dim: int, n_actions: int, hidden_dim: int,
                 rng: np.random.Generator, agent_id: int = 0,
                 value_input_dim: int | None = None):
        self.input_dim = input_dim
        self.n_actions = n_actions
        vin = input_dim if value_input_dim is None else value_input_dim
        self.value_input_dim = vin
        self.policy = Mlp([input_dim, hidden_dim, hidden_dim, n_actions], rng,
                          out_gain=0.01, name=f"agent{agent_id}.policy")
        self.value = Mlp([vin, hidden_dim, hidden_dim, 1], rng,
                         name=f"agent{agent_id}.value")

    def params(self) -> list[Tensor]:
        return self.policy.params() + self.value.params()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def sample_action(nets: AgentNets, o_tilde: np.ndarray, rng: np.random.Generator):
    """Sample from softmax(logits); returns (action, logp)."""
    logits = nets.policy.forward_np(o_tilde)
    logp = _log_softmax(logits)
    p = np.exp(logp)
    r = rng.random()
    a = int(np.searchsorted(np.cumsum(p), r, side="right"))
    a = min(a, nets.n_actions - 1)
    return a, float(logp[a])


def act(nets: AgentNets, o_tilde: np.ndarray, rng: np.random.Generator):
    """Sample an action from softmax(logits); returns (action, logp, value)."""
    a, logp = sample_action(nets, o_tilde, rng)
    v = float(nets.value.forward_np(o_tilde)[0])
    return a, logp, v


def act_greedy(nets: AgentNets, o_tilde: np.ndarray) -> int:
    return int(np.argmax(nets.policy.forward_np(o_tilde)))


# ----------------------------------------------------------------- rollout data

@dataclass
class Step:
    obs: np.ndarray            # o^i
    feature: np.ndarray        # rollout-time inferred-global feature
    action: int
    logp: float
    reward: float              # averaged team reward
    value: float
    done: bool
    ctx: dict = field(default_factory=dict)  # trainer-side replay context


class RolloutBuffer:
    """Complete-episode trajectory storage for one agent.

    Episodes carry a bootstrap value: 0 for true terminals (task success),
    V(final observation) for time-limit cutoffs, so the advantage estimator
    does not treat running out of time as reaching an absorbing state.
    """

    def __init__(self):
        self.steps: list[Step] = []
        self.episodes: list[tuple[int, int, float]] = []
        self._open_start: int | None = None

    def add(self, step: Step) -> None:
        if self._open_start is None:
            self._open_start = len(self.steps)
        self.steps.append(step)

    def finish_episode(self, bootstrap_value: float = 0.0) -> None:
        if self._open_start is None:
            raise UsageError("finish_episode with no open episode")
        self.episodes.append((self._open_start, len(self.steps), float(bootstrap_value)))
        self._open_start = None

    def __len__(self):
        return len(self.steps)

    def clear(self) -> None:
        self.steps.clear()
        self.episodes.clear()
        self._open_start = None


def gae_episode(rewards, values, dones, gamma: float, lam: float,
                bootstrap_value: float = 0.0):
    """GAE over one episode: delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t,
    A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}; returns (advantages, A+V)."""
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        v_next = bootstrap_value if t == T - 1 else values[t + 1]
        delta = rewards[t] + gamma * v_next * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + np.asarray(values, dtype=np.float64)


def gae(buffer: RolloutBuffer, gamma: float, lam: float,
        bootstrap_value: float | None = None):
    """Per-step advantages and return targets over all complete episodes,
    aligned with buffer.steps. Uses each episode's stored bootstrap value
    unless an explicit override is given."""
    if not buffer.episodes:
        raise UsageError("gae requires at least one complete episode")
    adv = np.zeros(len(buffer.steps))
    ret = np.zeros(len(buffer.steps))
    for start, end, boot in buffer.episodes:
        chunk = buffer.steps[start:end]
        b = boot if bootstrap_value is None else bootstrap_value
        a, r = gae_episode([s.reward for s in chunk], [s.value for s in chunk],
                           [s.done for s in chunk], gamma, lam, b)
        adv[start:end] = a
        ret[start:end] = r
    return adv, ret


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Minibatch advantage normalization (mean 0, std 1)."""
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# --------------------------------------------------------------------- losses

def _head_forward(mlp: Mlp, x, tape: Tape | None) -> Tensor:
    """Run an MLP on a plain input vector or on a (const_prefix, live) pair."""
    if isinstance(x, tuple):
        return mlp.forward_split(x[0], x[1], tape)
    return mlp.forward(x, tape)


def ppo_policy_loss(tape: Tape | None, nets: AgentNets, inputs: list,
                    actions, logp_old, advantages, cfg: PpoConfig) -> Tensor:
    """Clipped-surrogate policy loss with entropy bonus over one minibatch.

    Each input is a plain vector (constant or live) or a (const_prefix, live)
    pair; `advantages` must already be normalized. Raises on non-finite ratios.
    """
    n = len(inputs)
    surr = []
    ents = []
    for x, a, lp_old, adv in zip(inputs, actions, logp_old, advantages):
        logits = _head_forward(nets.policy, x, tape)
        lp = dc.logprob_categorical(logits, int(a), tape)
        if not np.isfinite(float(lp.data) - lp_old):
            raise UsageError(
                f"non-finite policy ratio: logp_new={float(lp.data)}, logp_old={lp_old}")
        surr.append(dc.ppo_surrogate(lp, float(lp_old), float(adv), cfg.clip_eps, tape))
        ents.append(dc.entropy_categorical(logits, tape))
    loss = dc.scale(dc.sum_list(surr, tape), 1.0 / n, tape)
    bonus = dc.scale(dc.sum_list(ents, tape), -cfg.entropy_coeff / n, tape)
    return dc.add(loss, bonus, tape)


def critic_loss(tape: Tape | None, nets: AgentNets, inputs: list, targets,
                cfg: PpoConfig) -> Tensor:
    """Mean per-step Huber (or squared) error between V and return targets."""
    n = len(inputs)
    terms = []
    for x, tgt in zip(inputs, targets):
        v = dc.index(_head_forward(nets.value, x, tape), 0, tape)
        if cfg.huber:
            terms.append(dc.huber_scalar(v, float(tgt), cfg.huber_delta, tape))
        else:
            terms.append(dc.squared_scalar(v, float(tgt), tape))
    return dc.scale(dc.sum_list(terms, tape), 1.0 / n, tape)


# ---------------------------------------------------------------------- agent

@dataclass
class UpdateConfig:
    """Everything local_update needs beyond the PPO settings."""

    ppo: PpoConfig
    alpha_consensus: float = 0.0
    aggregation: str = "attention"
    normalization: str = "softmax"
    use_consensus: bool = True
    critic_on_joint_obs: bool = False   # centralized-critic reference mode


class Agent:
    """Single-owner bundle: attention stack, nets, optimizer, RNG streams."""

    def __init__(self, agent_id: int, obs_dim: int, n_actions: int, feat_dim: int,
                 attn_dim: int, hops: int, hidden_dim: int,
                 rng: np.random.Generator, act_seed, shuffle_seed,
                 share_layers: bool = False, joint_obs_dim: int | None = None):
        self.id = agent_id
        self.obs_dim = obs_dim
        self.stack = dg.DgatStack(agent_id, obs_dim, feat_dim, attn_dim, hops, rng,
                                  share_layers=share_layers)
        self.nets = AgentNets(obs_dim + feat_dim, n_actions, hidden_dim, rng,
                              agent_id=agent_id, value_input_dim=joint_obs_dim)
        self.opt = dc.Adam(self.stack.params() + self.nets.params())
        self.act_rng = np.random.default_rng(act_seed)
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.buffer = RolloutBuffer()

    def params(self) -> list[Tensor]:
        return self.stack.params() + self.nets.params()

    def param_checksum(self) -> float:
        return float(sum(float(np.abs(p.data).sum()) for p in self.params()))


def local_update(agent: Agent, buffer: RolloutBuffer, cfg: UpdateConfig) -> dict:
    """PPO epochs over the agent's buffer: GAE, minibatched clipped-surrogate
    policy loss, Huber critic loss, and the consensus regularizer, followed by
    one Adam step per minibatch.

    The inferred-global feature is recomputed live through the agent's own
    chain from stored neighbor messages, so every loss term trains the
    attention stack while gradients stay strictly local. Policy and value
    parameters are never shared or averaged.
    """
    ppo = cfg.ppo
    if not buffer.episodes:
        raise UsageError("local_update requires a non-empty buffer")
    agent.opt.lr = ppo.lr
    adv_all, ret_all = gae(buffer, ppo.gamma, ppo.gae_lambda)
    n = len(buffer.steps)
    batch = ppo.batch_size if ppo.batch_size and ppo.batch_size > 0 else n
    report = {"policy_loss": 0.0, "value_loss": 0.0, "consensus_loss": 0.0, "batches": 0}
    for _ in range(ppo.epochs):
        perm = agent.shuffle_rng.permutation(n)
        for lo in range(0, n, batch):
            idx = perm[lo:lo + batch]
            adv = normalize_advantages(adv_all[idx])
            tape = Tape()
            pol_inputs = []
            val_inputs = []
            cons_terms = []
            for s_pos in idx:
                s = buffer.steps[s_pos]
                feat = dg.chain_forward(tape, agent.stack, s.obs,
                                        s.ctx.get("hop_feats", []),
                                        s.ctx.get("self_pos", []),
                                        aggregation=cfg.aggregation,
                                        normalization=cfg.normalization)
                pol_inputs.append((s.obs, feat))
                val_inputs.append((s.ctx["joint_obs"], None) if cfg.critic_on_joint_obs
                                  else (s.obs, feat))
                if cfg.use_consensus and cfg.alpha_consensus > 0.0:
                    cons_terms.append(dg.consensus_loss_term(
                        tape, feat, s.ctx.get("neighbor_outputs", []),
                        s.ctx.get("neighborhood_size", 1), cfg.alpha_consensus))
            actions = [buffer.steps[i].action for i in idx]
            logp_old = [buffer.steps[i].logp for i in idx]
            pol = ppo_policy_loss(tape, agent.nets, pol_inputs, actions, logp_old, adv, ppo)
            val = critic_loss(tape, agent.nets, val_inputs, ret_all[idx], ppo)
            total = dc.add(pol, val, tape)
            if cons_terms:
                cons = dc.scale(dc.sum_list(cons_terms, tape), 1.0 / len(idx), tape)
                total = dc.add(total, cons, tape)
                report["consensus_loss"] += float(cons.data)
            dc.backward(tape, total)
            agent.opt.step()
            report["policy_loss"] += float(pol.data)
            report["value_loss"] += float(val.data)
            report["batches"] += 1
    k = max(report["batches"], 1)
    return {key: (val / k if key != "batches" else val) for key, val in report.items()}
