"""Training orchestration: rollout collection, per-agent updates, neighbor
parameter averaging, evaluation, metrics, and checkpoints.

Modes:
  distributed     -- K-hop message passing feeds every agent's policy and
                     critic; consensus regularizer and neighbor parameter
                     averaging active.
  ctde_reference  -- centralized-critic baseline: every critic sees the
                     concatenated joint observation; no averaging, no
                     consensus. With hops = 0 this is plain per-agent PPO
                     with a centralized critic.
  independent     -- hops forced to 0, no averaging, no consensus.

Rollout slots are logical environments stepped sequentially in slot order,
each with its own seed stream, so results never depend on worker-thread
count. Parameter averaging and update barriers separate all mutation phases.
"""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import agent as ag
from . import commgraph as cg
from . import dgat as dg
from . import serialize as ser
from .agent import Agent, PpoConfig, Step, UpdateConfig
from .envs import EnvConfig, make_env
from .errors import CheckpointError, ConfigError
from .errors import ConnectivityError  # noqa: F401  (raised through env resets)

MODES = ("distributed", "ctde_reference", "independent")

METRICS_COLUMNS = ("step", "iteration", "mean_return", "success_rate",
                   "consensus_loss", "attention_entropy", "avg_node_degree",
                   "msgs_sent", "scalars_sent", "param_scalars_averaged", "wall_ms")


@dataclass
class NetConfig:
    feature_dim: int = 32
    attn_dim: int = 32
    hidden_dim: int = 64
    share_layers: bool = False


@dataclass
class TrainConfig:
    mode: str = "distributed"
    hops: int = -1                    # -1 resolves to the agent count
    aggregation: str = "attention"
    normalization: str = "softmax"
    alpha_consensus: float = 20.0
    rollout_threads: int = 8
    total_steps: int = 50_000
    eval_interval: int = 0            # iterations between evals; 0 = final only
    eval_episodes: int = 32
    seed: int = 0
    record_wall_time: bool = False
    ppo: PpoConfig = field(default_factory=PpoConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)

    def resolve(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.aggregation not in dg.AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.normalization not in dg.NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.rollout_threads < 1:
            raise ConfigError("rollout_threads must be >= 1")
        if self.total_steps < 0 or self.eval_episodes < 0 or self.eval_interval < 0:
            raise ConfigError("total_steps, eval_episodes, eval_interval must be >= 0")
        self.ppo.validate()
        self.env.validate()
        if self.hops < 0:
            self.hops = self.env.n_agents
        if self.mode == "independent":
            self.hops = 0
        return self

    @property
    def uses_consensus(self) -> bool:
        return self.mode == "distributed" and self.alpha_consensus > 0.0

    @property
    def uses_averaging(self) -> bool:
        return self.mode == "distributed"


def cfg_to_dict(cfg: TrainConfig) -> dict:
    return dataclasses.asdict(cfg)


def cfg_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    ppo = PpoConfig(**d.pop("ppo", {}))
    env = EnvConfig(**d.pop("env", {}))
    net = NetConfig(**d.pop("net", {}))
    try:
        return TrainConfig(ppo=ppo, env=env, net=net, **d).resolve()
    except TypeError as e:
        raise ConfigError(f"bad config field: {e}") from e


@dataclass
class EvalReport:
    episodes: int
    success_rate: float
    mean_return: float
    mean_node_degree: float


def _episode_seed(root_seed: int, slot: int, counter: int) -> int:
    return int(np.random.SeedSequence([root_seed, 7919, slot, counter]).generate_state(1)[0])


def _probe_seed(root_seed: int, slot: int) -> int:
    return int(np.random.SeedSequence([root_seed, 6133, slot]).generate_state(1)[0])


def _eval_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, 104729, episode]).generate_state(1)[0])


class Trainer:
    """Owns agents, rollout slots, counters, and the update barriers."""

    def __init__(self, cfg: TrainConfig, env_factory=None, mute_agents=frozenset()):
        self.cfg = cfg.resolve()
        factory = env_factory if env_factory is not None else (lambda: make_env(self.cfg.env))
        self.envs = [factory() for _ in range(self.cfg.rollout_threads)]
        probe = self.envs[0]
        self.n = probe.n
        self.obs_dim = probe.obs_dim
        self.n_actions = probe.n_actions
        self.mute = frozenset(mute_agents)
        joint_dim = self.n * self.obs_dim if self.cfg.mode == "ctde_reference" else None
        root = np.random.SeedSequence(self.cfg.seed)
        init_ss = root.spawn(self.n)
        act_ss = root.spawn(self.n)
        shuffle_ss = root.spawn(self.n)
        self.agents = [
            Agent(i, self.obs_dim, self.n_actions, self.cfg.net.feature_dim,
                  self.cfg.net.attn_dim, self.cfg.hops, self.cfg.net.hidden_dim,
                  np.random.default_rng(init_ss[i]), act_seed=act_ss[i],
                  shuffle_seed=shuffle_ss[i], share_layers=self.cfg.net.share_layers,
                  joint_obs_dim=joint_dim)
            for i in range(self.n)
        ]
        for a in self.agents:
            a.opt.lr = self.cfg.ppo.lr
        self.env_steps = 0
        self.iteration = 0
        self.msgs_sent = 0
        self.scalars_sent = 0
        self.param_scalars_averaged = 0
        self._episode_counters = [0] * self.cfg.rollout_threads
        self._avg_graph: cg.CommGraph | None = None
        self.last_rollout_graphs: list[cg.CommGraph] = []
        # Assumption check: every slot must produce a connected initial graph
        for slot, env in enumerate(self.envs):
            _, graph = env.reset(_probe_seed(self.cfg.seed, slot))
            if not cg.is_connected(graph):
                raise ConnectivityError(
                    f"initial communication graph of slot {slot} is disconnected; "
                    f"components: {cg.components(graph)}")

    # ------------------------------------------------------------- rollout

    def _stacks(self):
        return [a.stack for a in self.agents]

    def _forward(self, obs, graph):
        res = dg.multihop_forward(self._stacks(), obs, graph, self.cfg.hops,
                                  aggregation=self.cfg.aggregation,
                                  normalization=self.cfg.normalization)
        if self.mute:
            for m in self.mute:
                res.features[m] = 0.0
                for arr in res.hop_inputs:
                    arr[m] = 0.0
        return res

    def _communicate(self, obs, graph, stats):
        """One counted communication round: forward plus message tallies."""
        self.last_rollout_graphs.append(graph)
        res = self._forward(obs, graph)
        if not res.communication_free:
            deg_sum = sum(graph.degree(i) for i in range(self.n))
            msgs = self.cfg.hops * deg_sum
            self.msgs_sent += msgs
            self.scalars_sent += msgs * self.cfg.net.feature_dim
            stats["entropies"].append(res.attention_entropy)
        return res

    def collect_rollout(self) -> dict:
        """One episode per slot; fills every agent's buffer and tallies the
        per-step message counters on the realized graphs."""
        cfg = self.cfg
        for a in self.agents:
            a.buffer.clear()
        stats = {"returns": [], "successes": [], "end_degrees": [], "entropies": []}
        self.last_rollout_graphs = []
        for slot, env in enumerate(self.envs):
            seed = _episode_seed(cfg.seed, slot, self._episode_counters[slot])
            self._episode_counters[slot] += 1
            obs, graph = env.reset(seed)
            ep_return = 0.0
            success = False
            for _t in range(cfg.env.episode_len):
                if self.mute:
                    graph = self._muted_graph(graph)
                res = self._communicate(obs, graph, stats)
                features = res.features
                joint_obs = np.concatenate(obs) if cfg.mode == "ctde_reference" else None
                actions, logps, values = [], [], []
                for i, a in enumerate(self.agents):
                    o_tilde = np.concatenate([obs[i], features[i]])
                    act_id, logp = ag.sample_action(a.nets, o_tilde, a.act_rng)
                    v_in = joint_obs if joint_obs is not None else o_tilde
                    v = float(a.nets.value.forward_np(v_in)[0])
                    actions.append(act_id)
                    logps.append(logp)
                    values.append(v)
                step_res = env.step(actions)
                ep_return += step_res.reward
                success = bool(step_res.info.get("success", False))
                for i, a in enumerate(self.agents):
                    ns = graph.neighbors(i)
                    ctx = {
                        "hop_feats": [res.hop_inputs[k][ns] for k in range(len(res.hop_inputs))],
                        "self_pos": [ns.index(i)] * len(res.hop_inputs),
                        "neighborhood_size": len(ns),
                    }
                    if cfg.uses_consensus:
                        ctx["neighbor_outputs"] = [features[j] for j in ns if j != i]
                    if joint_obs is not None:
                        ctx["joint_obs"] = joint_obs
                    # success is the true terminal; a time-limit cutoff keeps
                    # done False so the advantage estimator bootstraps
                    a.buffer.add(Step(obs=obs[i], feature=features[i].copy(),
                                      action=actions[i], logp=logps[i],
                                      reward=step_res.reward, value=values[i],
                                      done=success, ctx=ctx))
                self.env_steps += 1
                obs = step_res.obs
                graph = env.current_graph()
                if step_res.done:
                    break
            if success:
                boots = [0.0] * self.n
            else:
                # time-limit cutoff: one more communication round on the final
                # observation yields each agent's bootstrap value
                if self.mute:
                    graph = self._muted_graph(graph)
                res = self._communicate(obs, graph, stats)
                joint_obs = np.concatenate(obs) if cfg.mode == "ctde_reference" else None
                boots = []
                for i, a in enumerate(self.agents):
                    v_in = (joint_obs if joint_obs is not None
                            else np.concatenate([obs[i], res.features[i]]))
                    boots.append(float(a.nets.value.forward_np(v_in)[0]))
            for i, a in enumerate(self.agents):
                a.buffer.finish_episode(bootstrap_value=boots[i])
            stats["returns"].append(ep_return)
            stats["successes"].append(1.0 if success else 0.0)
            stats["end_degrees"].append(cg.average_node_degree(
                self._muted_graph(graph) if self.mute else graph))
            if slot == 0:
                self._avg_graph = graph
        return stats

    def _muted_graph(self, graph: cg.CommGraph) -> cg.CommGraph:
        adj = graph.adj.copy()
        for m in self.mute:
            adj[m, :] = False
            adj[:, m] = False
        return cg.CommGraph.from_adjacency(adj)

    # -------------------------------------------------------------- update

    def train_iteration(self) -> dict:
        """Per-agent PPO updates, then one neighbor-averaging barrier over the
        attention stacks (distributed mode only)."""
        cfg = self.cfg
        ucfg = UpdateConfig(ppo=cfg.ppo, alpha_consensus=cfg.alpha_consensus,
                            aggregation=cfg.aggregation, normalization=cfg.normalization,
                            use_consensus=cfg.uses_consensus,
                            critic_on_joint_obs=(cfg.mode == "ctde_reference"))
        reports = [ag.local_update(a, a.buffer, ucfg) for a in self.agents]
        if cfg.uses_averaging and self.n > 1 and self._avg_graph is not None:
            graph = self._muted_graph(self._avg_graph) if self.mute else self._avg_graph
            weights = cg.consensus_weights(graph)
            if self.mute:
                for m in self.mute:
                    weights[:, m] = 0.0
            dg.dsgd_average(self._stacks(), weights)
            psi = self.agents[0].stack.param_count()
            self.param_scalars_averaged += sum(
                graph.degree(i) for i in range(self.n)) * psi
        out = {"policy_loss": float(np.mean([r["policy_loss"] for r in reports])),
               "value_loss": float(np.mean([r["value_loss"] for r in reports])),
               "consensus_loss": float(np.mean([r["consensus_loss"] for r in reports]))}
        return out

    # ----------------------------------------------------------------- run

    def run(self, out_dir: str) -> EvalReport:
        """Alternate collect/update until the step budget, writing one metrics
        row per iteration, periodic eval rows, and a final checkpoint."""
        cfg = self.cfg
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.csv")
        eval_path = os.path.join(out_dir, "eval.csv")
        t0 = time.monotonic()
        with open(metrics_path, "w", encoding="utf-8") as mf, \
             open(eval_path, "w", encoding="utf-8") as ef:
            mf.write(",".join(METRICS_COLUMNS) + "\n")
            ef.write("iteration,step,success_rate,mean_return,mean_node_degree\n")
            while self.env_steps < cfg.total_steps:
                stats = self.collect_rollout()
                losses = self.train_iteration()
                self.iteration += 1
                wall = int((time.monotonic() - t0) * 1000) if cfg.record_wall_time else 0
                row = (self.env_steps, self.iteration,
                       float(np.mean(stats["returns"])),
                       float(np.mean(stats["successes"])),
                       losses["consensus_loss"],
                       float(np.mean(stats["entropies"])) if stats["entropies"] else 0.0,
                       float(np.mean(stats["end_degrees"])),
                       self.msgs_sent, self.scalars_sent, self.param_scalars_averaged,
                       wall)
                mf.write(_format_row(row))
                if cfg.eval_interval and self.iteration % cfg.eval_interval == 0:
                    rep = self.evaluate(cfg.eval_episodes, cfg.seed)
                    ef.write(f"{self.iteration},{self.env_steps},{rep.success_rate!r},"
                             f"{rep.mean_return!r},{rep.mean_node_degree!r}\n")
        self.save_checkpoint(os.path.join(out_dir, "ckpt"))
        return self.evaluate(cfg.eval_episodes, cfg.seed)

    # ---------------------------------------------------------------- eval

    def evaluate(self, episodes: int, seed: int, policy=None) -> EvalReport:
        return evaluate(self.agents, self.cfg, episodes, seed, policy=policy)

    # ---------------------------------------------------------- checkpoints

    def save_checkpoint(self, ckpt_dir: str) -> None:
        os.makedirs(ckpt_dir, exist_ok=True)
        ser.write_json(os.path.join(ckpt_dir, "meta.json"), {
            "schema": "dgmarl.ckpt/1",
            "config": cfg_to_dict(self.cfg),
            "n_agents": self.n,
            "env_steps": self.env_steps,
            "iteration": self.iteration,
        })
        for a in self.agents:
            adir = os.path.join(ckpt_dir, f"agent_{a.id}")
            os.makedirs(adir, exist_ok=True)
            ser.save_arrays(os.path.join(adir, "dgat.bin"),
                            [p.data for p in a.stack.params()])
            ser.save_arrays(os.path.join(adir, "policy.bin"),
                            [p.data for p in a.nets.policy.params()])
            ser.save_arrays(os.path.join(adir, "value.bin"),
                            [p.data for p in a.nets.value.params()])
            ser.write_json(os.path.join(adir, "meta.json"), {
                "agent_id": a.id,
                "dgat": {"hops": a.stack.hops, "feat_dim": a.stack.feat_dim,
                         "attn_dim": a.stack.attn_dim, "obs_dim": a.stack.obs_dim,
                         "share_layers": a.stack.share_layers,
                         "shapes": a.stack.shapes()},
                "policy": {"dims": a.nets.policy.dims, "shapes": a.nets.policy.shapes()},
                "value": {"dims": a.nets.value.dims, "shapes": a.nets.value.shapes()},
            })


def load_checkpoint(ckpt_dir: str):
    """Rebuild (config, agents) from a checkpoint directory."""
    meta = ser.read_json(os.path.join(ckpt_dir, "meta.json"))
    if "config" not in meta or "n_agents" not in meta:
        raise CheckpointError(f"checkpoint meta at {ckpt_dir} lacks config/n_agents")
    cfg = cfg_from_dict(meta["config"])
    agents = []
    for i in range(int(meta["n_agents"])):
        adir = os.path.join(ckpt_dir, f"agent_{i}")
        ameta = ser.read_json(os.path.join(adir, "meta.json"))
        dmeta = ameta["dgat"]
        a = Agent(i, int(dmeta["obs_dim"]), int(ameta["policy"]["dims"][-1]),
                  int(dmeta["feat_dim"]), int(dmeta["attn_dim"]), int(dmeta["hops"]),
                  int(ameta["policy"]["dims"][1]), np.random.default_rng(0),
                  act_seed=0, shuffle_seed=0, share_layers=bool(dmeta["share_layers"]),
                  joint_obs_dim=(int(ameta["value"]["dims"][0])
                                 if cfg.mode == "ctde_reference" else None))
        for params, fname, shapes in (
                (a.stack.params(), "dgat.bin", [s for _, s in dmeta["shapes"]]),
                (a.nets.policy.params(), "policy.bin", [s for _, s in ameta["policy"]["shapes"]]),
                (a.nets.value.params(), "value.bin", [s for _, s in ameta["value"]["shapes"]])):
            arrays = ser.load_arrays(os.path.join(adir, fname), shapes)
            if len(arrays) != len(params):
                raise CheckpointError(f"{fname}: {len(arrays)} arrays for "
                                      f"{len(params)} parameters")
            for p, arr in zip(params, arrays):
                if p.data.shape != arr.shape:
                    raise CheckpointError(
                        f"{fname}: shape {arr.shape} != expected {p.data.shape}")
                p.data = arr
        agents.append(a)
    return cfg, agents


def evaluate(agents: list[Agent], cfg: TrainConfig, episodes: int, seed: int,
             policy=None) -> EvalReport:
    """Greedy-argmax evaluation with communication active, on fresh seeded
    environments. `policy` optionally replaces the learned agents with a
    white-box baseline (object with reset(env)/act(env))."""
    if episodes <= 0:
        return EvalReport(episodes=0, success_rate=0.0, mean_return=0.0,
                          mean_node_degree=0.0)
    env = make_env(cfg.env)
    stacks = [a.stack for a in agents]
    succ, rets, degs = [], [], []
    for ep in range(episodes):
        obs, graph = env.reset(_eval_seed(seed, ep))
        if policy is not None:
            policy.reset(env)
        ep_ret = 0.0
        won = False
        while True:
            if policy is not None:
                actions = policy.act(env)
            else:
                res = dg.multihop_forward(stacks, obs, graph, cfg.hops,
                                          aggregation=cfg.aggregation,
                                          normalization=cfg.normalization)
                actions = [ag.act_greedy(a.nets, np.concatenate([obs[i], res.features[i]]))
                           for i, a in enumerate(agents)]
            step_res = env.step(actions)
            ep_ret += step_res.reward
            obs = step_res.obs
            graph = env.current_graph()
            if step_res.done:
                won = bool(step_res.info.get("success", False))
                break
        succ.append(1.0 if won else 0.0)
        rets.append(ep_ret)
        degs.append(cg.average_node_degree(graph))
    return EvalReport(episodes=episodes, success_rate=float(np.mean(succ)),
                      mean_return=float(np.mean(rets)),
                      mean_node_degree=float(np.mean(degs)))


def _format_row(values) -> str:
    parts = []
    for v in values:
        parts.append(repr(float(v)) if isinstance(v, float) else str(int(v)))
    return ",".join(parts) + "\n"
