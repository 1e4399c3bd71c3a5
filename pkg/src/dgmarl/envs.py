"""Seeded cooperative desk-scale environments.

SpreadWorld: n agents cover n landmarks on a 2-D arena; the communication
graph is rebuilt from positions every step (radius graph) and connectivity
is enforced at reset by bounded resampling.

ChainWorld: the 1-D analogue with a fixed chain communication topology;
agents cover evenly spaced target slots.

Both emit per-agent local observations, per-agent raw rewards, and the
exactly averaged team reward. Reward shaping is the negative distance to the
nearest uncovered landmark (scaled by the arena size; a landmark the agent
itself covers keeps counting as its target) plus a signed coverage bonus:
+1.0 to the agents covering a landmark that just became covered, -1.0 to the
agents that just abandoned one. The signed delta is potential-based, so
stepping off and back on nets zero, while holding a landmark is strictly
better than leaving it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import commgraph as cg
from .commgraph import CommGraph
from .errors import ConfigError, ConnectivityError, UsageError

ACTIONS = ("stay", "up", "down", "left", "right")
N_ACTIONS = len(ACTIONS)

# unit moves per action id, (dx, dy)
_MOVES = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])

_RESET_RETRIES = 100


@dataclass
class EnvConfig:
    name: str = "spread"            # spread | chain
    n_agents: int = 4
    arena: float = 8.0
    comm_range: float = 4.0
    obs_range: float = 4.0
    k_obs: int = 3
    episode_len: int = 50
    move_step: float = 0.5
    cover_radius: float = 0.5

    def validate(self) -> "EnvConfig":
        if self.name not in ("spread", "chain"):
            raise ConfigError(f"unknown env {self.name!r}")
        if self.n_agents < 2:
            raise ConfigError(f"need at least 2 agents, got {self.n_agents}")
        if self.arena <= 0 or self.comm_range <= 0 or self.obs_range <= 0:
            raise ConfigError("arena, comm_range, obs_range must be positive")
        if self.episode_len < 1 or self.k_obs < 1:
            raise ConfigError("episode_len and k_obs must be >= 1")
        return self


@dataclass
class StepResult:
    obs: list[np.ndarray]
    reward: float            # averaged team reward, exactly mean(rewards)
    done: bool
    info: dict = field(default_factory=dict)


def make_env(cfg: EnvConfig):
    cfg.validate()
    return SpreadWorld(cfg) if cfg.name == "spread" else ChainWorld(cfg)


class SpreadWorld:
    """Cooperative landmark coverage on a [0, L]^2 arena."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.n = cfg.n_agents
        self.n_actions = N_ACTIONS
        self.obs_dim = 2 + 2 * cfg.k_obs + 2 * cfg.k_obs
        self.positions = np.zeros((self.n, 2))
        self.landmarks = np.zeros((self.n, 2))
        self.t = 0
        self._covered_prev = np.zeros(self.n, dtype=bool)
        self._graph: CommGraph | None = None
        self._done = True

    # -- topology ---------------------------------------------------------

    def current_graph(self) -> CommGraph:
        if self._graph is None:
            raise UsageError("environment not reset")
        return self._graph

    def _rebuild_graph(self) -> None:
        self._graph = cg.radius_graph(self.positions, self.cfg.comm_range)

    # -- lifecycle --------------------------------------------------------

    def reset(self, seed: int):
        """Sample positions and landmarks from the seed; resample (bounded)
        until the communication graph is connected."""
        rng = np.random.default_rng(seed)
        L = self.cfg.arena
        for _ in range(_RESET_RETRIES):
            self.positions = rng.uniform(0.0, L, size=(self.n, 2))
            self.landmarks = rng.uniform(0.0, L, size=(self.n, 2))
            self._rebuild_graph()
            if cg.is_connected(self._graph):
                break
        else:
            comps = cg.components(self._graph)
            raise ConnectivityError(
                f"no connected communication graph after {_RESET_RETRIES} resamples "
                f"(seed {seed}); last components: {comps}")
        self.t = 0
        self._covered_prev = self._covered()
        self._done = False
        return [self.local_observation(i) for i in range(self.n)], self._graph

    def _covered(self) -> np.ndarray:
        """Landmarks with some agent within cover radius, at current positions."""
        out = np.zeros(self.n, dtype=bool)
        for m in range(self.n):
            d = np.linalg.norm(self.positions - self.landmarks[m], axis=1)
            out[m] = bool((d <= self.cfg.cover_radius).any())
        return out

    def step(self, actions) -> StepResult:
        if self._done:
            raise UsageError("step after episode end; call reset")
        if len(actions) != self.n:
            raise UsageError(f"expected {self.n} actions, got {len(actions)}")
        for a in actions:
            if not (0 <= int(a) < N_ACTIONS):
                raise UsageError(f"invalid action id {a}")
        L = self.cfg.arena
        prev_positions = self.positions.copy()
        for i, a in enumerate(actions):
            self.positions[i] = np.clip(
                self.positions[i] + self.cfg.move_step * _MOVES[int(a)], 0.0, L)
        self.t += 1
        covered = self._covered()
        newly = covered & ~self._covered_prev
        lost = self._covered_prev & ~covered
        self._covered_prev = covered
        rewards = np.zeros(self.n)
        for i in range(self.n):
            d = np.linalg.norm(self.landmarks - self.positions[i], axis=1)
            # a landmark the agent itself covers still counts as its target:
            # the coverer keeps ~zero shaping while everyone else is pulled
            # toward the remaining uncovered landmarks
            pool = ~covered | (d <= self.cfg.cover_radius)
            if pool.any():
                rewards[i] -= float(d[pool].min()) / L
            if newly.any():
                rewards[i] += 1.0 * float((d[newly] <= self.cfg.cover_radius).sum())
            if lost.any():
                d_prev = np.linalg.norm(self.landmarks - prev_positions[i], axis=1)
                rewards[i] -= 1.0 * float((d_prev[lost] <= self.cfg.cover_radius).sum())
        success = bool(covered.all())
        self._done = success or self.t >= self.cfg.episode_len
        self._rebuild_graph()
        team = float(np.mean(rewards))
        return StepResult(
            obs=[self.local_observation(i) for i in range(self.n)],
            reward=team, done=self._done,
            info={"success": success, "rewards": rewards.tolist(),
                  "covered": int(covered.sum())})

    # -- observations -----------------------------------------------------

    def local_observation(self, i: int) -> np.ndarray:
        """Own position plus relative positions of the k nearest landmarks and
        agents within obs range (zero-padded), all scaled by the arena size.

        The selected entities are laid out in entity-index order so an entity
        keeps its slot while it stays in the visible set; distance-sorted
        layouts shuffle slot identities mid-episode and alias the policy input.
        """
        if not (0 <= i < self.n):
            raise UsageError(f"agent id {i} out of range")
        L = self.cfg.arena
        k = self.cfg.k_obs
        own = self.positions[i]
        out = np.zeros(self.obs_dim)
        out[0:2] = own / L
        out[2:2 + 2 * k] = self._nearest_relative(own, self.landmarks, k, exclude=None)
        out[2 + 2 * k:] = self._nearest_relative(own, self.positions, k, exclude=i)
        return out

    def _nearest_relative(self, own, points, k, exclude):
        d = np.linalg.norm(points - own, axis=1)
        nearest = [j for j in np.lexsort((np.arange(len(points)), d))
                   if j != exclude and d[j] <= self.cfg.obs_range][:k]
        flat = np.zeros(2 * k)
        for slot, j in enumerate(sorted(nearest)):
            flat[2 * slot:2 * slot + 2] = (points[j] - own) / self.cfg.arena
        return flat


class ChainWorld:
    """1-D slot coverage with a fixed chain communication topology."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.n = cfg.n_agents
        self.n_actions = N_ACTIONS
        self.obs_dim = 1 + cfg.k_obs + cfg.k_obs
        self.length = cfg.arena
        self.positions = np.zeros(self.n)
        # evenly spaced target slots
        self.slots = (np.arange(self.n) + 0.5) * self.length / self.n
        self.t = 0
        self._covered_prev = np.zeros(self.n, dtype=bool)
        self._graph = cg.chain_graph(self.n)
        self._done = True

    def current_graph(self) -> CommGraph:
        return self._graph

    def reset(self, seed: int):
        rng = np.random.default_rng(seed)
        self.positions = rng.uniform(0.0, self.length, size=self.n)
        self.t = 0
        self._covered_prev = self._covered()
        self._done = False
        return [self.local_observation(i) for i in range(self.n)], self._graph

    def _covered(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        for m in range(self.n):
            out[m] = bool((np.abs(self.positions - self.slots[m]) <= self.cfg.cover_radius).any())
        return out

    def step(self, actions) -> StepResult:
        if self._done:
            raise UsageError("step after episode end; call reset")
        if len(actions) != self.n:
            raise UsageError(f"expected {self.n} actions, got {len(actions)}")
        for a in actions:
            if not (0 <= int(a) < N_ACTIONS):
                raise UsageError(f"invalid action id {a}")
        prev_positions = self.positions.copy()
        for i, a in enumerate(actions):
            dx = self.cfg.move_step * _MOVES[int(a)][0]  # up/down are no-ops in 1-D
            self.positions[i] = float(np.clip(self.positions[i] + dx, 0.0, self.length))
        self.t += 1
        covered = self._covered()
        newly = covered & ~self._covered_prev
        lost = self._covered_prev & ~covered
        self._covered_prev = covered
        rewards = np.zeros(self.n)
        for i in range(self.n):
            d = np.abs(self.slots - self.positions[i])
            pool = ~covered | (d <= self.cfg.cover_radius)  # own slot keeps counting
            if pool.any():
                rewards[i] -= float(d[pool].min()) / self.length
            if newly.any():
                rewards[i] += 1.0 * float((d[newly] <= self.cfg.cover_radius).sum())
            if lost.any():
                d_prev = np.abs(self.slots - prev_positions[i])
                rewards[i] -= 1.0 * float((d_prev[lost] <= self.cfg.cover_radius).sum())
        success = bool(covered.all())
        self._done = success or self.t >= self.cfg.episode_len
        team = float(np.mean(rewards))
        return StepResult(
            obs=[self.local_observation(i) for i in range(self.n)],
            reward=team, done=self._done,
            info={"success": success, "rewards": rewards.tolist(),
                  "covered": int(covered.sum())})

    def local_observation(self, i: int) -> np.ndarray:
        if not (0 <= i < self.n):
            raise UsageError(f"agent id {i} out of range")
        k = self.cfg.k_obs
        own = self.positions[i]
        out = np.zeros(self.obs_dim)
        out[0] = own / self.length
        out[1:1 + k] = self._nearest_relative(own, self.slots, k, exclude=None)
        out[1 + k:] = self._nearest_relative(own, self.positions, k, exclude=i)
        return out

    def _nearest_relative(self, own, points, k, exclude):
        d = np.abs(points - own)
        nearest = [j for j in np.lexsort((np.arange(len(points)), d))
                   if j != exclude and d[j] <= self.cfg.obs_range][:k]
        flat = np.zeros(k)
        for slot, j in enumerate(sorted(nearest)):
            flat[slot] = (points[j] - own) / self.length
        return flat


# ----------------------------------------------------------- scripted baselines

class ScriptedSpreadPolicy:
    """Greedy-assignment oracle: pair agents to landmarks by repeatedly taking
    the closest unmatched pair at reset, then walk each agent straight in."""

    def __init__(self):
        self.assignment: list[int] = []

    def reset(self, env: SpreadWorld) -> None:
        n = env.n
        d = np.linalg.norm(env.positions[:, None, :] - env.landmarks[None, :, :], axis=2)
        free_a, free_l = set(range(n)), set(range(n))
        assign = [0] * n
        while free_a:
            best = min(((d[a, m], a, m) for a in sorted(free_a) for m in sorted(free_l)),
                       key=lambda x: (x[0], x[1], x[2]))
            _, a, m = best
            assign[a] = m
            free_a.remove(a)
            free_l.remove(m)
        self.assignment = assign

    def act(self, env: SpreadWorld) -> list[int]:
        actions = []
        for i in range(env.n):
            target = env.landmarks[self.assignment[i]]
            delta = target - env.positions[i]
            if abs(delta[0]) <= 0.25 and abs(delta[1]) <= 0.25:
                actions.append(0)
            elif abs(delta[0]) >= abs(delta[1]):
                actions.append(4 if delta[0] > 0 else 3)
            else:
                actions.append(1 if delta[1] > 0 else 2)
        return actions


class ScriptedChainPolicy:
    """Agents sort themselves onto slots by rank order of position."""

    def __init__(self):
        self.assignment: list[int] = []

    def reset(self, env: ChainWorld) -> None:
        order = np.argsort(env.positions, kind="stable")
        assign = [0] * env.n
        for slot, a in enumerate(order):
            assign[int(a)] = slot
        self.assignment = assign

    def act(self, env: ChainWorld) -> list[int]:
        actions = []
        for i in range(env.n):
            delta = env.slots[self.assignment[i]] - env.positions[i]
            if abs(delta) <= 0.25:
                actions.append(0)
            else:
                actions.append(4 if delta > 0 else 3)
        return actions


class RandomPolicy:
    """Uniform random actions (the learnability floor)."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def reset(self, env) -> None:
        pass

    def act(self, env) -> list[int]:
        return [int(a) for a in self.rng.integers(0, env.n_actions, size=env.n)]


def run_scripted_episode(env, policy, seed: int) -> bool:
    """Play one episode with a white-box policy; returns success."""
    env.reset(seed)
    policy.reset(env)
    while True:
        res = env.step(policy.act(env))
        if res.done:
            return bool(res.info["success"])
