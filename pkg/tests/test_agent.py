import math

import numpy as np
import pytest

from dgmarl import agent as ag
from dgmarl import diffcore as dc
from dgmarl.errors import ConfigError, UsageError


def brute_force_gae(rewards, values, dones, gamma, lam, bootstrap=0.0):
    """Nested-sum oracle: A_t = sum_l (gamma*lam)^l delta_{t+l} up to episode end."""
    T = len(rewards)
    adv = np.zeros(T)
    for t in range(T):
        acc, coef = 0.0, 1.0
        for s in range(t, T):
            v_next = bootstrap if s == T - 1 else values[s + 1]
            nonterm = 0.0 if dones[s] else 1.0
            delta = rewards[s] + gamma * v_next * nonterm - values[s]
            acc += coef * delta
            if dones[s]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def make_nets(seed=0, p=6, d=4, q=5, hidden=16):
    rng = np.random.default_rng(seed)
    return ag.AgentNets(p + d, q, hidden, rng)


def test_ppo_config_validation():
    ag.PpoConfig().validate()
    with pytest.raises(ConfigError):
        ag.PpoConfig(clip_eps=1.5).validate()
    with pytest.raises(ConfigError):
        ag.PpoConfig(gamma=1.0).validate()
    with pytest.raises(ConfigError):
        ag.PpoConfig(gae_lambda=-0.1).validate()


def test_act_uniform_logits():
    nets = make_nets()
    for W in nets.policy.weights:
        W.data[:] = 0.0
    for b in nets.policy.biases:
        b.data[:] = 0.0
    o = np.zeros(nets.input_dim)
    a, logp, v = ag.act(nets, o, np.random.default_rng(0))
    assert abs(logp - math.log(1.0 / nets.n_actions)) < 1e-12
    assert np.isfinite(v)


def test_act_degenerate_softmax():
    nets = make_nets()
    logits = np.zeros(nets.n_actions)
    logits[2] = 1e6
    # drive the head directly: zero the hidden path, bias picks the action
    nets.policy.weights[-1].data[:] = 0.0
    nets.policy.biases[-1].data = logits
    counts = np.zeros(nets.n_actions)
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, _, _ = ag.act(nets, np.zeros(nets.input_dim), rng)
        counts[a] += 1
    assert counts[2] == 200
    assert ag.act_greedy(nets, np.zeros(nets.input_dim)) == 2


def test_act_empirical_matches_softmax():
    nets = make_nets(seed=3)
    nets.policy.weights[-1].data[:] = 0.0
    logits = np.array([0.5, -0.3, 1.2, 0.0, -1.0])
    nets.policy.biases[-1].data = logits
    p = np.exp(logits - logits.max())
    p /= p.sum()
    rng = np.random.default_rng(7)
    N = 100_000
    counts = np.zeros(5)
    o = np.zeros(nets.input_dim)
    for _ in range(N):
        a, _, _ = ag.act(nets, o, rng)
        counts[a] += 1
    freq = counts / N
    assert np.max(np.abs(freq - p)) < 0.01


def test_act_chi_square_fit():
    from scipy import stats
    nets = make_nets(seed=5)
    nets.policy.weights[-1].data[:] = 0.0
    logits = np.array([0.2, 0.9, -0.4, 0.0, 0.6])
    nets.policy.biases[-1].data = logits
    p = np.exp(logits - logits.max())
    p /= p.sum()
    rng = np.random.default_rng(11)
    N = 100_000
    counts = np.zeros(5)
    o = np.zeros(nets.input_dim)
    for _ in range(N):
        a, _, _ = ag.act(nets, o, rng)
        counts[a] += 1
    _, pval = stats.chisquare(counts, p * N)
    assert pval > 0.01


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(13)
    r = rng.normal(size=6)
    v = rng.normal(size=6)
    dones = [False] * 5 + [True]
    adv, ret = ag.gae_episode(r, v, dones, gamma=0.9, lam=0.0)
    for t in range(6):
        v_next = 0.0 if t == 5 else v[t + 1]
        nonterm = 0.0 if dones[t] else 1.0
        assert abs(adv[t] - (r[t] + 0.9 * v_next * nonterm - v[t])) < 1e-12
    assert np.allclose(ret, adv + v)


def test_gae_lambda_one_gamma_one_zero_values():
    r = np.array([1.0, 2.0, 3.0, 4.0])
    v = np.zeros(4)
    dones = [False, False, False, True]
    adv, _ = ag.gae_episode(r, v, dones, gamma=1.0, lam=1.0)
    assert np.allclose(adv, [10.0, 9.0, 7.0, 4.0])


def test_gae_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    for _ in range(200):
        T = int(rng.integers(1, 11))
        r = rng.normal(size=T)
        v = rng.normal(size=T)
        dones = [False] * (T - 1) + [bool(rng.random() < 0.7)]
        gamma = float(rng.uniform(0.8, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        boot = float(rng.normal())
        adv, _ = ag.gae_episode(r, v, dones, gamma, lam, bootstrap_value=boot)
        oracle = brute_force_gae(r, v, dones, gamma, lam, bootstrap=boot)
        assert np.max(np.abs(adv - oracle)) < 1e-12


def test_gae_empty_buffer_rejected():
    with pytest.raises(UsageError):
        ag.gae(ag.RolloutBuffer(), 0.9, 0.95)


def test_gae_buffer_multiple_episodes():
    buf = ag.RolloutBuffer()
    rng = np.random.default_rng(19)
    for _ in range(3):
        T = int(rng.integers(2, 6))
        for t in range(T):
            buf.add(ag.Step(obs=np.zeros(2), feature=np.zeros(2), action=0, logp=0.0,
                            reward=float(rng.normal()), value=float(rng.normal()),
                            done=(t == T - 1)))
        buf.finish_episode()
    adv, ret = ag.gae(buf, 0.95, 0.9)
    assert adv.shape == (len(buf),)
    # cross-check each episode against the oracle
    for start, end, boot in buf.episodes:
        chunk = buf.steps[start:end]
        oracle = brute_force_gae([s.reward for s in chunk], [s.value for s in chunk],
                                 [s.done for s in chunk], 0.95, 0.9, bootstrap=boot)
        assert np.max(np.abs(adv[start:end] - oracle)) < 1e-12


def test_ppo_policy_loss_unit_ratio():
    nets = make_nets(seed=23)
    cfg = ag.PpoConfig(clip_eps=0.2, entropy_coeff=0.0)
    rng = np.random.default_rng(29)
    inputs = [rng.normal(size=nets.input_dim) for _ in range(4)]
    actions, logp_old, advs = [], [], []
    for x in inputs:
        logits = nets.policy.forward_np(x)
        a = int(np.argmax(logits))
        actions.append(a)
        logp_old.append(float(ag._log_softmax(logits)[a]))
        advs.append(float(rng.normal()))
    loss = ag.ppo_policy_loss(None, nets, inputs, actions, logp_old, advs, cfg)
    # new == old policy: r = 1, loss = -mean(A)
    assert abs(float(loss.data) + np.mean(advs)) < 1e-9


def test_ppo_policy_loss_entropy_term():
    nets = make_nets(seed=31)
    cfg = ag.PpoConfig(entropy_coeff=0.5)
    x = np.zeros(nets.input_dim)
    logits = nets.policy.forward_np(x)
    a = 0
    lp_old = float(ag._log_softmax(logits)[a])
    base = ag.ppo_policy_loss(None, nets, [x], [a], [lp_old], [0.0], ag.PpoConfig(entropy_coeff=0.0))
    with_ent = ag.ppo_policy_loss(None, nets, [x], [a], [lp_old], [0.0], cfg)
    p = np.exp(ag._log_softmax(logits))
    ent = -float(p @ np.log(p))
    assert abs((float(base.data) - float(with_ent.data)) - 0.5 * ent) < 1e-12


def test_critic_loss_examples():
    nets = make_nets(seed=37)
    x = np.zeros(nets.input_dim)
    v = float(nets.value.forward_np(x)[0])
    cfg = ag.PpoConfig(huber=True, huber_delta=10.0)
    assert float(ag.critic_loss(None, nets, [x], [v], cfg).data) == 0.0
    cfg_sq = ag.PpoConfig(huber=False)
    loss = ag.critic_loss(None, nets, [x], [v + 1.0], cfg_sq)
    assert abs(float(loss.data) - 1.0) < 1e-12
    loss = ag.critic_loss(None, nets, [x], [v + 20.0], cfg)
    assert abs(float(loss.data) - 150.0) < 1e-9


def test_policy_and_critic_gradients_match_fd():
    nets = make_nets(seed=41, p=3, d=2, q=3, hidden=6)
    cfg = ag.PpoConfig(clip_eps=0.2, entropy_coeff=0.01, huber=True, huber_delta=1.0)
    rng = np.random.default_rng(43)
    inputs = [rng.normal(size=nets.input_dim) for _ in range(3)]
    actions = [int(rng.integers(3)) for _ in range(3)]
    logp_old = [float(rng.uniform(-2, -0.5)) for _ in range(3)]
    advs = [float(rng.normal()) for _ in range(3)]
    tgts = [float(rng.normal()) for _ in range(3)]

    def f(tape=None):
        pol = ag.ppo_policy_loss(tape, nets, inputs, actions, logp_old, advs, cfg)
        val = ag.critic_loss(tape, nets, inputs, tgts, cfg)
        return dc.add(pol, val, tape)

    params = nets.params()
    tape = dc.Tape()
    grads = dc.backward(tape, f(tape), params)
    fd = dc.finite_difference(lambda: f().data, params)
    for p in params:
        assert dc.relative_error(grads[p], fd[p]) < 1e-4, p.name


def make_agent(seed=0, p=4, q=4, d=3, K=1, hidden=8, joint_obs_dim=None):
    rng = np.random.default_rng(seed)
    return ag.Agent(0, p, q, d, d, K, hidden, rng, act_seed=seed + 1,
                    shuffle_seed=seed + 2, joint_obs_dim=joint_obs_dim)


def fill_buffer(agent, T=6, seed=5, feature_dim=3):
    rng = np.random.default_rng(seed)
    agent.buffer.clear()
    for t in range(T):
        obs = rng.normal(size=agent.obs_dim)
        feat = rng.normal(size=feature_dim)
        o_tilde = np.concatenate([obs, feat])
        logits = agent.nets.policy.forward_np(o_tilde)
        a = int(rng.integers(agent.nets.n_actions))
        lp = float(ag._log_softmax(logits)[a])
        v = float(agent.nets.value.forward_np(o_tilde)[0])
        hop_feats = [np.tile(feat, (1, 1))]
        agent.buffer.add(ag.Step(
            obs=obs, feature=feat, action=a, logp=lp, reward=float(rng.normal()),
            value=v, done=(t == T - 1),
            ctx={"hop_feats": hop_feats, "self_pos": [0], "neighbor_outputs": [],
                 "neighborhood_size": 1}))
    agent.buffer.finish_episode()


def test_local_update_lr_zero_keeps_params():
    agent = make_agent(seed=7)
    fill_buffer(agent)
    before = [p.data.copy() for p in agent.params()]
    cfg = ag.UpdateConfig(ppo=ag.PpoConfig(lr=0.0, epochs=2), alpha_consensus=0.0)
    report = ag.local_update(agent, agent.buffer, cfg)
    for p, b in zip(agent.params(), before):
        assert np.array_equal(p.data, b)
    assert "policy_loss" in report and "value_loss" in report


def test_local_update_entropy_only_when_losses_vanish():
    agent = make_agent(seed=11)
    fill_buffer(agent)
    # zero advantages: reward = 0, value = 0 at every step
    for s in agent.buffer.steps:
        s.reward = 0.0
        s.value = 0.0
    # perfectly fit critic: force value head to output exactly 0
    for W in agent.nets.value.weights:
        W.data[:] = 0.0
    for b in agent.nets.value.biases:
        b.data[:] = 0.0
    val_before = [p.data.copy() for p in agent.nets.value.params()]
    pol_before = [p.data.copy() for p in agent.nets.policy.params()]
    cfg = ag.UpdateConfig(ppo=ag.PpoConfig(lr=1e-3, epochs=1, entropy_coeff=0.01),
                          alpha_consensus=0.0)
    ag.local_update(agent, agent.buffer, cfg)
    for p, b in zip(agent.nets.value.params(), val_before):
        assert np.array_equal(p.data, b)
    changed = any(not np.array_equal(p.data, b)
                  for p, b in zip(agent.nets.policy.params(), pol_before))
    assert changed


def test_local_update_loss_decreases_on_frozen_minibatch():
    agent = make_agent(seed=13)
    fill_buffer(agent, T=8)
    cfg = ag.UpdateConfig(ppo=ag.PpoConfig(lr=3e-3, epochs=1, entropy_coeff=0.0),
                          alpha_consensus=0.0)

    def combined_loss():
        adv_all, ret_all = ag.gae(agent.buffer, cfg.ppo.gamma, cfg.ppo.gae_lambda)
        adv = ag.normalize_advantages(adv_all)
        inputs, actions, logp_old = [], [], []
        from dgmarl import dgat as dgt
        for s in agent.buffer.steps:
            feat = dgt.chain_forward(None, agent.stack, s.obs, s.ctx["hop_feats"],
                                     s.ctx["self_pos"])
            inputs.append(np.concatenate([s.obs, feat.data]))
            actions.append(s.action)
            logp_old.append(s.logp)
        pol = ag.ppo_policy_loss(None, agent.nets, inputs, actions, logp_old, adv, cfg.ppo)
        val = ag.critic_loss(None, agent.nets, inputs, ret_all, cfg.ppo)
        return float(pol.data) + float(val.data)

    losses = [combined_loss()]
    for _ in range(10):
        ag.local_update(agent, agent.buffer, cfg)
        losses.append(combined_loss())
    assert losses[-1] < losses[0]


def test_agent_value_input_dim_override():
    agent = make_agent(seed=17, joint_obs_dim=12)
    assert agent.nets.value_input_dim == 12
    assert agent.nets.value.dims[0] == 12
