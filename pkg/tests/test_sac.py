import copy

import numpy as np
import pytest
import torch
from scipy.stats import dirichlet as dirichlet_dist

from rlfolio.agents import (
    EncoderSpec,
    PolicySpec,
    ReplayBuffer,
    SACAgent,
    SACConfig,
    Transition,
    evaluate,
    soft_update,
    train_epochs,
)
from rlfolio.errors import ConfigError

from conftest import drift_market_envs, toy_transitions


def tiny_agent(k=2, action_cash=True, seed=0, hidden=16, encoder="feedforward",
               policy="flat", **cfg):
    config = SACConfig(batch_size=8, buffer_size=64, warmup_steps=4,
                       gradient_steps=1, **cfg)
    return SACAgent(k=k, n_asset_features=4, n_global_features=0, lookback=4,
                    encoder_spec=EncoderSpec(kind=encoder, hidden=hidden,
                                             cross_attention=False),
                    policy_spec=PolicySpec(structure=policy, head_hidden=hidden),
                    config=config, allow_cash=action_cash, seed=seed)


class TestSoftUpdate:
    def test_published_tau(self):
        online = torch.nn.Linear(1, 1, bias=False)
        target = torch.nn.Linear(1, 1, bias=False)
        with torch.no_grad():
            online.weight.fill_(1.0)
            target.weight.fill_(0.0)
        soft_update(online, target, tau=0.005)
        assert target.weight.item() == pytest.approx(0.005)

    def test_tau_one_hard_copy(self):
        online, target = torch.nn.Linear(3, 3), torch.nn.Linear(3, 3)
        soft_update(online, target, tau=1.0)
        for p, q in zip(online.parameters(), target.parameters()):
            assert torch.equal(p, q)

    def test_tau_zero_unchanged(self):
        online, target = torch.nn.Linear(3, 3), torch.nn.Linear(3, 3)
        before = [q.clone() for q in target.parameters()]
        soft_update(online, target, tau=0.0)
        for q, b in zip(target.parameters(), before):
            assert torch.equal(q, b)


class TestReplayBuffer:
    def test_capacity_and_fifo_eviction(self):
        buf = ReplayBuffer(capacity=10)
        transitions = toy_transitions(15)
        for t in transitions:
            buf.push(t)
        assert len(buf) == 10
        assert transitions[0] not in buf
        assert transitions[4] not in buf
        assert transitions[5] in buf

    def test_sampling_deterministic_with_seed(self):
        buf = ReplayBuffer(capacity=32)
        for t in toy_transitions(20):
            buf.push(t)
        a = buf.sample(8, np.random.default_rng(5))
        b = buf.sample(8, np.random.default_rng(5))
        assert all(x is y for x, y in zip(a, b))


class TestCriticTarget:
    def test_terminal_target_is_reward(self):
        agent = tiny_agent()
        batch = toy_transitions(6)
        batch = [t._replace(done=True) for t in batch]
        y = agent.critic_target(batch)
        np.testing.assert_allclose(y.numpy(), [t.reward for t in batch], rtol=1e-6)

    def test_gamma_zero_target_is_reward(self):
        agent = tiny_agent(gamma=1e-9)  # gamma must be > 0 by contract
        batch = toy_transitions(6)
        y = agent.critic_target(batch)
        np.testing.assert_allclose(y.numpy(), [t.reward for t in batch], atol=1e-6)

    def test_tiny_mdp_matches_analytic_value(self):
        """Zeroed target critics leave y = r + gamma*(0 + alpha*H(policy))."""
        agent = tiny_agent(seed=3)
        for p in agent.target_critics.parameters():
            torch.nn.init.zeros_(p)
        base = toy_transitions(1, seed=11)[0]._replace(done=False, reward=0.7)
        batch = [base] * 4000
        y = agent.critic_target(batch).numpy()

        aw, gw = agent._to_tensors([base.next_asset_window], [base.next_global_window])
        slots, ctx, _ = agent._encode(agent.actor_encoder, aw, gw)
        conc = agent.policy.concentrations(slots, ctx).detach().numpy()[0]
        entropy = dirichlet_dist(conc).entropy()
        expected = 0.7 + agent.config.gamma * agent.config.alpha * entropy
        se = y.std(ddof=1) / np.sqrt(len(y))
        assert y.mean() == pytest.approx(expected, abs=4 * se + 1e-6)

    def test_target_uses_min_of_twin_critics(self):
        agent = tiny_agent(seed=4)
        with torch.no_grad():
            # Force Q1 >> Q2 everywhere via the output biases.
            agent.target_critics.q1.net[-1].bias.fill_(100.0)
            agent.target_critics.q2.net[-1].bias.fill_(-100.0)
        batch = [t._replace(done=False, reward=0.0) for t in toy_transitions(8)]
        y = agent.critic_target(batch).numpy()
        assert (y < 0).all()  # the +100 branch never leaks through


class TestGradientCheck:
    def _check(self, params, loss_fn, h=1e-5, rel=1e-3):
        loss = loss_fn()
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        checked = 0
        with torch.no_grad():
            for p, g in zip(params, grads):
                if g is None:
                    continue
                flat = p.view(-1)
                idx = range(0, flat.numel(), max(1, flat.numel() // 5))
                for i in idx:
                    orig = flat[i].item()
                    flat[i] = orig + h
                    up = loss_fn().item()
                    flat[i] = orig - h
                    down = loss_fn().item()
                    flat[i] = orig
                    fd = (up - down) / (2 * h)
                    auto = g.view(-1)[i].item()
                    assert fd == pytest.approx(auto, rel=rel, abs=1e-7), (p.shape, i)
                    checked += 1
        assert checked > 10

    def test_critic_gradients_match_finite_differences(self):
        agent = tiny_agent(hidden=8, seed=2).to_double()
        batch = toy_transitions(8, dtype=np.float64, seed=9)
        target = agent.critic_target(batch).detach()
        self._check(agent.critic_params, lambda: agent.critic_objective(batch, target))

    def test_actor_gradients_match_finite_differences(self):
        agent = tiny_agent(hidden=8, seed=2).to_double()
        batch = toy_transitions(8, dtype=np.float64, seed=9)
        self._check(agent.actor_params,
                    lambda: agent.actor_objective(batch, deterministic=True))

    def test_hierarchical_actor_gradients(self):
        agent = tiny_agent(hidden=8, seed=5, policy="hierarchical").to_double()
        batch = toy_transitions(8, dtype=np.float64, seed=10)
        self._check(agent.actor_params,
                    lambda: agent.actor_objective(batch, deterministic=True))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        agent = tiny_agent(seed=8)
        batch = toy_transitions(8)
        for _ in range(3):
            agent.update(batch)
        path = tmp_path / "agent.pt"
        agent.save(path)
        actions_a = [agent.act(_FakeState(batch[0])) for _ in range(4)]

        loaded = SACAgent.load(path)
        for name, module in agent._modules().items():
            for p, q in zip(module.parameters(), loaded._modules()[name].parameters()):
                assert torch.equal(p, q)
        actions_b = [loaded.act(_FakeState(batch[0])) for _ in range(4)]
        for a, b in zip(actions_a, actions_b):
            np.testing.assert_array_equal(a, b)

    def test_version_gate(self, tmp_path):
        agent = tiny_agent()
        path = tmp_path / "agent.pt"
        agent.save(path)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(ConfigError):
            SACAgent.load(path)


class _FakeState:
    def __init__(self, transition):
        self.asset_window = transition.asset_window
        self.global_window = transition.global_window


class TestTraining:
    def test_epochs_zero_returns_agent_unchanged(self):
        train_env, val_env, _, _ = drift_market_envs(seed=1)
        agent = _drift_agent(seed=1)
        before = copy.deepcopy(agent.state_snapshot())
        trace = train_epochs(train_env, agent, agent.config, val_env, epochs=0)
        assert trace.epoch_val_sharpes == []
        after = agent.state_snapshot()
        for name in before:
            for key in before[name]:
                assert torch.equal(before[name][key], after[name][key])

    def test_patience_zero_stops_after_first_non_improving_epoch(self):
        # Zero asset returns make every validation Sharpe undefined (-inf),
        # so no epoch can improve on the best.
        train_env, val_env, _, _ = drift_market_envs(seed=2, drift=0.0, vol=0.0)
        agent = _drift_agent(seed=2)
        trace = train_epochs(train_env, agent, agent.config, val_env,
                             epochs=5, patience=0)
        assert trace.stopped_early
        assert len(trace.epoch_val_sharpes) == 1

    def test_fixed_seed_bitwise_identical_training(self):
        traces = []
        for _ in range(2):
            train_env, val_env, _, _ = drift_market_envs(seed=3)
            agent = _drift_agent(seed=3)
            traces.append(train_epochs(train_env, agent, agent.config, val_env,
                                       epochs=2, patience=8))
        assert traces[0].epoch_critic_losses == traces[1].epoch_critic_losses
        assert traces[0].epoch_actor_losses == traces[1].epoch_actor_losses
        assert traces[0].epoch_val_sharpes == traces[1].epoch_val_sharpes

    def test_learnability_smoke(self):
        """Drifting asset ends up overweighted after a short training run."""
        train_env, val_env, test_env, panel = drift_market_envs(seed=7)
        agent = _drift_agent(seed=7)
        train_epochs(train_env, agent, agent.config, val_env, epochs=10, patience=10)
        mean_w = _mean_weight_on(agent, test_env, asset="A000")
        assert mean_w > 1.0 / 3.0


def _drift_agent(seed, epochs=10):
    config = SACConfig(batch_size=64, buffer_size=4000, warmup_steps=150,
                       gradient_steps=1, epochs=epochs, patience=10)
    return SACAgent(k=3, n_asset_features=4, n_global_features=0, lookback=10,
                    encoder_spec=EncoderSpec(kind="feedforward", hidden=32,
                                             cross_attention=False),
                    policy_spec=PolicySpec(structure="flat", head_hidden=32),
                    config=config, allow_cash=False, seed=seed)


def _mean_weight_on(agent, env, asset):
    state = env.reset()
    j = env.panel.assets.index(asset)
    weights = []
    done = False
    while not done:
        action = agent.to_env_action(agent.act(state, deterministic=True))
        slot = np.flatnonzero(state.selection == j)
        weights.append(action[slot[0]] if slot.size else 0.0)
        out = env.step(action)
        state, done = out.next_state, out.done
    return float(np.mean(weights))


class TestEvaluate:
    def test_deterministic_and_repeatable(self):
        _, _, test_env, _ = drift_market_envs(seed=4)
        agent = _drift_agent(seed=4)
        a = evaluate(agent, test_env)
        b = evaluate(agent, test_env)
        np.testing.assert_array_equal(a.returns, b.returns)
        assert a.returns.size == test_env.n_steps

    def test_weights_rows_on_simplex(self):
        _, _, test_env, _ = drift_market_envs(seed=5, allow_cash=True)
        agent = SACAgent(k=3, n_asset_features=4, n_global_features=0, lookback=10,
                         encoder_spec=EncoderSpec(kind="feedforward", hidden=16,
                                                  cross_attention=False),
                         policy_spec=PolicySpec(structure="hierarchical", head_hidden=16),
                         config=SACConfig(), allow_cash=True, seed=5)
        res = evaluate(agent, test_env)
        np.testing.assert_allclose(res.weights.sum(axis=1), 1.0, atol=1e-6)
