"""Soft Actor-Critic over Dirichlet policies with twin critics.

The actor and the critics own separate encoders; target copies of the
critic stack are moved toward the online networks by Polyak averaging
after every gradient step.  The entropy coefficient is fixed (no
auto-tuning).  Training runs one pass over the environment window per
epoch, takes ``gradient_steps`` updates per environment step once the
random-action warm-up has filled the buffer, and keeps the best
validation-Sharpe snapshot with early stopping.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from ..env import PortfolioEnv
from ..errors import ConfigError, DegenerateSharpeError, TrainingAbort
from .encoders import EncoderSpec, build_encoder
from .policies import PolicySpec, build_policy
from .replay import ReplayBuffer, Transition

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class SACConfig:
    """Optimization hyperparameters (published defaults)."""

    lr_actor: float = 3e-4
    lr_critic: float = 5e-4
    gamma: float = 0.99
    tau: float = 0.005
    gradient_steps: int = 2
    batch_size: int = 128
    buffer_size: int = 20_000
    warmup_steps: int = 500
    alpha: float = 0.2
    epochs: int = 50
    patience: int = 8

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")


class QNetwork(nn.Module):
    """State-action value head on flattened slot embeddings + context."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(state_dim + action_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 1),
        )

    def forward(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([state, action], dim=-1)).squeeze(-1)


class TwinCritics(nn.Module):
    def __init__(self, state_dim: int, action_dim: int, hidden: int):
        super().__init__()
        self.q1 = QNetwork(state_dim, action_dim, hidden)
        self.q2 = QNetwork(state_dim, action_dim, hidden)

    def both(self, state: torch.Tensor, action: torch.Tensor):
        return self.q1(state, action), self.q2(state, action)

    def min(self, state: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        q1, q2 = self.both(state, action)
        return torch.minimum(q1, q2)


def soft_update(online: nn.Module, target: nn.Module, tau: float) -> None:
    """Polyak step ``theta_bar <- tau * theta + (1 - tau) * theta_bar``."""
    with torch.no_grad():
        for p, pt in zip(online.parameters(), target.parameters()):
            pt.mul_(1.0 - tau).add_(p, alpha=tau)
        for b, bt in zip(online.buffers(), target.buffers()):
            bt.copy_(b)


@dataclass
class TrainingTrace:
    epoch_val_sharpes: list[float] = field(default_factory=list)
    epoch_critic_losses: list[float] = field(default_factory=list)
    epoch_actor_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_sharpe: float = float("-inf")
    env_steps: int = 0
    stopped_early: bool = False


@dataclass
class EvalResult:
    returns: np.ndarray            # daily net returns
    turnovers: np.ndarray
    weights: np.ndarray            # (T, k + 1) executed weights incl. cash
    rewards: np.ndarray
    values: np.ndarray


class SACAgent:
    """One trainable agent: encoders, policy, twin critics, replay buffer."""

    def __init__(self, k: int, n_asset_features: int, n_global_features: int,
                 lookback: int, encoder_spec: EncoderSpec, policy_spec: PolicySpec,
                 config: SACConfig, allow_cash: bool = True, seed: int = 0):
        self.k = k
        self.n_asset_features = n_asset_features
        self.n_global_features = n_global_features
        self.lookback = lookback
        self.encoder_spec = encoder_spec
        self.policy_spec = policy_spec
        self.config = config
        self.allow_cash = allow_cash
        self.seed = seed

        torch.manual_seed(seed)
        self.np_rng = np.random.default_rng(seed)

        self.actor_encoder = build_encoder(encoder_spec, n_asset_features, n_global_features)
        self.critic_encoder = build_encoder(encoder_spec, n_asset_features, n_global_features)
        slot_dim, ctx_dim = self.actor_encoder.slot_dim, self.actor_encoder.ctx_dim
        self.policy = build_policy(policy_spec, slot_dim, ctx_dim, include_cash=allow_cash)
        self.action_dim = k + 1 if allow_cash else k
        state_dim = k * slot_dim + ctx_dim
        self.critics = TwinCritics(state_dim, self.action_dim, encoder_spec.hidden)
        self.target_encoder = copy.deepcopy(self.critic_encoder)
        self.target_critics = copy.deepcopy(self.critics)
        for p in self.target_encoder.parameters():
            p.requires_grad_(False)
        for p in self.target_critics.parameters():
            p.requires_grad_(False)

        self.actor_params = list(self.actor_encoder.parameters()) + list(self.policy.parameters())
        self.critic_params = list(self.critic_encoder.parameters()) + list(self.critics.parameters())
        self.actor_opt = torch.optim.Adam(self.actor_params, lr=config.lr_actor)
        self.critic_opt = torch.optim.Adam(self.critic_params, lr=config.lr_critic)

        self.buffer = ReplayBuffer(config.buffer_size)
        self.global_step = 0

    # ---- acting ---------------------------------------------------------

    def _encode(self, encoder, aw: torch.Tensor, gw: torch.Tensor):
        slots, ctx = encoder(aw, gw)
        flat = torch.cat([slots.reshape(slots.shape[0], -1), ctx], dim=-1)
        return slots, ctx, flat

    @property
    def dtype(self) -> torch.dtype:
        return next(self.policy.parameters()).dtype

    def to_double(self) -> "SACAgent":
        """Cast every module to float64 (numeric tests only)."""
        for module in self._modules().values():
            module.double()
        return self

    def _to_tensors(self, aws, gws):
        return (torch.as_tensor(np.stack(aws), dtype=self.dtype),
                torch.as_tensor(np.stack(gws), dtype=self.dtype))

    def act(self, state, deterministic: bool = False) -> np.ndarray:
        """Policy action for one state, in policy coordinates."""
        aw, gw = self._to_tensors([state.asset_window], [state.global_window])
        with torch.no_grad():
            slots, ctx, _ = self._encode(self.actor_encoder, aw, gw)
            if deterministic:
                w = self.policy.deterministic(slots, ctx)
            else:
                w, _ = self.policy.sample(slots, ctx)
        return w[0].numpy().astype(float)

    def random_action(self) -> np.ndarray:
        """Warm-up action: uniform Dirichlet over the action coordinates."""
        return self.np_rng.dirichlet(np.ones(self.action_dim))

    def to_env_action(self, action: np.ndarray) -> np.ndarray:
        """Pad a policy action to the env's (k + 1) coordinates."""
        if self.allow_cash:
            return action
        return np.append(action, 0.0)

    # ---- learning -------------------------------------------------------

    def _batch_tensors(self, batch: list[Transition]):
        aw, gw = self._to_tensors([t.asset_window for t in batch],
                                  [t.global_window for t in batch])
        naw, ngw = self._to_tensors([t.next_asset_window for t in batch],
                                    [t.next_global_window for t in batch])
        actions = torch.as_tensor(np.stack([t.action for t in batch]), dtype=self.dtype)
        rewards = torch.as_tensor([t.reward for t in batch], dtype=self.dtype)
        done = torch.as_tensor([t.done for t in batch], dtype=self.dtype)
        return aw, gw, actions, rewards, naw, ngw, done

    def critic_target(self, batch: list[Transition]) -> torch.Tensor:
        """Entropy-regularized bootstrap target using the minimum target critic."""
        _, _, _, rewards, naw, ngw, done = self._batch_tensors(batch)
        with torch.no_grad():
            slots, ctx, _ = self._encode(self.actor_encoder, naw, ngw)
            next_action, next_logp = self.policy.sample(slots, ctx)
            _, _, flat_t = self._encode(self.target_encoder, naw, ngw)
            q_min = self.target_critics.min(flat_t, next_action)
            target = rewards + self.config.gamma * (1.0 - done) * (
                q_min - self.config.alpha * next_logp)
        return target

    def critic_objective(self, batch: list[Transition], target: torch.Tensor) -> torch.Tensor:
        aw, gw, actions, _, _, _, _ = self._batch_tensors(batch)
        _, _, flat = self._encode(self.critic_encoder, aw, gw)
        q1, q2 = self.critics.both(flat, actions)
        return ((q1 - target) ** 2).mean() + ((q2 - target) ** 2).mean()

    def actor_objective(self, batch: list[Transition], deterministic: bool = False) -> torch.Tensor:
        """Entropy-regularized policy loss.

        With ``deterministic=True`` the sampled action is replaced by the
        distribution mean, giving a noise-free objective (used by the
        finite-difference gradient check).
        """
        aw, gw, _, _, _, _, _ = self._batch_tensors(batch)
        slots, ctx, _ = self._encode(self.actor_encoder, aw, gw)
        if deterministic:
            action = self.policy.deterministic(slots, ctx)
            logp = self.policy.log_prob(slots, ctx, action)
        else:
            action, logp = self.policy.sample(slots, ctx)
        with torch.no_grad():
            _, _, flat = self._encode(self.critic_encoder, aw, gw)
        q_min = self.critics.min(flat, action)
        return (self.config.alpha * logp - q_min).mean()

    def update(self, batch: list[Transition]) -> dict[str, float]:
        target = self.critic_target(batch)
        critic_loss = self.critic_objective(batch, target)
        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        for p in self.critic_params:
            p.requires_grad_(False)
        actor_loss = self.actor_objective(batch)
        self.actor_opt.zero_grad()
        actor_loss.backward()
        self.actor_opt.step()
        for p in self.critic_params:
            p.requires_grad_(True)

        soft_update(self.critic_encoder, self.target_encoder, self.config.tau)
        soft_update(self.critics, self.target_critics, self.config.tau)

        losses = {"critic_loss": float(critic_loss.detach()),
                  "actor_loss": float(actor_loss.detach())}
        if not all(np.isfinite(v) for v in losses.values()):
            raise TrainingAbort(f"non-finite loss at step {self.global_step}: {losses}")
        return losses

    # ---- persistence ----------------------------------------------------

    def state_snapshot(self) -> dict:
        return {name: copy.deepcopy(module.state_dict())
                for name, module in self._modules().items()}

    def load_snapshot(self, snapshot: dict) -> None:
        for name, module in self._modules().items():
            module.load_state_dict(snapshot[name])

    def _modules(self) -> dict[str, nn.Module]:
        return {"actor_encoder": self.actor_encoder, "policy": self.policy,
                "critic_encoder": self.critic_encoder, "critics": self.critics,
                "target_encoder": self.target_encoder, "target_critics": self.target_critics}

    def save(self, path) -> None:
        """Versioned checkpoint: specs, all parameters, optimizers, RNG state."""
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "k": self.k, "n_asset_features": self.n_asset_features,
            "n_global_features": self.n_global_features, "lookback": self.lookback,
            "allow_cash": self.allow_cash, "seed": self.seed,
            "encoder_spec": self.encoder_spec.__dict__,
            "policy_spec": self.policy_spec.__dict__,
            "sac_config": self.config.__dict__,
            "modules": {n: m.state_dict() for n, m in self._modules().items()},
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "np_rng": self.np_rng.bit_generator.state,
            "global_step": self.global_step,
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "SACAgent":
        payload = torch.load(path, weights_only=False)
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {payload.get('format_version')}")
        agent = cls(k=payload["k"], n_asset_features=payload["n_asset_features"],
                    n_global_features=payload["n_global_features"],
                    lookback=payload["lookback"],
                    encoder_spec=EncoderSpec(**payload["encoder_spec"]),
                    policy_spec=PolicySpec(**payload["policy_spec"]),
                    config=SACConfig(**payload["sac_config"]),
                    allow_cash=payload["allow_cash"], seed=payload["seed"])
        for name, module in agent._modules().items():
            module.load_state_dict(payload["modules"][name])
        agent.actor_opt.load_state_dict(payload["actor_opt"])
        agent.critic_opt.load_state_dict(payload["critic_opt"])
        torch.set_rng_state(payload["torch_rng"])
        agent.np_rng.bit_generator.state = payload["np_rng"]
        agent.global_step = payload["global_step"]
        return agent


def evaluate(agent: SACAgent, env: PortfolioEnv) -> EvalResult:
    """Run the deterministic (distribution-mean) policy over an env window."""
    state = env.reset()
    returns, turnovers, rewards, values, weights = [], [], [], [], []
    done = False
    while not done:
        action = agent.to_env_action(agent.act(state, deterministic=True))
        out = env.step(action)
        returns.append(out.net_return)
        turnovers.append(out.turnover)
        rewards.append(out.reward)
        values.append(env._value)
        w = np.zeros(agent.k + 1)
        w[: state.selection.size] = action[: state.selection.size]
        w[agent.k] = action[agent.k] if agent.allow_cash else 0.0
        weights.append(w)
        state, done = out.next_state, out.done
    return EvalResult(returns=np.array(returns), turnovers=np.array(turnovers),
                      weights=np.array(weights), rewards=np.array(rewards),
                      values=np.array(values))


def _validation_score(agent: SACAgent, val_env: PortfolioEnv) -> float:
    from ..wfo import validation_sharpe
    try:
        return validation_sharpe(evaluate(agent, val_env).returns)
    except DegenerateSharpeError:
        return float("-inf")


def train_epochs(env: PortfolioEnv, agent: SACAgent, config: SACConfig,
                 val_env: PortfolioEnv, epochs: int | None = None,
                 patience: int | None = None) -> TrainingTrace:
    """Train with per-epoch validation scoring and best-snapshot early stop.

    ``epochs=0`` returns the agent untouched; ``patience=0`` stops after the
    first epoch whose validation Sharpe fails to improve on the best.
    """
    epochs = config.epochs if epochs is None else epochs
    patience = config.patience if patience is None else patience
    trace = TrainingTrace()
    if epochs == 0:
        return trace

    best_snapshot = agent.state_snapshot()
    bad_epochs = 0
    stop_at = max(patience, 1)

    for epoch in range(epochs):
        state = env.reset()
        done = False
        critic_losses, actor_losses = [], []
        while not done:
            if agent.global_step < config.warmup_steps:
                action = agent.random_action()
            else:
                action = agent.act(state)
            out = env.step(agent.to_env_action(action))
            nxt = out.next_state if out.next_state is not None else state
            agent.buffer.push(Transition(
                asset_window=state.asset_window, global_window=state.global_window,
                action=action.astype(np.float32), reward=out.reward,
                next_asset_window=nxt.asset_window, next_global_window=nxt.global_window,
                done=out.done))
            agent.global_step += 1
            trace.env_steps += 1
            if (agent.global_step >= config.warmup_steps
                    and len(agent.buffer) >= config.batch_size):
                for _ in range(config.gradient_steps):
                    losses = agent.update(agent.buffer.sample(config.batch_size, agent.np_rng))
                    critic_losses.append(losses["critic_loss"])
                    actor_losses.append(losses["actor_loss"])
            state, done = nxt, out.done

        score = _validation_score(agent, val_env)
        trace.epoch_val_sharpes.append(score)
        trace.epoch_critic_losses.append(float(np.mean(critic_losses)) if critic_losses else float("nan"))
        trace.epoch_actor_losses.append(float(np.mean(actor_losses)) if actor_losses else float("nan"))

        if score > trace.best_val_sharpe:
            trace.best_val_sharpe = score
            trace.best_epoch = epoch
            best_snapshot = agent.state_snapshot()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= stop_at:
                trace.stopped_early = True
                logger.info("early stop at epoch %d (best %.4f at epoch %d)",
                            epoch, trace.best_val_sharpe, trace.best_epoch)
                break

    agent.load_snapshot(best_snapshot)
    return trace
