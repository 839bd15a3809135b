"""Off-policy actor-critic learner with an autoencoder novelty bonus.

Twin critics with Polyak-averaged targets are regressed onto targets that
add a behavior bonus (normalized autoencoder reconstruction error of the next
state-action pair) to the reward. The actor ascends the minimum of the two
critics, either through the reparameterized squashed Gaussian (default), the
score-function estimator, or a deterministic policy with Gaussian action
noise. The bonus weight alpha is either a fixed constant or is recomputed
every update from an auxiliary critic's TD deviations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from bac.behavior import BehaviorModel, Rollout
from bac.numerics import (
    AdamState,
    GradientSet,
    MlpParams,
    NumericalError,
    adam_step,
    global_norm_clip,
    init_mlp,
    mlp_backward,
    mlp_forward,
    polyak,
    sigmoid,
)
from bac.replay import Batch, ReplayBuffer, Transition

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0

# Static bonus weights for the PyBullet locomotion tasks, keyed by task name.
LOCOMOTION_ALPHA = {"Hopper": 0.05, "Walker2D": 0.04, "Reacher": 0.05, "Ant": 0.2, "HalfCheetah": 0.03}
# Global-norm bound on the actor gradient, only used for HalfCheetah.
ACTOR_CLIP_PRESETS = {"HalfCheetah": 3.0}


class ConfigError(ValueError):
    pass


@dataclass
class BacConfig:
    gamma: float = 0.99
    alpha_mode: str = "static"  # static | adaptive
    alpha: float = 0.2
    tau: float = 0.005
    batch_size: int = 64
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_behavior: float = 1e-3
    lr_aux: float = 3e-4
    grad_clip: float | None = None
    policy: str = "stochastic"  # stochastic | deterministic
    noise_std: float = 0.1  # fraction of the action half-range
    actor_gradient: str = "reparameterized"  # reparameterized | score
    adaptive_omega: float = 10.0
    hidden: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 200_000
    updates_per_step: int = 1
    warmup_steps: int = 1000
    normalize_psi: bool = True
    autoencoder_enabled: bool = True
    ae_update_frequency: int = 10
    ae_epochs: int = 5
    ae_batch_size: int = 64

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        errors = []
        if not 0.0 <= self.gamma < 1.0:
            errors.append(f"gamma must be in [0, 1), got {self.gamma}")
        if self.alpha_mode not in ("static", "adaptive"):
            errors.append(f"alpha_mode must be static or adaptive, got {self.alpha_mode!r}")
        if self.alpha < 0:
            errors.append(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 < self.tau <= 1.0:
            errors.append(f"tau must be in (0, 1], got {self.tau}")
        for name in ("lr_actor", "lr_critic", "lr_behavior", "lr_aux"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive")
        for name in ("batch_size", "buffer_capacity", "ae_update_frequency", "ae_epochs", "ae_batch_size"):
            if int(getattr(self, name)) <= 0:
                errors.append(f"{name} must be positive")
        if self.updates_per_step < 0 or self.warmup_steps < 0:
            errors.append("updates_per_step and warmup_steps must be >= 0")
        if self.grad_clip is not None and not self.grad_clip > 0:
            errors.append("grad_clip must be positive when set")
        if self.policy not in ("stochastic", "deterministic"):
            errors.append(f"policy must be stochastic or deterministic, got {self.policy!r}")
        if self.actor_gradient not in ("reparameterized", "score"):
            errors.append(f"actor_gradient must be reparameterized or score, got {self.actor_gradient!r}")
        if self.noise_std < 0:
            errors.append("noise_std must be >= 0")
        if not self.hidden or min(self.hidden) <= 0:
            errors.append("hidden layer widths must be positive")
        if errors:
            raise ConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BacConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown agent settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdaptiveTemperature:
    """Auxiliary reward-only critic whose TD spread sets alpha."""

    net: MlpParams
    optimizer: AdamState
    alpha: float = 0.5


@dataclass
class UpdateInfo:
    critic_loss: float
    actor_objective: float
    alpha: float
    mean_psi_bar: float


def _mlp(sizes, rng, out_act="linear"):
    return init_mlp(sizes, ["relu"] * (len(sizes) - 2) + [out_act], rng)


class BacAgent:
    """Actor, twin critics, targets, behavior model, and their optimizers."""

    def __init__(self, obs_low, obs_high, act_low, act_high, config: BacConfig | None = None, seed: int = 0):
        self.config = config or BacConfig()
        cfg = self.config
        self.obs_low = np.asarray(obs_low, dtype=np.float64)
        self.obs_high = np.asarray(obs_high, dtype=np.float64)
        self.act_low = np.asarray(act_low, dtype=np.float64)
        self.act_high = np.asarray(act_high, dtype=np.float64)
        self.obs_dim = self.obs_low.size
        self.act_dim = self.act_low.size
        self.act_center = 0.5 * (self.act_high + self.act_low)
        self.act_half = 0.5 * (self.act_high - self.act_low)
        self.seed = seed
        self.rng = np.random.default_rng(seed)

        h = list(cfg.hidden)
        n_out = 2 * self.act_dim if self.stochastic else self.act_dim
        self.actor = _mlp([self.obs_dim, *h, n_out], self.rng)
        self.critics = [_mlp([self.obs_dim + self.act_dim, *h, 1], self.rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.actor_opt = AdamState.fresh(self.actor)
        self.critic_opts = [AdamState.fresh(c) for c in self.critics]
        self.behavior = BehaviorModel.create(
            self.obs_dim, self.act_dim, self.rng,
            input_low=np.concatenate([self.obs_low, self.act_low]),
            input_high=np.concatenate([self.obs_high, self.act_high]),
            update_frequency=cfg.ae_update_frequency, train_epochs=cfg.ae_epochs,
            batch_size=cfg.ae_batch_size, learning_rate=cfg.lr_behavior,
        )
        self.temperature: AdaptiveTemperature | None = None
        if cfg.alpha_mode == "adaptive":
            net = _mlp([self.obs_dim + self.act_dim, *h, 1], self.rng)
            self.temperature = AdaptiveTemperature(net, AdamState.fresh(net))
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.obs_dim, self.act_dim)
        self.env_steps = 0
        self.updates = 0
        self.episodes = 0
        self._obs: np.ndarray | None = None
        self._episode_return = 0.0
        self._episode_states: list[np.ndarray] = []
        self._episode_actions: list[np.ndarray] = []
        self._pending: list[Rollout] = []

    @property
    def stochastic(self) -> bool:
        return self.config.policy == "stochastic"

    # ------------------------------------------------------------------
    # scaling helpers

    def _norm_obs(self, obs: np.ndarray) -> np.ndarray:
        return 2.0 * (obs - self.obs_low) / (self.obs_high - self.obs_low) - 1.0

    def _to_env_action(self, squashed: np.ndarray) -> np.ndarray:
        return self.act_center + self.act_half * squashed

    def _to_unit_action(self, action: np.ndarray) -> np.ndarray:
        return (action - self.act_center) / self.act_half

    def _critic_input(self, obs: np.ndarray, unit_action: np.ndarray) -> np.ndarray:
        return np.concatenate([self._norm_obs(obs), unit_action], axis=-1)

    # ------------------------------------------------------------------
    # policy

    def _actor_head(self, obs: np.ndarray):
        """Return (mean, log_std, raw_log_std, cache); log_std is None if deterministic."""
        out, cache = mlp_forward(self.actor, self._norm_obs(obs))
        if not self.stochastic:
            return out, None, None, cache
        m = self.act_dim
        mean, raw = out[..., :m], out[..., m:]
        return mean, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw, cache

    def policy_sample(self, obs: np.ndarray, eps: np.ndarray | None = None) -> np.ndarray:
        """Unit-box action ``g(eps; s)``; the current policy's sampler."""
        mean, log_std, _, _ = self._actor_head(obs)
        if not self.stochastic:
            return np.tanh(mean)
        if eps is None:
            eps = self.rng.standard_normal(mean.shape)
        return np.tanh(mean + np.exp(log_std) * eps)

    def select_action(self, obs, mode: str = "train") -> np.ndarray:
        """Environment-scale action for one observation (``train`` or ``eval``)."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"observation shape {obs.shape} != ({self.obs_dim},)")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        mean, log_std, _, _ = self._actor_head(obs)
        if self.stochastic:
            u = mean if mode == "eval" else mean + np.exp(log_std) * self.rng.standard_normal(self.act_dim)
            return self._to_env_action(np.tanh(u))
        action = self._to_env_action(np.tanh(mean))
        if mode == "train" and self.config.noise_std > 0:
            action = action + self.config.noise_std * self.act_half * self.rng.standard_normal(self.act_dim)
        return np.clip(action, self.act_low, self.act_high)

    # ------------------------------------------------------------------
    # critics

    def q_values(self, nets: list[MlpParams], obs: np.ndarray, unit_action: np.ndarray) -> np.ndarray:
        x = self._critic_input(obs, unit_action)
        return np.stack([mlp_forward(n, x)[0][:, 0] for n in nets])

    def behavior_bonus(self, obs: np.ndarray, unit_action: np.ndarray) -> np.ndarray:
        env_action = self._to_env_action(unit_action)
        if self.config.normalize_psi:
            return np.asarray(self.behavior.normalized_behavior_value(obs, env_action))
        return np.asarray(self.behavior.behavior_value(obs, env_action))

    def critic_target(self, batch: Batch, alpha: float, eps: np.ndarray | None = None) -> np.ndarray:
        """Bootstrapped regression targets for both critics.

        Static mode: ``r + (1 - done) * (alpha * psi_bar(s', a') + gamma * min Q'(s', a'))``.
        Adaptive mode: ``alpha * r + (1 - done) * (gamma * (1 - alpha) * psi_bar + gamma * min Q')``.
        ``a'`` is drawn from the current actor (``eps`` fixes its noise).
        """
        target, _ = self._critic_target(batch, alpha, eps)
        return target

    def _critic_target(self, batch: Batch, alpha: float, eps=None):
        cfg = self.config
        s2 = batch.next_states
        a2 = self.policy_sample(s2, eps)
        min_q = np.min(self.q_values(self.targets, s2, a2), axis=0)
        live = 1.0 - batch.dones
        adaptive = cfg.alpha_mode == "adaptive"
        bonus_weight = cfg.gamma * (1.0 - alpha) if adaptive else alpha
        psi = None
        if bonus_weight != 0.0:
            psi = self.behavior_bonus(s2, a2)
            boot = bonus_weight * psi + cfg.gamma * min_q
        else:
            boot = cfg.gamma * min_q
        reward = alpha * batch.rewards if adaptive else batch.rewards
        return reward + live * boot, psi

    def critic_loss_and_grads(self, batch: Batch, target: np.ndarray):
        x = self._critic_input(batch.states, self._to_unit_action(batch.actions))
        n = len(batch)
        losses, grads = [], []
        for net in self.critics:
            q, cache = mlp_forward(net, x)
            diff = q[:, 0] - target
            losses.append(float(np.mean(diff * diff)))
            g, _ = mlp_backward(net, cache, (2.0 / n) * diff[:, None])
            grads.append(g)
        return losses, grads

    def critic_update(self, batch: Batch, alpha: float, eps=None) -> float:
        """One Adam step per critic toward the shared target; returns the pre-step loss."""
        target, _ = self._critic_target(batch, alpha, eps)
        return self._critic_step(batch, target)

    def _critic_step(self, batch: Batch, target: np.ndarray) -> float:
        losses, grads = self.critic_loss_and_grads(batch, target)
        if not np.all(np.isfinite(losses)):
            raise NumericalError("non-finite critic loss")
        for j in range(2):
            self.critics[j], self.critic_opts[j] = adam_step(
                self.critics[j], grads[j], self.critic_opts[j], self.config.lr_critic)
        return 0.5 * (losses[0] + losses[1])

    # ------------------------------------------------------------------
    # actor

    def _min_q_action_grad(self, obs: np.ndarray, unit_action: np.ndarray):
        """Value and d/da of ``mean_i min_j Q_j(s_i, a_i)`` (critics frozen)."""
        x = self._critic_input(obs, unit_action)
        n = x.shape[0]
        outs = [mlp_forward(net, x) for net in self.critics]
        q = np.stack([o[0][:, 0] for o in outs])
        pick = np.argmin(q, axis=0)  # ties go to the first critic
        q_min = q[pick, np.arange(n)]
        grad_a = np.zeros((n, self.act_dim))
        for j, (net, (_, cache)) in enumerate(zip(self.critics, outs)):
            mask = (pick == j).astype(np.float64)[:, None] / n
            if not mask.any():
                continue
            _, gx = mlp_backward(net, cache, mask, need_params=False)
            grad_a += gx[:, self.obs_dim:]
        return float(np.mean(q_min)), q_min, grad_a

    def reparameterized_objective_grad(self, batch: Batch, eps: np.ndarray | None = None):
        """Objective ``mean min_j Q_j(s, tanh(mu + sigma * eps))`` and its actor gradient."""
        if not self.stochastic:
            raise ConfigError("reparameterized update needs a stochastic policy")
        s = batch.states
        mean, log_std, raw, cache = self._actor_head(s)
        if eps is None:
            eps = self.rng.standard_normal(mean.shape)
        std = np.exp(log_std)
        u = mean + std * eps
        t = np.tanh(u)
        objective, _, grad_t = self._min_q_action_grad(s, t)
        grad_u = grad_t * (1.0 - t * t)
        in_range = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(np.float64)
        grad_out = np.concatenate([grad_u, grad_u * std * eps * in_range], axis=1)
        grads, _ = mlp_backward(self.actor, cache, grad_out)
        return objective, grads

    def score_function_objective_grad(self, batch: Batch, eps: np.ndarray | None = None):
        """Score-function estimate ``mean[min Q(s, a) * grad log pi(a|s)]``."""
        if not self.stochastic:
            raise ConfigError("score-function update needs a stochastic policy")
        s = batch.states
        mean, log_std, raw, cache = self._actor_head(s)
        if eps is None:
            eps = self.rng.standard_normal(mean.shape)
        std = np.exp(log_std)
        t = np.tanh(mean + std * eps)
        q = np.min(self.q_values(self.critics, s, t), axis=0)
        n = len(batch)
        in_range = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(np.float64)
        # d log N(u; mu, sigma) with u held fixed: d/dmu = eps/sigma, d/dlog sigma = eps^2 - 1
        weight = (q / n)[:, None]
        grad_out = np.concatenate([weight * eps / std, weight * (eps * eps - 1.0) * in_range], axis=1)
        grads, _ = mlp_backward(self.actor, cache, grad_out)
        return float(np.mean(q)), grads

    def deterministic_objective_grad(self, batch: Batch):
        if self.stochastic:
            raise ConfigError("deterministic update needs a deterministic policy")
        s = batch.states
        out, _, _, cache = self._actor_head(s)
        t = np.tanh(out)
        objective, _, grad_t = self._min_q_action_grad(s, t)
        grads, _ = mlp_backward(self.actor, cache, grad_t * (1.0 - t * t))
        return objective, grads

    def _actor_ascent(self, grads: GradientSet) -> None:
        if self.config.grad_clip is not None:
            grads = global_norm_clip(grads, self.config.grad_clip)
        # Adam descends, so feed it the negated ascent direction
        self.actor, self.actor_opt = adam_step(self.actor, grads.scaled(-1.0), self.actor_opt, self.config.lr_actor)

    def actor_update_reparameterized(self, batch: Batch, eps=None) -> float:
        objective, grads = self.reparameterized_objective_grad(batch, eps)
        self._actor_ascent(grads)
        return objective

    def actor_update_score_function(self, batch: Batch, eps=None) -> float:
        objective, grads = self.score_function_objective_grad(batch, eps)
        self._actor_ascent(grads)
        return objective

    def actor_update_deterministic(self, batch: Batch) -> float:
        objective, grads = self.deterministic_objective_grad(batch)
        self._actor_ascent(grads)
        return objective

    def actor_update(self, batch: Batch) -> float:
        if not self.stochastic:
            return self.actor_update_deterministic(batch)
        if self.config.actor_gradient == "score":
            return self.actor_update_score_function(batch)
        return self.actor_update_reparameterized(batch)

    def target_update(self, tau: float | None = None) -> None:
        tau = self.config.tau if tau is None else tau
        self.targets = [polyak(t, c, tau) for t, c in zip(self.targets, self.critics)]

    # ------------------------------------------------------------------
    # adaptive temperature

    def aux_deviations(self, batch: Batch, eps: np.ndarray | None = None):
        """``|Q_aux(s, g(eps; s)) - (r + gamma * Q_aux(s', g(eps; s')))|`` per transition.

        Also returns the pieces needed for the auxiliary critic's gradient.
        """
        temp = self._require_temperature()
        if eps is None and self.stochastic:
            eps = self.rng.standard_normal((len(batch), self.act_dim))
        a = self.policy_sample(batch.states, eps)
        a2 = self.policy_sample(batch.next_states, eps)
        q, cache = mlp_forward(temp.net, self._critic_input(batch.states, a))
        q2, _ = mlp_forward(temp.net, self._critic_input(batch.next_states, a2))
        boot = batch.rewards + self.config.gamma * (1.0 - batch.dones) * q2[:, 0]
        return np.abs(q[:, 0] - boot), q[:, 0], boot, cache

    def adaptive_alpha(self, batch: Batch, eps=None) -> float:
        if len(batch) < 2:
            raise ValueError("adaptive alpha needs a batch of at least 2 transitions")
        d, *_ = self.aux_deviations(batch, eps)
        alpha = alpha_from_deviations(d, self.config.adaptive_omega)
        self._require_temperature().alpha = alpha
        return alpha

    def auxiliary_loss_and_grads(self, batch: Batch, eps=None):
        temp = self._require_temperature()
        _, q, boot, cache = self.aux_deviations(batch, eps)
        diff = q - boot
        grads, _ = mlp_backward(temp.net, cache, (2.0 / len(batch)) * diff[:, None])
        return float(np.mean(diff * diff)), grads

    def auxiliary_critic_update(self, batch: Batch, eps=None) -> float:
        temp = self._require_temperature()
        loss, grads = self.auxiliary_loss_and_grads(batch, eps)
        if not np.isfinite(loss):
            raise NumericalError("non-finite auxiliary critic loss")
        temp.net, temp.optimizer = adam_step(temp.net, grads, temp.optimizer, self.config.lr_aux)
        return loss

    def _require_temperature(self) -> AdaptiveTemperature:
        if self.temperature is None:
            raise ConfigError("adaptive temperature is only available with alpha_mode='adaptive'")
        return self.temperature

    # ------------------------------------------------------------------
    # training loop

    def update(self) -> UpdateInfo:
        """Critic step, actor step, and target blend on one sampled batch."""
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        if cfg.alpha_mode == "adaptive":
            alpha = self.adaptive_alpha(batch)
            self.auxiliary_critic_update(batch)
        else:
            alpha = cfg.alpha
        target, psi = self._critic_target(batch, alpha)
        critic_loss = self._critic_step(batch, target)
        objective = self.actor_update(batch)
        self.target_update()
        self.updates += 1
        return UpdateInfo(critic_loss, objective, alpha, float("nan") if psi is None else float(np.mean(psi)))

    def _retrain_behavior(self) -> None:
        if not self._pending:
            return
        rollout = Rollout(
            np.concatenate([r.states for r in self._pending]),
            np.concatenate([r.actions for r in self._pending]),
        )
        self.behavior.train(rollout)
        self._pending = []

    def train_step(self, env) -> dict:
        """One environment interaction followed by the configured updates.

        The autoencoder is retrained on the state-action pairs of the last
        ``ae_update_frequency`` episodes whenever that many have completed.
        """
        cfg = self.config
        if self._obs is None:
            if cfg.autoencoder_enabled and self.episodes > 0 and self.episodes % cfg.ae_update_frequency == 0:
                self._retrain_behavior()
            self._obs = env.reset(seed=self.seed * 1_000_003 + self.episodes)
            self._episode_return = 0.0
        obs = self._obs
        action = self.select_action(obs, "train")
        next_obs, reward, done, info = env.step(action)
        self.buffer.push(Transition(obs, action, reward, next_obs, info.get("terminal", done)))
        self.env_steps += 1
        self._episode_return += reward
        if cfg.autoencoder_enabled:
            self._episode_states.append(obs)
            self._episode_actions.append(action)
        diag = {"step": self.env_steps, "reward": reward, "done": done, "episode_return": None}
        if done:
            diag["episode_return"] = self._episode_return
            if cfg.autoencoder_enabled:
                self._pending.append(Rollout(np.array(self._episode_states), np.array(self._episode_actions),
                                             self._episode_return))
            self._episode_states, self._episode_actions = [], []
            self.episodes += 1
            self._obs = None
        else:
            self._obs = next_obs

        infos = []
        if len(self.buffer) >= max(cfg.batch_size, cfg.warmup_steps):
            for _ in range(cfg.updates_per_step):
                infos.append(self.update())
        if infos:
            diag["critic_loss"] = float(np.mean([i.critic_loss for i in infos]))
            diag["actor_objective"] = float(np.mean([i.actor_objective for i in infos]))
            diag["alpha"] = infos[-1].alpha
            diag["mean_psi_bar"] = float(np.mean([i.mean_psi_bar for i in infos]))
        else:
            diag["critic_loss"] = diag["actor_objective"] = diag["mean_psi_bar"] = float("nan")
            diag["alpha"] = self.current_alpha
        return diag

    @property
    def current_alpha(self) -> float:
        if self.temperature is not None:
            return self.temperature.alpha
        return self.config.alpha


def alpha_from_deviations(d: np.ndarray, omega: float = 10.0) -> float:
    """Sigmoid of the min-max normalized mean deviation; 0.5 when all are equal."""
    d = np.asarray(d, dtype=np.float64)
    lo, hi = float(np.min(d)), float(np.max(d))
    if hi == lo:
        return 0.5
    z = (float(np.mean(d)) - lo) / (hi - lo)
    return float(sigmoid(omega * min(max(z, 0.0), 1.0)))
