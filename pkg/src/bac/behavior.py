"""Autoencoder-based behavior values for state-action pairs.

The behavior value of ``(s, a)`` is the squared reconstruction error of an
autoencoder on the concatenated, bound-normalized vector ``[s, a]``. Pairs the
autoencoder has seen often reconstruct well (small value); unfamiliar pairs
reconstruct poorly (large value).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bac.numerics import AdamState, MlpParams, NumericalError, adam_step, init_mlp, mlp_backward, mlp_forward


@dataclass
class Rollout:
    """Ordered state-action pairs of one trajectory plus its return."""

    states: np.ndarray
    actions: np.ndarray
    episode_return: float = 0.0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        if len(self.states) == 0 or self.states.shape[0] != self.actions.shape[0]:
            raise ValueError("a rollout needs a non-empty, equal number of states and actions")

    def __len__(self) -> int:
        return self.states.shape[0]

    def pairs(self) -> np.ndarray:
        return np.concatenate([self.states, self.actions], axis=1)


def autoencoder_sizes(width: int) -> list[int]:
    """wide -> bottleneck -> wide topology for an input of ``width`` features."""
    return [width, 2 * width, math.ceil(width / 2), 2 * width, width]


@dataclass
class BehaviorModel:
    autoencoder: MlpParams
    optimizer: AdamState
    input_low: np.ndarray | None = None
    input_high: np.ndarray | None = None
    running_max: float = 0.0
    update_frequency: int = 10
    train_epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if self.autoencoder.input_dim != self.autoencoder.output_dim:
            raise ValueError("autoencoder input and output widths must agree")
        if self.update_frequency <= 0 or self.train_epochs <= 0 or self.batch_size <= 0:
            raise ValueError("update_frequency, train_epochs and batch_size must be positive")

    @classmethod
    def create(cls, state_dim: int, action_dim: int, rng: np.random.Generator,
               input_low=None, input_high=None, **kwargs) -> "BehaviorModel":
        width = state_dim + action_dim
        ae = init_mlp(autoencoder_sizes(width), ["relu", "relu", "relu", "linear"], rng)
        return cls(
            ae, AdamState.fresh(ae),
            None if input_low is None else np.asarray(input_low, dtype=np.float64),
            None if input_high is None else np.asarray(input_high, dtype=np.float64),
            rng=np.random.default_rng(rng.integers(2**63)),
            **kwargs,
        )

    @property
    def width(self) -> int:
        return self.autoencoder.input_dim

    def _inputs(self, states, actions) -> np.ndarray:
        s = np.asarray(states, dtype=np.float64)
        a = np.asarray(actions, dtype=np.float64)
        x = np.concatenate([s, a], axis=-1)
        if x.shape[-1] != self.width:
            raise ValueError(f"state+action width {x.shape[-1]} != autoencoder width {self.width}")
        if self.input_low is not None:
            x = 2.0 * (x - self.input_low) / (self.input_high - self.input_low) - 1.0
        return x

    def behavior_value(self, states, actions) -> np.ndarray | float:
        """Squared L2 reconstruction error; vectorized over leading axes."""
        x = self._inputs(states, actions)
        recon, _ = mlp_forward(self.autoencoder, x)
        err = recon - x
        psi = np.sum(err * err, axis=-1)
        return float(psi) if np.ndim(psi) == 0 else psi

    def normalized_behavior_value(self, states, actions, update: bool = True) -> np.ndarray | float:
        """Behavior value divided by the running maximum.

        The maximum of the queried values is folded into the running maximum
        before dividing, so every output lies in ``[0, 1]``. With
        ``update=False`` the fold is temporary and the stored maximum is left
        alone.
        """
        psi = self.behavior_value(states, actions)
        peak = max(self.running_max, float(np.max(psi)))
        if update:
            self.running_max = peak
        if peak <= 0.0:
            return np.zeros_like(psi) if np.ndim(psi) else 0.0
        out = np.asarray(psi) / peak
        return float(out) if np.ndim(out) == 0 else out

    def reconstruction_loss(self, x: np.ndarray) -> float:
        recon, _ = mlp_forward(self.autoencoder, x)
        return float(np.mean(np.sum((recon - x) ** 2, axis=1)))

    def train(self, rollout: Rollout) -> "BehaviorModel":
        """Minibatch Adam on the mean reconstruction loss over the rollout.

        Resets the running maximum, since the old scale no longer applies to
        the retrained autoencoder.
        """
        x = self._inputs(rollout.states, rollout.actions)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite rollout data")
        n = x.shape[0]
        for _ in range(self.train_epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, self.batch_size):
                xb = x[order[start:start + self.batch_size]]
                recon, cache = mlp_forward(self.autoencoder, xb)
                grad_out = 2.0 * (recon - xb) / xb.shape[0]
                grads, _ = mlp_backward(self.autoencoder, cache, grad_out)
                self.autoencoder, self.optimizer = adam_step(self.autoencoder, grads, self.optimizer, self.learning_rate)
        self.running_max = 0.0
        return self


def estimate_policy_behavior(model: BehaviorModel, rollouts: Sequence[Rollout]) -> float:
    """Monte-Carlo estimate of the expected behavior value over all pairs."""
    if not rollouts:
        raise ValueError("need at least one rollout")
    values = np.concatenate([np.atleast_1d(model.behavior_value(r.states, r.actions)) for r in rollouts])
    # fsum is exactly rounded, so the result does not depend on rollout order
    return math.fsum(values) / values.size
