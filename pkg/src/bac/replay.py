"""Bounded FIFO replay buffer with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        return cls(
            np.array([t.state for t in transitions], dtype=np.float64),
            np.array([t.action for t in transitions], dtype=np.float64),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.array([t.next_state for t in transitions], dtype=np.float64),
            np.array([t.done for t in transitions], dtype=np.float64),
        )


class ReplayBuffer:
    """Ring buffer; once full, each push overwrites the oldest transition."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.inserted = 0

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def push(self, t: Transition) -> None:
        if not np.isfinite(t.reward):
            raise ValueError("reward must be finite")
        i = self.inserted % self.capacity
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.dones[i] = float(t.done)
        self.inserted += 1

    def _slots_oldest_first(self) -> np.ndarray:
        n = len(self)
        start = self.inserted - n
        return np.arange(start, start + n) % self.capacity

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [
            Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]),
                       self.next_states[i].copy(), bool(self.dones[i]))
            for i in self._slots_oldest_first()
        ]

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, len(self), size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform sampling with replacement over the current contents."""
        idx = self.sample_indices(n, rng)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])

    def state_dict(self) -> dict[str, np.ndarray]:
        return {
            "states": self.states, "actions": self.actions, "rewards": self.rewards,
            "next_states": self.next_states, "dones": self.dones,
            "inserted": np.array(self.inserted),
        }

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None:
        self.states = np.array(d["states"])
        self.actions = np.array(d["actions"])
        self.rewards = np.array(d["rewards"])
        self.next_states = np.array(d["next_states"])
        self.dones = np.array(d["dones"])
        self.inserted = int(d["inserted"])
        self.capacity = self.rewards.shape[0]
