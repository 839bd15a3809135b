"""Small deterministic continuous-control environments with deceptive rewards.

Both environments follow a gym-like ``reset(seed) / step(action)`` protocol.
``step`` returns ``(observation, reward, done, info)``; ``done`` is true when
the episode ends for any reason, and ``info["terminal"]`` distinguishes a
true terminal state (goal reached) from the time-limit cut.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from bac.behavior import Rollout


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    act_low: np.ndarray
    act_high: np.ndarray
    obs_low: np.ndarray
    obs_high: np.ndarray
    max_episode_steps: int

    def __post_init__(self):
        for lo, hi, n in ((self.act_low, self.act_high, self.act_dim), (self.obs_low, self.obs_high, self.obs_dim)):
            if lo.shape != (n,) or hi.shape != (n,):
                raise ValueError("bounds must have one entry per dimension")
            if not np.all(lo < hi):
                raise ValueError("every lower bound must be below its upper bound")
        if self.max_episode_steps <= 0:
            raise ValueError("max_episode_steps must be positive")


class EpisodeOver(RuntimeError):
    """``step`` was called after the episode finished."""


class Env:
    spec: EnvSpec
    name: str = "env"

    def __init__(self):
        self.elapsed = 0
        self._done = True
        self._rng = np.random.default_rng(0)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self.elapsed = 0
        self._done = False
        self._reset_state()
        return self.observation()

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        if self._done:
            raise EpisodeOver("episode finished; call reset() first")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite action")
        clipped = np.clip(a, self.spec.act_low, self.spec.act_high)
        info = {"clipped": bool(np.any(clipped != a))}
        reward, terminal = self._advance(clipped)
        self.elapsed += 1
        truncated = not terminal and self.elapsed >= self.spec.max_episode_steps
        self._done = terminal or truncated
        info["terminal"] = terminal
        info["truncated"] = truncated
        return self.observation(), float(reward), self._done, info

    # subclass hooks
    def _reset_state(self) -> None:
        raise NotImplementedError

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        raise NotImplementedError

    def observation(self) -> np.ndarray:
        raise NotImplementedError

    def get_state(self) -> dict:
        raise NotImplementedError

    def set_state(self, state: dict) -> None:
        raise NotImplementedError


@dataclass(frozen=True)
class Wall:
    """Axis-aligned wall segment: ``axis`` is the coordinate held fixed."""

    axis: int
    at: float
    lo: float
    hi: float


class DeceptiveMaze(Env):
    """Point mass in a walled square with a near +1 trap and a far +10 goal.

    Layout (arena ``[-4, 4]^2``, start at the origin)::

        +-----------------------------+
        |G                            |     G: +10 goal disc at (-3.5, 3.5)
        |                             |
        |=====================        |     horizontal wall y = 1, x <= 2.5
        |                             |
        |      T      S               |     T: +1 trap disc at (-1.5, 0)
        |                             |     S: start
        +-----------------------------+

    The goal lies behind a wall: the path to it first heads right, away from
    the trap, rounds the wall end, then doubles back along the top. Both
    discs are terminal.

    Dynamics per step: ``x += dt * v`` then ``v = drag * (v + dt * a)`` with
    ``dt = 0.1`` and ``drag = 0.95``. A move that would cross a wall or the
    arena border is stopped at the boundary and the velocity component
    normal to it is zeroed.
    """

    name = "DeceptiveMaze"
    dt = 0.1
    drag = 0.95
    half_width = 4.0
    start = (0.0, 0.0)
    trap_center = (-1.5, 0.0)
    trap_radius = 0.5
    trap_reward = 1.0
    goal_center = (-3.5, 3.5)
    goal_radius = 0.75
    goal_reward = 10.0
    walls = (Wall(axis=1, at=1.0, lo=-4.0, hi=2.5),)
    max_speed = 2.0

    def __init__(self, max_episode_steps: int = 400):
        super().__init__()
        w, v = self.half_width, self.max_speed
        self.spec = EnvSpec(
            obs_dim=4,
            act_dim=2,
            act_low=-np.ones(2),
            act_high=np.ones(2),
            obs_low=np.array([-w, -w, -v, -v]),
            obs_high=np.array([w, w, v, v]),
            max_episode_steps=max_episode_steps,
        )
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)

    def _reset_state(self) -> None:
        # the start is fixed; the seed only matters for API symmetry
        self.pos = np.array(self.start, dtype=np.float64)
        self.vel = np.zeros(2)

    def observation(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        new = self.pos + self.dt * self.vel
        vel = self.drag * (self.vel + self.dt * action)
        new, vel = self._collide(self.pos, new, vel)
        self.pos = new
        self.vel = np.clip(vel, -self.max_speed, self.max_speed)
        if _within(self.pos, self.goal_center, self.goal_radius):
            return self.goal_reward, True
        if _within(self.pos, self.trap_center, self.trap_radius):
            return self.trap_reward, True
        return 0.0, False

    def _collide(self, old: np.ndarray, new: np.ndarray, vel: np.ndarray):
        new = new.copy()
        vel = vel.copy()
        eps = 1e-6
        # border first, so a wall that ends on the border cannot be skirted outside it
        w = self.half_width
        for k in range(2):
            if new[k] < -w or new[k] > w:
                new[k] = np.clip(new[k], -w, w)
                vel[k] = 0.0
        for wall in self.walls:
            k, j = wall.axis, 1 - wall.axis
            if (old[k] - wall.at) * (new[k] - wall.at) < 0 or new[k] == wall.at:
                # crossing point along the other axis
                frac = (wall.at - old[k]) / (new[k] - old[k]) if new[k] != old[k] else 0.0
                cross = old[j] + frac * (new[j] - old[j])
                if wall.lo <= cross <= wall.hi:
                    new[k] = wall.at - eps if old[k] < wall.at else wall.at + eps
                    vel[k] = 0.0
        return new, vel

    def get_state(self) -> dict:
        return {
            "pos": self.pos.tolist(),
            "vel": self.vel.tolist(),
            "elapsed": self.elapsed,
            "done": self._done,
            "rng": self._rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.pos = np.array(state["pos"], dtype=np.float64)
        self.vel = np.array(state["vel"], dtype=np.float64)
        self.elapsed = int(state["elapsed"])
        self._done = bool(state["done"])
        self._rng.bit_generator.state = state["rng"]


class SparseHill(Env):
    """Mountain-car style valley with an underpowered motor.

    Position in ``[-1.2, 0.6]``, velocity in ``[-0.07, 0.07]``. Reward is 0
    everywhere except +1 on reaching the right hilltop (``x >= 0.5``),
    which ends the episode. The motor cannot climb directly, so the agent
    must swing back and forth to build momentum.
    """

    name = "SparseHill"
    min_pos, max_pos = -1.2, 0.6
    max_vel = 0.07
    goal_pos = 0.5
    power = 0.0015
    gravity = 0.0025

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec(
            obs_dim=2,
            act_dim=1,
            act_low=-np.ones(1),
            act_high=np.ones(1),
            obs_low=np.array([self.min_pos, -self.max_vel]),
            obs_high=np.array([self.max_pos, self.max_vel]),
            max_episode_steps=max_episode_steps,
        )
        self.x = -0.5
        self.v = 0.0

    def _reset_state(self) -> None:
        self.x = float(self._rng.uniform(-0.6, -0.4))
        self.v = 0.0

    def observation(self) -> np.ndarray:
        return np.array([self.x, self.v])

    def _advance(self, action: np.ndarray) -> tuple[float, bool]:
        v = self.v + self.power * float(action[0]) - self.gravity * np.cos(3.0 * self.x)
        v = float(np.clip(v, -self.max_vel, self.max_vel))
        x = float(np.clip(self.x + v, self.min_pos, self.max_pos))
        if x == self.min_pos and v < 0:
            v = 0.0
        self.x, self.v = x, v
        if x >= self.goal_pos:
            return 1.0, True
        return 0.0, False

    def get_state(self) -> dict:
        return {"x": self.x, "v": self.v, "elapsed": self.elapsed, "done": self._done,
                "rng": self._rng.bit_generator.state}

    def set_state(self, state: dict) -> None:
        self.x = float(state["x"])
        self.v = float(state["v"])
        self.elapsed = int(state["elapsed"])
        self._done = bool(state["done"])
        self._rng.bit_generator.state = state["rng"]


def _within(p: np.ndarray, center, radius: float) -> bool:
    return float((p[0] - center[0]) ** 2 + (p[1] - center[1]) ** 2) <= radius * radius


ENVIRONMENTS: dict[str, Callable[[], Env]] = {
    "DeceptiveMaze": DeceptiveMaze,
    "SparseHill": SparseHill,
}


def make_env(name: str) -> Env:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def collect_rollout(env: Env, policy: Callable[[np.ndarray], np.ndarray], max_steps: int,
                    seed: int | None = None) -> Rollout:
    """Run ``policy`` from a fresh reset until the episode ends or ``max_steps``."""
    obs = env.reset(seed)
    states, actions, total = [], [], 0.0
    for _ in range(max_steps):
        act = np.asarray(policy(obs), dtype=np.float64)
        states.append(obs)
        actions.append(np.clip(act, env.spec.act_low, env.spec.act_high))
        obs, reward, done, _ = env.step(act)
        total += reward
        if done:
            break
    return Rollout(np.array(states), np.array(actions), total)
