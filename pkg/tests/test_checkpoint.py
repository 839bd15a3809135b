import numpy as np
import pytest

from bac.agent import BacAgent, BacConfig
from bac.checkpoint import CheckpointError, load_checkpoint, read_meta, save_checkpoint
from bac.envs import DeceptiveMaze, SparseHill


def build(seed, env, **kw):
    s = env.spec
    kw.setdefault("hidden", (16, 16))
    kw.setdefault("warmup_steps", 100)
    kw.setdefault("buffer_capacity", 3000)
    kw.setdefault("ae_update_frequency", 2)
    return BacAgent(s.obs_low, s.obs_high, s.act_low, s.act_high, BacConfig(**kw), seed=seed)


@pytest.mark.parametrize("kw", [{}, {"policy": "deterministic"}, {"alpha_mode": "adaptive"}])
def test_resume_is_bitwise_identical(tmp_path, kw):
    env = DeceptiveMaze(max_episode_steps=120)
    agent = build(1, env, **kw)
    for _ in range(450):  # mid-episode, with pending autoencoder data
        agent.train_step(env)
    path = save_checkpoint(agent, tmp_path / "ck.npz", env)
    env2 = DeceptiveMaze(max_episode_steps=120)
    resumed = load_checkpoint(path, env2)
    for _ in range(1000):
        assert repr(agent.train_step(env)) == repr(resumed.train_step(env2))
    np.testing.assert_array_equal(agent.actor.flat, resumed.actor.flat)
    np.testing.assert_array_equal(agent.behavior.autoencoder.flat, resumed.behavior.autoencoder.flat)


def test_buffer_wraparound_survives(tmp_path):
    env = SparseHill()
    agent = build(2, env, buffer_capacity=150)
    for _ in range(400):
        agent.train_step(env)
    resumed = load_checkpoint(save_checkpoint(agent, tmp_path / "ck.npz", env))
    a, b = agent.buffer.contents(), resumed.buffer.contents()
    assert len(a) == len(b) == 150
    assert all(np.array_equal(x.state, y.state) and x.reward == y.reward for x, y in zip(a, b))


def test_meta_contents(tmp_path):
    env = DeceptiveMaze()
    agent = build(3, env, alpha=0.07)
    meta = read_meta(save_checkpoint(agent, tmp_path / "ck.npz", env))
    assert meta["version"] == 1 and meta["config"]["alpha"] == 0.07 and meta["env"]["name"] == "DeceptiveMaze"


def test_environment_mismatch(tmp_path):
    env = DeceptiveMaze()
    path = save_checkpoint(build(4, env), tmp_path / "ck.npz", env)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, SparseHill())


def test_missing_environment_state(tmp_path):
    path = save_checkpoint(build(5, DeceptiveMaze()), tmp_path / "ck.npz")
    assert load_checkpoint(path).env_steps == 0
    with pytest.raises(CheckpointError):
        load_checkpoint(path, DeceptiveMaze())
