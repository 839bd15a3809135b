"""Save and restore a training run so it resumes bit for bit.

A checkpoint is a single ``.npz`` archive. Network weights, optimizer
moments, replay storage and the unfinished episode are stored as arrays;
everything else (config, counters, bit-generator states, the environment's
own state) goes into a JSON document kept under the ``meta`` key.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from bac.agent import AdaptiveTemperature, BacAgent, BacConfig
from bac.behavior import Rollout
from bac.numerics import AdamState, MlpParams

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _networks(agent: BacAgent) -> dict[str, tuple[MlpParams, AdamState | None]]:
    nets = {
        "actor": (agent.actor, agent.actor_opt),
        "critic0": (agent.critics[0], agent.critic_opts[0]),
        "critic1": (agent.critics[1], agent.critic_opts[1]),
        "target0": (agent.targets[0], None),
        "target1": (agent.targets[1], None),
        "autoencoder": (agent.behavior.autoencoder, agent.behavior.optimizer),
    }
    if agent.temperature is not None:
        nets["aux"] = (agent.temperature.net, agent.temperature.optimizer)
    return nets


def _adam_meta(opt: AdamState) -> dict:
    return {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}


def save_checkpoint(agent: BacAgent, path, env=None) -> Path:
    """Write everything needed to continue training ``agent`` (and ``env``)."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    adam = {}
    for name, (net, opt) in _networks(agent).items():
        arrays[f"net/{name}"] = net.flat
        if opt is not None:
            arrays[f"adam_m/{name}"] = opt.m
            arrays[f"adam_v/{name}"] = opt.v
            adam[name] = _adam_meta(opt)
    for key, value in agent.buffer.state_dict().items():
        arrays[f"buffer/{key}"] = value
    arrays["episode/states"] = np.asarray(agent._episode_states, dtype=np.float64).reshape(-1, agent.obs_dim)
    arrays["episode/actions"] = np.asarray(agent._episode_actions, dtype=np.float64).reshape(-1, agent.act_dim)
    for i, r in enumerate(agent._pending):
        arrays[f"pending/{i}/states"] = r.states
        arrays[f"pending/{i}/actions"] = r.actions
    if agent._obs is not None:
        arrays["obs"] = agent._obs

    meta = {
        "version": FORMAT_VERSION,
        "config": agent.config.to_dict(),
        "seed": agent.seed,
        "bounds": {k: getattr(agent, k).tolist() for k in ("obs_low", "obs_high", "act_low", "act_high")},
        "adam": adam,
        "counters": {"env_steps": agent.env_steps, "updates": agent.updates, "episodes": agent.episodes},
        "episode_return": agent._episode_return,
        "pending_returns": [r.episode_return for r in agent._pending],
        "rng": agent.rng.bit_generator.state,
        "behavior_rng": agent.behavior.rng.bit_generator.state,
        "running_max": agent.behavior.running_max,
        "temperature_alpha": None if agent.temperature is None else agent.temperature.alpha,
        "env": None if env is None else {"name": env.name, "state": env.get_state()},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_meta(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["meta"]).decode())


def load_checkpoint(path, env=None) -> BacAgent:
    """Rebuild the agent stored at ``path``; restores ``env`` in place if given."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(bytes(arrays.pop("meta")).decode())
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")

    b = meta["bounds"]
    agent = BacAgent(b["obs_low"], b["obs_high"], b["act_low"], b["act_high"],
                     BacConfig.from_dict(meta["config"]), seed=meta["seed"])

    def restore(name):
        like, opt = _networks(agent)[name]
        net = MlpParams.from_flat(arrays[f"net/{name}"].copy(), like)
        if opt is None:
            return net, None
        m = meta["adam"][name]
        return net, AdamState(arrays[f"adam_m/{name}"].copy(), arrays[f"adam_v/{name}"].copy(),
                              m["step"], m["beta1"], m["beta2"], m["eps"])

    agent.actor, agent.actor_opt = restore("actor")
    c0, o0 = restore("critic0")
    c1, o1 = restore("critic1")
    agent.critics, agent.critic_opts = [c0, c1], [o0, o1]
    agent.targets = [restore("target0")[0], restore("target1")[0]]
    agent.behavior.autoencoder, agent.behavior.optimizer = restore("autoencoder")
    agent.behavior.running_max = meta["running_max"]
    agent.behavior.rng.bit_generator.state = meta["behavior_rng"]
    if agent.temperature is not None:
        net, opt = restore("aux")
        agent.temperature = AdaptiveTemperature(net, opt, meta["temperature_alpha"])

    agent.buffer.load_state_dict({k[len("buffer/"):]: v for k, v in arrays.items() if k.startswith("buffer/")})
    agent.rng.bit_generator.state = meta["rng"]
    c = meta["counters"]
    agent.env_steps, agent.updates, agent.episodes = c["env_steps"], c["updates"], c["episodes"]
    agent._episode_return = meta["episode_return"]
    agent._episode_states = list(arrays["episode/states"])
    agent._episode_actions = list(arrays["episode/actions"])
    agent._pending = [
        Rollout(arrays[f"pending/{i}/states"], arrays[f"pending/{i}/actions"], ret)
        for i, ret in enumerate(meta["pending_returns"])
    ]
    agent._obs = arrays["obs"].copy() if "obs" in arrays else None

    if env is not None:
        saved = meta["env"]
        if saved is None:
            raise CheckpointError("checkpoint holds no environment state")
        if saved["name"] != env.name:
            raise CheckpointError(f"checkpoint environment {saved['name']!r} != {env.name!r}")
        env.set_state(saved["state"])
    return agent
