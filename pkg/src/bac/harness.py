"""Experiment configuration, seeded runs, CSV logs, summaries and plots."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from bac.agent import ACTOR_CLIP_PRESETS, LOCOMOTION_ALPHA, BacAgent, BacConfig, ConfigError
from bac.checkpoint import save_checkpoint
from bac.envs import ENVIRONMENTS, Env, make_env

LOG_COLUMNS = ("seed", "step", "eval_return_mean", "eval_return_std", "alpha", "mean_psi_bar", "critic_loss", "wall_ms")
LOG_SCHEMA_VERSION = 1
EVAL_SEED_BASE = 1_000_000_007


# ----------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    environment: str = "DeceptiveMaze"
    agent: BacConfig = field(default_factory=BacConfig)
    total_steps: int = 100_000
    eval_every: int = 5000
    eval_episodes: int = 15
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"
    label: str = "bac"
    max_episode_steps: int | None = None

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.environment not in ENVIRONMENTS:
            errors.append(f"unknown environment {self.environment!r}")
        if self.total_steps < 0:
            errors.append("total_steps must be >= 0")
        if self.eval_every <= 0:
            errors.append("eval_every must be positive")
        if self.eval_episodes <= 0:
            errors.append("eval_episodes must be positive")
        if not self.seeds:
            errors.append("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            errors.append("seeds must be distinct")
        if self.max_episode_steps is not None and self.max_episode_steps <= 0:
            errors.append("max_episode_steps must be positive")
        if not self.label or "," in self.label:
            errors.append("label must be non-empty and free of commas")
        if errors:
            raise ConfigError("; ".join(errors))

    def make_env(self) -> Env:
        env = make_env(self.environment)
        if self.max_episode_steps is not None:
            env = type(env)(max_episode_steps=self.max_episode_steps)
        return env

    def to_dict(self) -> dict:
        return {
            "environment": self.environment, "agent": self.agent.to_dict(), "total_steps": self.total_steps,
            "eval_every": self.eval_every, "eval_episodes": self.eval_episodes, "seeds": list(self.seeds),
            "output_dir": self.output_dir, "label": self.label, "max_episode_steps": self.max_episode_steps,
        }


def parse_value(text: str):
    """Interpret one right-hand side: bool, none, int, float, comma list, or string."""
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments, dotted keys) into a nested dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key!r} conflicts with an earlier scalar")
        if leaf in node:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        node[leaf] = parse_value(value)
    return out


def experiment_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    agent = dict(d.pop("agent", {}) or {})
    preset = d.pop("preset", None)
    if preset is not None:
        if preset not in LOCOMOTION_ALPHA:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(LOCOMOTION_ALPHA)}")
        agent.setdefault("alpha", LOCOMOTION_ALPHA[preset])
        if preset in ACTOR_CLIP_PRESETS:
            agent.setdefault("grad_clip", ACTOR_CLIP_PRESETS[preset])
    if "hidden" in agent and not isinstance(agent["hidden"], list):
        agent["hidden"] = [agent["hidden"]]
    if "seeds" in d and not isinstance(d["seeds"], list):
        d["seeds"] = [d["seeds"]]
    known = set(ExperimentConfig.__dataclass_fields__) - {"agent"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown experiment settings: {sorted(unknown)}")
    for key in ("output_dir", "label", "environment"):
        if key in d:
            d[key] = str(d[key])
    return ExperimentConfig(agent=BacConfig.from_dict(agent), **d)


def load_config(path) -> ExperimentConfig:
    return experiment_from_dict(parse_config_text(Path(path).read_text()))


def with_override(config: ExperimentConfig, key: str, value) -> ExperimentConfig:
    """Copy of ``config`` with one (possibly ``agent.``-prefixed) setting replaced."""
    d = config.to_dict()
    node = d
    *parents, leaf = key.split(".")
    for p in parents:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown setting {key!r}")
        node = node[p]
    if leaf not in node:
        raise ConfigError(f"unknown setting {key!r}")
    node[leaf] = value
    return experiment_from_dict(d)


# ----------------------------------------------------------------------
# logs


@dataclass(frozen=True)
class LogRow:
    seed: int
    step: int
    eval_return_mean: float
    eval_return_std: float
    alpha: float
    mean_psi_bar: float
    critic_loss: float
    wall_ms: float

    def csv_fields(self) -> list[str]:
        return [str(self.seed), str(self.step)] + [repr(float(getattr(self, c))) for c in LOG_COLUMNS[2:]]


@dataclass
class RunLog:
    rows: list[LogRow] = field(default_factory=list)
    label: str = "bac"

    def append(self, row: LogRow) -> None:
        previous = [r.step for r in self.rows if r.seed == row.seed]
        if previous and row.step <= previous[-1]:
            raise ValueError(f"step {row.step} for seed {row.seed} does not increase")
        self.rows.append(row)

    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.rows})

    def by_seed(self, seed: int) -> list[LogRow]:
        return [r for r in self.rows if r.seed == seed]


class CsvLogWriter:
    """Append-only CSV log; every row is flushed so partial runs stay readable."""

    def __init__(self, path, label: str, config: dict | None = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(LOG_COLUMNS)
        self._fh.flush()
        meta = {"schema_version": LOG_SCHEMA_VERSION, "columns": list(LOG_COLUMNS), "label": label, "config": config}
        meta_path(self.path).write_text(json.dumps(meta, indent=2) + "\n")

    def write(self, row: LogRow) -> None:
        self._writer.writerow(row.csv_fields())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def meta_path(log_path) -> Path:
    p = Path(log_path)
    return p.with_name(p.stem + ".meta.json")


def read_log(path) -> RunLog:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [LogRow(int(r[0]), int(r[1]), *(float(x) for x in r[2:])) for r in reader if r]
    label = path.parent.name or path.stem
    mp = meta_path(path)
    if mp.exists():
        label = json.loads(mp.read_text()).get("label", label)
    log = RunLog(label=label)
    for row in rows:
        log.append(row)
    return log


# ----------------------------------------------------------------------
# running


def evaluate(agent: BacAgent, env: Env, episodes: int, seed_base: int):
    """Eval-mode returns per episode, plus the mean normalized behavior value seen."""
    returns, psi = [], []
    for k in range(episodes):
        obs = env.reset(seed=seed_base + k)
        total, done = 0.0, False
        states, actions = [], []
        while not done:
            action = agent.select_action(obs, "eval")
            states.append(obs)
            actions.append(action)
            obs, reward, done, _ = env.step(action)
            total += reward
        returns.append(total)
        psi.append(np.asarray(agent.behavior.normalized_behavior_value(np.array(states), np.array(actions),
                                                                       update=False)))
    return np.array(returns), float(np.mean(np.concatenate(psi)))


def run_seed(config: ExperimentConfig, seed: int, sink: Callable[[LogRow], None] | None = None,
             checkpoint_path=None) -> list[LogRow]:
    """Train one seed, evaluating at step 0, every ``eval_every`` steps and at the end."""
    env = config.make_env()
    eval_env = config.make_env()
    spec = env.spec
    agent = BacAgent(spec.obs_low, spec.obs_high, spec.act_low, spec.act_high, config.agent, seed=seed)
    rows = []
    start = time.perf_counter()
    losses: list[float] = []

    def record(step: int) -> None:
        # fresh, reproducible environment seeds for every evaluation
        base = EVAL_SEED_BASE + seed * 100_003 + step * config.eval_episodes
        returns, psi_bar = evaluate(agent, eval_env, config.eval_episodes, base)
        finite = [x for x in losses if math.isfinite(x)]
        row = LogRow(seed, step, float(np.mean(returns)), float(np.std(returns)), float(agent.current_alpha),
                     psi_bar, float(np.mean(finite)) if finite else float("nan"),
                     (time.perf_counter() - start) * 1e3)
        losses.clear()
        rows.append(row)
        if sink is not None:
            sink(row)

    record(0)
    for step in range(1, config.total_steps + 1):
        diag = agent.train_step(env)
        losses.append(diag["critic_loss"])
        if step % config.eval_every == 0 or step == config.total_steps:
            record(step)
    if checkpoint_path is not None:
        save_checkpoint(agent, checkpoint_path, env)
    return rows


def run_experiment(config: ExperimentConfig, log_path=None, checkpoints: bool = True) -> RunLog:
    """Run every seed in turn, streaming rows to ``log_path`` (default ``<output_dir>/log.csv``)."""
    config.validate()
    out = Path(config.output_dir)
    log_path = Path(log_path) if log_path is not None else out / "log.csv"
    log = RunLog(label=config.label)
    with CsvLogWriter(log_path, config.label, config.to_dict()) as writer:
        def sink(row):
            log.append(row)
            writer.write(row)

        for seed in config.seeds:
            ckpt = out / f"seed{seed}.npz" if checkpoints else None
            run_seed(config, seed, sink, ckpt)
    return log


def first_success(env: Env, config: BacConfig, seed: int, max_steps: int, threshold: float) -> int | None:
    """Training step at which an episode first collects a single reward >= ``threshold``."""
    spec = env.spec
    agent = BacAgent(spec.obs_low, spec.obs_high, spec.act_low, spec.act_high, config, seed=seed)
    for _ in range(max_steps):
        diag = agent.train_step(env)
        if diag["reward"] >= threshold:
            return agent.env_steps
    return None


# ----------------------------------------------------------------------
# summaries and plots


@dataclass(frozen=True)
class Summary:
    label: str
    max_average_return: float
    std: float
    step: int
    n_seeds: int


def seed_matrix(log: RunLog) -> tuple[np.ndarray, np.ndarray]:
    """Steps logged by every seed, and the (seeds x steps) matrix of eval returns."""
    seeds = log.seeds()
    if not seeds:
        raise ValueError("empty log")
    common = sorted(set.intersection(*({r.step for r in log.by_seed(s)} for s in seeds)))
    if not common:
        raise ValueError("no evaluation step is shared by all seeds")
    lookup = {(r.seed, r.step): r.eval_return_mean for r in log.rows}
    return np.array(common), np.array([[lookup[(s, t)] for t in common] for s in seeds])


def summarize(log: RunLog) -> Summary:
    """Max over steps of the across-seed mean return, with the across-seed std there."""
    steps, returns = seed_matrix(log)
    mean, std = _exact_mean_std(returns)
    best = int(np.argmax(mean))
    return Summary(log.label, float(mean[best]), float(std[best]), int(steps[best]), returns.shape[0])


def _exact_mean_std(returns: np.ndarray):
    # fsum is exactly rounded, so the statistics do not depend on seed order
    n = returns.shape[0]
    mean = np.array([math.fsum(col) / n for col in returns.T])
    var = np.array([math.fsum((col - m) ** 2) / n for col, m in zip(returns.T, mean)])
    return mean, np.sqrt(var)


def smooth(values: Sequence[float], window: int = 5) -> np.ndarray:
    """Centered moving average; edge points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if window >= n:
        return np.full(n, v.mean()) if n else v
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(v)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return (c[hi] - c[lo]) / (hi - lo)


def emit_plot(logs: RunLog | Iterable[RunLog], path, window: int = 5, title: str | None = None) -> Path:
    """SVG of the smoothed across-seed mean return per log, banded by a quarter std."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    logs = [logs] if isinstance(logs, RunLog) else list(logs)
    if not logs or any(not log.rows for log in logs):
        raise ValueError("cannot plot an empty log")
    labels = [log.label for log in logs]
    if len(set(labels)) != len(labels):
        labels = [f"{lab}-{i}" for i, lab in enumerate(labels)]
    path = Path(path)
    plt.rcParams["svg.hashsalt"] = "bac"
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        for log, label in zip(logs, labels):
            steps, returns = seed_matrix(log)
            mean, std = _exact_mean_std(returns)
            mean = smooth(mean, window)
            band = 0.25 * smooth(std, window)
            (line,) = ax.plot(steps, mean, label=label, gid=f"curve-{label}")
            ax.fill_between(steps, mean - band, mean + band, alpha=0.25, color=line.get_color(), gid=f"band-{label}")
        ax.set_xlabel("environment steps")
        ax.set_ylabel("average return")
        if title:
            ax.set_title(title)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path
