"""Exact finite-MDP version of behavioral policy evaluation and iteration.

The behavioral Bellman operator adds an ``alpha``-weighted behavior term to
the usual backup::

    (T Q)(s, a) = r(s, a) + sum_s' p(s'|s, a) sum_a' pi(a'|s') [alpha psi(s', a') + gamma Q(s', a')]

Behavior values ``psi`` are a fixed table here, which makes the operator an
affine gamma-contraction. Everything is dense numpy; a policy is an
``(n_states, n_actions)`` row-stochastic array.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_TOL = 1e-9


@dataclass(frozen=True)
class FiniteMdp:
    transition: np.ndarray  # p[s, a, s']
    reward: np.ndarray  # r[s, a]
    gamma: float

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        r = np.asarray(self.reward, dtype=np.float64)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ValueError(f"inconsistent shapes: p {p.shape}, r {r.shape}")
        if np.any(p < 0) or not np.allclose(p.sum(axis=2), 1.0, atol=PROB_TOL, rtol=0):
            raise ValueError("each p[s, a, :] must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def _check_table(name: str, table, mdp: FiniteMdp) -> np.ndarray:
    t = np.asarray(table, dtype=np.float64)
    if t.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"{name} has shape {t.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    return t


def _check_policy(policy, mdp: FiniteMdp) -> np.ndarray:
    pi = _check_table("policy", policy, mdp)
    if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=PROB_TOL, rtol=0):
        raise ValueError("policy rows must be probability vectors")
    return pi


def _check_psi(psi, mdp: FiniteMdp) -> np.ndarray:
    t = _check_table("psi", psi, mdp)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("behavior values must be finite and non-negative")
    return t


def bellman_backup(mdp: FiniteMdp, psi, policy, q, alpha: float) -> np.ndarray:
    """Apply the behavioral Bellman operator once."""
    psi = _check_psi(psi, mdp)
    pi = _check_policy(policy, mdp)
    q = _check_table("q", q, mdp)
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    inner = np.sum(pi * (alpha * psi + mdp.gamma * q), axis=1)  # per next state
    return mdp.reward + mdp.transition @ inner


def behavioral_q_evaluation(mdp: FiniteMdp, psi, policy, alpha: float, tolerance: float = 1e-10,
                            max_iterations: int = 1_000_000) -> tuple[np.ndarray, int]:
    """Iterate the operator from Q = 0 until successive sup-norm change < tolerance."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    q = np.zeros_like(mdp.reward)
    for k in range(1, max_iterations + 1):
        q_next = bellman_backup(mdp, psi, policy, q, alpha)
        if np.max(np.abs(q_next - q)) < tolerance:
            return q_next, k
        q = q_next
    raise RuntimeError(f"no convergence after {max_iterations} iterations")


def policy_matrix(mdp: FiniteMdp, policy) -> np.ndarray:
    """``M[(s,a), (s',a')] = p(s'|s,a) pi(a'|s')`` on the flattened pair index."""
    pi = np.asarray(policy, dtype=np.float64)
    s, a = mdp.n_states, mdp.n_actions
    return (mdp.transition[:, :, :, None] * pi[None, None, :, :]).reshape(s * a, s * a)


def exact_q_solve(mdp: FiniteMdp, psi, policy, alpha: float) -> np.ndarray:
    """Fixed point of the operator by a direct linear solve.

    ``(I - gamma M) q = r + alpha M psi`` with ``M`` from :func:`policy_matrix`.
    """
    psi = _check_psi(psi, mdp)
    pi = _check_policy(policy, mdp)
    m = policy_matrix(mdp, pi)
    n = m.shape[0]
    rhs = mdp.reward.reshape(-1) + alpha * (m @ psi.reshape(-1))
    try:
        q = np.linalg.solve(np.eye(n) - mdp.gamma * m, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular evaluation system") from exc
    return q.reshape(mdp.n_states, mdp.n_actions)


def greedy_improvement(q, current=None, tie_tol: float = 0.0) -> np.ndarray:
    """Deterministic greedy policy; ties go to the lowest action index.

    If ``current`` (a deterministic policy) is given, its action is kept
    whenever it is within ``tie_tol`` of the row maximum, which stops policy
    iteration from cycling among equally good actions.
    """
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q must be finite")
    best = np.argmax(q, axis=1)
    if current is not None:
        keep = np.argmax(np.asarray(current), axis=1)
        rows = np.arange(q.shape[0])
        hold = q[rows, keep] >= q[rows, best] - tie_tol
        best = np.where(hold, keep, best)
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), best] = 1.0
    return pi


def uniform_policy(mdp: FiniteMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def improvement_table(mdp: FiniteMdp, psi, q, alpha: float) -> np.ndarray:
    """``alpha * psi + gamma * Q``: what the backup averages over the next action.

    Choosing action ``a`` in a state changes the bonus earned there as well
    as the continuation value, so greedy improvement has to rank actions by
    this table. Ranking by ``Q`` alone can make the next policy worse.
    """
    return alpha * _check_psi(psi, mdp) + mdp.gamma * np.asarray(q, dtype=np.float64)


def state_value(mdp: FiniteMdp, psi, q, policy, alpha: float) -> np.ndarray:
    """Per-state value under the augmented operator, ``E_pi[alpha psi + gamma Q]``."""
    return np.sum(np.asarray(policy) * improvement_table(mdp, psi, q, alpha), axis=1)


def start_value(mdp: FiniteMdp, psi, q, policy, alpha: float) -> float:
    """Augmented objective under a uniform start-state distribution."""
    return float(np.mean(state_value(mdp, psi, q, policy, alpha)))


def behavioral_policy_iteration(mdp: FiniteMdp, psi, alpha: float, tolerance: float = 1e-12,
                                initial_policy=None, improvement: str = "behavioral",
                                max_iterations: int = 10_000):
    """Alternate behavioral evaluation and greedy improvement until stable.

    ``improvement="behavioral"`` ranks actions by :func:`improvement_table`;
    ``"q"`` ranks by ``Q`` alone, which is only safe when ``psi`` is constant
    across actions. Returns ``(policy, q, trace)`` where ``trace[k]`` is the
    evaluated Q of the k-th policy, starting from the uniform policy.
    """
    if improvement not in ("behavioral", "q"):
        raise ValueError(f"unknown improvement rule {improvement!r}")
    pi = uniform_policy(mdp) if initial_policy is None else _check_policy(initial_policy, mdp)
    trace = []
    deterministic = None
    for _ in range(max_iterations):
        q, _ = behavioral_q_evaluation(mdp, psi, pi, alpha, tolerance)
        trace.append(q)
        table = improvement_table(mdp, psi, q, alpha) if improvement == "behavioral" else q
        scale = max(1.0, float(np.max(np.abs(table))))
        new_pi = greedy_improvement(table, current=deterministic, tie_tol=1e2 * tolerance * scale / (1 - mdp.gamma))
        if deterministic is not None and np.array_equal(new_pi, deterministic):
            return new_pi, q, trace
        pi = deterministic = new_pi
    raise RuntimeError("policy iteration did not stabilize")


def classical_policy_iteration(mdp: FiniteMdp) -> np.ndarray:
    """Textbook policy iteration on state values (alpha = 0 reference)."""
    s_n, a_n = mdp.n_states, mdp.n_actions
    act = np.zeros(s_n, dtype=int)
    rows = np.arange(s_n)
    while True:
        p_pi = mdp.transition[rows, act]
        v = np.linalg.solve(np.eye(s_n) - mdp.gamma * p_pi, mdp.reward[rows, act])
        q = mdp.reward + mdp.gamma * mdp.transition @ v
        best = np.argmax(q, axis=1)
        hold = q[rows, act] >= q[rows, best] - 1e-12 * max(1.0, np.max(np.abs(q)))
        new = np.where(hold, act, best)
        if np.array_equal(new, act):
            pi = np.zeros((s_n, a_n))
            pi[rows, act] = 1.0
            return pi
        act = new


def value_iteration(mdp: FiniteMdp, tolerance: float = 1e-12) -> np.ndarray:
    """Optimal Q of the plain reward MDP by value iteration (alpha = 0 reference)."""
    q = np.zeros_like(mdp.reward)
    while True:
        q_next = mdp.reward + mdp.gamma * mdp.transition @ np.max(q, axis=1)
        if np.max(np.abs(q_next - q)) < tolerance:
            return q_next
        q = q_next


def brute_force_optimal(mdp: FiniteMdp, psi, alpha: float, budget: int = 4096):
    """Enumerate every deterministic policy and keep the best start value.

    Ties go to the first policy in lexicographic action order.
    """
    psi = _check_psi(psi, mdp)
    s_n, a_n = mdp.n_states, mdp.n_actions
    if a_n ** s_n > budget:
        raise ValueError(f"{a_n}^{s_n} policies exceed the enumeration budget of {budget}")
    best_val, best = -np.inf, None
    eye = np.eye(s_n * a_n)
    for choice in itertools.product(range(a_n), repeat=s_n):
        pi = np.zeros((s_n, a_n))
        pi[np.arange(s_n), choice] = 1.0
        m = policy_matrix(mdp, pi)
        q = np.linalg.solve(eye - mdp.gamma * m, mdp.reward.reshape(-1) + alpha * (m @ psi.reshape(-1)))
        q = q.reshape(s_n, a_n)
        val = start_value(mdp, psi, q, pi, alpha)
        if val > best_val:
            best_val, best = val, (pi, q)
    return best


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               reward_scale: float = 1.0) -> FiniteMdp:
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return FiniteMdp(p, r, gamma)


def load_mdp(path: str | Path) -> FiniteMdp:
    """Read a whitespace-separated tabular MDP file.

    Format: header ``n_states n_actions gamma``; then ``n_states * n_actions``
    rows of ``n_states`` transition probabilities (row ``s * n_actions + a``
    holds ``p(. | s, a)``); then ``n_states`` rows of ``n_actions`` rewards.
    ``#`` starts a comment.
    """
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if len(tokens) < 3:
        raise ValueError("missing header 'n_states n_actions gamma'")
    n_s, n_a, gamma = int(tokens[0]), int(tokens[1]), float(tokens[2])
    values = np.array([float(t) for t in tokens[3:]])
    n_p = n_s * n_a * n_s
    if values.size != n_p + n_s * n_a:
        raise ValueError(f"expected {n_p + n_s * n_a} numbers after the header, found {values.size}")
    return FiniteMdp(values[:n_p].reshape(n_s, n_a, n_s), values[n_p:].reshape(n_s, n_a), gamma)


def save_mdp(mdp: FiniteMdp, path: str | Path) -> None:
    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r}", "# transitions"]
    for row in mdp.transition.reshape(-1, mdp.n_states):
        lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("# rewards")
    for row in mdp.reward:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")
