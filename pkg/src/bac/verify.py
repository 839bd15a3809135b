"""Self-check of the tabular behavioral Bellman machinery on random MDPs.

Runs four checks over a shared set of random instances and reports each as
pass or fail: the operator is a gamma-contraction, iterative evaluation
matches the direct linear solve, policy iteration never lowers Q, and the
policy it returns is as good as the best deterministic policy found by
enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bac.tabular import (
    FiniteMdp,
    behavioral_policy_iteration,
    behavioral_q_evaluation,
    bellman_backup,
    brute_force_optimal,
    exact_q_solve,
    random_mdp,
    start_value,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass(frozen=True)
class Instance:
    mdp: FiniteMdp
    psi: np.ndarray
    pi: np.ndarray
    alpha: float


def random_instances(n: int, seed: int = 0, max_states: int = 6, max_actions: int = 6) -> list[Instance]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s_n = int(rng.integers(1, max_states + 1))
        a_n = int(rng.integers(1, max_actions + 1))
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
        mdp = random_mdp(rng, s_n, a_n, gamma)
        out.append(Instance(mdp, rng.uniform(0, 1, (s_n, a_n)), rng.dirichlet(np.ones(a_n), s_n),
                            float(rng.uniform(0, 1))))
    return out


def check_contraction(instances, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, ratio = -np.inf, 0.0
    for inst in instances:
        shape = inst.mdp.reward.shape
        q1, q2 = rng.normal(scale=10, size=shape), rng.normal(scale=10, size=shape)
        lhs = np.max(np.abs(bellman_backup(inst.mdp, inst.psi, inst.pi, q1, inst.alpha)
                            - bellman_backup(inst.mdp, inst.psi, inst.pi, q2, inst.alpha)))
        bound = inst.mdp.gamma * np.max(np.abs(q1 - q2))
        worst = max(worst, lhs - bound)
        ratio = max(ratio, lhs / bound)
    return CheckResult("contraction", worst <= 1e-12, f"max |TQ - TQ'| / (gamma |Q - Q'|) = {ratio:.6f}")


def check_fixed_point(instances, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for inst in instances:
        q, _ = behavioral_q_evaluation(inst.mdp, inst.psi, inst.pi, inst.alpha, tol)
        worst = max(worst, float(np.max(np.abs(q - exact_q_solve(inst.mdp, inst.psi, inst.pi, inst.alpha)))))
    return CheckResult("fixed point", worst <= 1e-6, f"max |iterative - exact| = {worst:.3e}")


def check_monotone(instances) -> CheckResult:
    violations, steps = 0, 0
    for inst in instances:
        _, _, trace = behavioral_policy_iteration(inst.mdp, inst.psi, inst.alpha)
        for prev, nxt in zip(trace, trace[1:]):
            steps += 1
            violations += int(np.any(nxt < prev - 1e-9))
    return CheckResult("monotone improvement", violations == 0, f"{violations} violations over {steps} steps")


def check_optimality(instances, budget: int = 4096) -> CheckResult:
    worst, checked = 0.0, 0
    for inst in instances:
        mdp = inst.mdp
        if mdp.n_actions ** mdp.n_states > budget:
            continue
        pi, q, _ = behavioral_policy_iteration(mdp, inst.psi, inst.alpha)
        bpi, bq = brute_force_optimal(mdp, inst.psi, inst.alpha, budget)
        gap = abs(start_value(mdp, inst.psi, q, pi, inst.alpha) - start_value(mdp, inst.psi, bq, bpi, inst.alpha))
        worst = max(worst, gap)
        checked += 1
    return CheckResult("optimality", checked > 0 and worst <= 1e-6,
                       f"max start-value gap = {worst:.3e} over {checked} enumerable instances")


def run_all(n_instances: int = 60, seed: int = 0) -> list[CheckResult]:
    instances = random_instances(n_instances, seed)
    return [check_contraction(instances), check_fixed_point(instances), check_monotone(instances),
            check_optimality(instances)]
