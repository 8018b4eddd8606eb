"""Average causal effect of individual skill components on episode return.

The interventional expectation of component ``i`` at value ``alpha`` is the
return obtained at the mean embedding with ``z_i`` overridden (the first-order
term of the expansion around the mean vanishes in expectation). The baseline
is the average over the intervention grid, and the importance of a component
is the grid average of ``|ACE|``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .agent import rollout


@dataclass(frozen=True)
class InterventionGrid:
    component: int
    values: tuple
    n_rollouts: int = 16
    task: int = 0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("intervention grid is empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("intervention values must be strictly increasing")
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")


@dataclass
class AceReport:
    component: int
    task: int
    values: np.ndarray
    interventional: np.ndarray
    baseline: float
    ace: np.ndarray
    importance: float
    importance_normalized: float | None = field(default=None)


def interventional_expectation(evaluator, mu, i, alpha, n_rollouts, rng):
    """``f(mu | do(z_i = alpha))``; ``evaluator(z, n_rollouts, rng)`` returns mean return."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    z = np.array(mu, dtype=np.float64)
    z[i] = alpha
    return float(evaluator(z, n_rollouts, rng))


def ace_curve(evaluator, mu, i, grid: InterventionGrid, rng):
    """Interventional curve over ``grid``; every value reuses the same rollout seed."""
    seed = int(rng.integers(2**63 - 1))
    vals = np.array(grid.values)
    inter = np.array([
        interventional_expectation(evaluator, mu, i, a, grid.n_rollouts,
                                   np.random.default_rng(seed))
        for a in vals
    ])
    baseline = float(inter.mean())
    ace = inter - baseline
    return AceReport(i, grid.task, vals, inter, baseline, ace, float(np.mean(np.abs(ace))))


def normalize_importance(row):
    row = np.asarray(row, dtype=np.float64)
    total = row.sum()
    if total <= 0:
        warnings.warn("all components have zero importance; reporting a uniform row", stacklevel=2)
        return np.full(len(row), 1.0 / len(row))
    return row / total


def importance_table(evaluators, mus, grids, rng):
    """Normalized importance, shape (tasks, components), plus all reports.

    ``evaluators[t]`` and ``mus[t]`` are per task; ``grids[t][i]`` is the grid
    for component ``i`` of task ``t``.
    """
    table, reports = [], []
    for t, ev in enumerate(evaluators):
        row_reports = [ace_curve(ev, mus[t], i, g, rng) for i, g in enumerate(grids[t])]
        norm = normalize_importance([r.importance for r in row_reports])
        for r, v in zip(row_reports, norm):
            r.importance_normalized = float(v)
        table.append(norm)
        reports.extend(row_reports)
    return np.array(table), reports


# -- environment-backed evaluation -------------------------------------------

def return_evaluator(agent, env, task, *, deterministic=False):
    """Mean undiscounted return of ``n_rollouts`` episodes of ``task`` with a fixed skill."""

    def evaluate(z, n_rollouts, rng):
        zs = np.broadcast_to(np.asarray(z, dtype=np.float64), (n_rollouts, agent.latent_dim))
        trajs = rollout(agent, env, np.full(n_rollouts, task), rng, z=zs,
                        deterministic=deterministic)
        return float(np.mean([tr.total_reward for tr in trajs]))

    return evaluate


def default_grid(agent, task, component, n_points=20, n_rollouts=16, width=2.0):
    """``n_points`` values spanning ``mean +/- width * std`` of the task's embedding."""
    means, log_std = agent.task_heads()
    mu, sd = means[task, component], float(np.exp(log_std[component]))
    return InterventionGrid(component, tuple(np.linspace(mu - width * sd, mu + width * sd, n_points)),
                            n_rollouts, task)


def agent_importance(agent, env, *, n_points=20, n_rollouts=16, seed=0, deterministic=False):
    """ACE reports and the normalized importance table for every task and component."""
    means, _ = agent.task_heads()
    evaluators = [return_evaluator(agent, env, t, deterministic=deterministic)
                  for t in range(agent.k)]
    grids = [[default_grid(agent, t, i, n_points, n_rollouts) for i in range(agent.latent_dim)]
             for t in range(agent.k)]
    return importance_table(evaluators, means, grids, np.random.default_rng(seed))


def perturb_sweep(agent, env, task, i, values, rng, *, n_rollouts=1, deterministic=False):
    """Trajectories at the task's mean embedding with ``z_i`` set to each value.

    Every value reuses one seed, so sweeps differ only through the intervention.
    """
    means, _ = agent.task_heads()
    seed = int(rng.integers(2**63 - 1))
    out = []
    for v in values:
        z = means[task].copy()
        z[i] = v
        out.append(rollout(agent, env, np.full(n_rollouts, task), np.random.default_rng(seed),
                           z=np.broadcast_to(z, (n_rollouts, len(z))), deterministic=deterministic))
    return out


def write_ace_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "component", "alpha", "interventional", "ace"])
        for r in reports:
            for a, y, c in zip(r.values, r.interventional, r.ace):
                w.writerow([r.task, r.component, repr(float(a)), repr(float(y)), repr(float(c))])


def write_importance_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "component", "importance", "importance_normalized"])
        for r in reports:
            w.writerow([r.task, r.component, repr(r.importance), repr(r.importance_normalized)])
