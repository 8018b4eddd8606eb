import math
import warnings

import numpy as np
import pytest

from ateppo.agent import Agent, rollout
from ateppo.causal import (
    InterventionGrid,
    ace_curve,
    agent_importance,
    default_grid,
    importance_table,
    interventional_expectation,
    normalize_importance,
    perturb_sweep,
    return_evaluator,
    write_ace_csv,
    write_importance_csv,
)
from ateppo.envs import make_task_set

W, MU = np.array([2.0, 3.0]), np.array([1.0, 2.0])


def linear(z, n_rollouts, rng):
    return float(W @ z)


def test_interventional_expectation_examples():
    rng = np.random.default_rng(0)
    for a in (-1.0, 0.0, 2.5):
        assert interventional_expectation(lambda z, n, r: 4.2, MU, 0, a, 1, rng) == 4.2
        assert interventional_expectation(linear, MU, 0, a, 1, rng) == pytest.approx(2 * a + 6)
    with pytest.raises(ValueError):
        interventional_expectation(linear, MU, 0, 0.0, 0, rng)


def test_ace_curve_linear_and_constant():
    grid = InterventionGrid(0, (0.0, 1.0, 2.0), 1)
    rep = ace_curve(linear, MU, 0, grid, np.random.default_rng(0))
    assert rep.baseline == pytest.approx(8.0)
    np.testing.assert_allclose(rep.ace, [-2.0, 0.0, 2.0])
    assert rep.importance == pytest.approx(4 / 3)
    flat = ace_curve(lambda z, n, r: 1.0, MU, 1, grid, np.random.default_rng(0))
    assert np.all(flat.ace == 0) and flat.importance == 0.0


def test_symmetric_evaluator_baseline_is_value_at_mean():
    def f(z, n, rng):
        return float(-(z[0] - MU[0]) ** 2)

    grid = InterventionGrid(0, (MU[0] - 1, MU[0], MU[0] + 1), 1)
    rep = ace_curve(f, MU, 0, grid, np.random.default_rng(0))
    # the symmetric grid average of f is f(mu) shifted by the curvature term
    assert rep.baseline == pytest.approx(-2 / 3)
    np.testing.assert_allclose(rep.ace, rep.ace[::-1])


def test_importance_table_cases():
    rng = np.random.default_rng(0)
    grids = [[InterventionGrid(i, (0.0, 1.0, 2.0), 1) for i in range(2)]]
    table, _ = importance_table([linear], [MU], grids, rng)
    np.testing.assert_allclose(table[0], [0.4, 0.6])
    single, _ = importance_table([linear], [MU], [grids[0][:1]], rng)
    assert single[0, 0] == 1.0
    dead, reports = importance_table([lambda z, n, r: 5 * z[0]], [MU], grids, rng)
    assert dead[0, 1] == 0.0 and reports[1].importance_normalized == 0.0


def test_all_zero_importance_warns_and_is_uniform():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        row = normalize_importance([0.0, 0.0, 0.0, 0.0])
    assert rec and np.allclose(row, 0.25)


def test_grid_validation():
    with pytest.raises(ValueError):
        InterventionGrid(0, ())
    with pytest.raises(ValueError):
        InterventionGrid(0, (1.0, 0.5))
    with pytest.raises(ValueError):
        InterventionGrid(0, (1.0,), n_rollouts=0)


def _agent_env(seed=0):
    env = make_task_set("nav2d", 3, horizon=25)
    return Agent.create(env.k, 3, np.random.default_rng(seed)), env


def test_intervention_at_the_mean_matches_unperturbed_rollouts():
    agent, env = _agent_env()
    means, _ = agent.task_heads()
    n = 64
    ev = return_evaluator(agent, env, 1)
    at_mean = [ev(means[1], 1, np.random.default_rng(s)) for s in range(n)]
    plain = [tr.total_reward for tr in rollout(agent, env, np.full(n, 1),
                                                np.random.default_rng(999), z=np.tile(means[1], (n, 1)))]
    se = math.sqrt(np.var(at_mean) / n + np.var(plain) / n)
    assert abs(np.mean(at_mean) - np.mean(plain)) <= 3 * se + 1e-12


def test_perturb_sweep_reproducible_and_singleton_is_noop():
    agent, env = _agent_env(1)
    vals = [-0.5, 0.0, 0.5]
    a = perturb_sweep(agent, env, 0, 1, vals, np.random.default_rng(3), deterministic=True)
    b = perturb_sweep(agent, env, 0, 1, vals, np.random.default_rng(3), deterministic=True)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x[0].states, y[0].states)
    mu = agent.task_heads()[0][0, 1]
    same = perturb_sweep(agent, env, 0, 1, [mu], np.random.default_rng(4), deterministic=True)[0][0]
    ref = rollout(agent, env, [0], np.random.default_rng(0), z=agent.task_heads()[0][:1],
                  deterministic=True)[0]
    np.testing.assert_allclose(same.states, ref.states)


def test_dead_component_sweep_leaves_trajectories_unchanged():
    agent, env = _agent_env(2)
    # the policy ignores z_2: zero its input weights
    agent.policy.params["W0"][2 + 2] = 0.0
    out = perturb_sweep(agent, env, 0, 2, [-1.0, 0.0, 1.0], np.random.default_rng(5))
    for trajs in out[1:]:
        np.testing.assert_allclose(trajs[0].states, out[0][0].states)


def test_agent_importance_and_csv(tmp_path):
    agent, env = _agent_env(3)
    table, reports = agent_importance(agent, env, n_points=3, n_rollouts=2, seed=1)
    assert table.shape == (agent.k, agent.latent_dim)
    np.testing.assert_allclose(table.sum(axis=1), 1.0)
    grid = default_grid(agent, 0, 0, n_points=5, width=2.0)
    assert len(grid.values) == 5
    write_ace_csv(tmp_path / "ace.csv", reports)
    write_importance_csv(tmp_path / "imp.csv", reports)
    lines = (tmp_path / "ace.csv").read_text().splitlines()
    assert lines[0] == "task,component,alpha,interventional,ace"
    assert len(lines) == 1 + agent.k * agent.latent_dim * 3
