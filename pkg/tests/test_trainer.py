import math
import warnings

import numpy as np
import pytest

from ateppo.agent import Agent, rollout
from ateppo.config import preset
from ateppo.nn import Adam, GaussianDist, log_prob
from ateppo.objective import ppo_surrogate_reference
from ateppo.trainer import (
    AlphaBoundWarning,
    Batch,
    Trainer,
    adversary_loss,
    adversary_update,
    alpha_check,
    build_batch,
    final_return,
    minibatches,
    protagonist_loss,
    protagonist_update,
    read_curve,
    write_curve,
)

from helpers import random_agent, random_batch


def small_cfg(algo="ateppo", **kw):
    base = dict(n_epochs=2, batch_size=300, horizon=30, checkpoint_interval=1, h_z_samples=32)
    base.update(kw)
    return preset("pointmass", algo, **base)


def synthetic_batch(agent, task, z, adv):
    n = len(z)
    heads = agent.encoder.dist(np.eye(agent.k))
    logp_z = log_prob(GaussianDist(heads.mean.data[np.full(n, task)], heads.log_std.data), z).data
    zeros = np.zeros(n)
    return Batch(obs=np.zeros((n, 2)), z=z, actions=np.zeros((n, 2)), tasks=np.full(n, task),
                 logp_a=zeros, logp_z=logp_z, inf_x=np.zeros((n, 14)), r_env=zeros,
                 r_hat=zeros, returns=zeros, adv=np.asarray(adv, dtype=np.float64),
                 episode=np.arange(n), step=np.zeros(n, dtype=int))


def draw_z(agent, task, n, rng):
    means, log_std = agent.task_heads()
    return means[task] + np.exp(log_std) * rng.standard_normal((n, agent.latent_dim))


def test_zero_learning_rate_leaves_parameters_bit_exact():
    rng = np.random.default_rng(0)
    agent, env = random_agent(rng, horizon=20)
    batch, _ = random_batch(agent, env, rng)
    cfg = small_cfg()
    enc, pol = agent.encoder.params.copy(), agent.policy.params.copy()
    protagonist_update(batch, agent, Adam(agent.encoder.params, 0.0),
                       Adam(agent.policy.params, 0.0), cfg, rng)
    adversary_update(batch, agent, Adam(agent.encoder.params, 0.0), cfg, rng)
    assert agent.encoder.params.equal(enc) and agent.policy.params.equal(pol)


def test_without_coefficients_protagonist_loss_is_plain_ppo():
    rng = np.random.default_rng(1)
    agent, env = random_agent(rng, horizon=20)
    trajs = rollout(agent, env, [0, 1, 2, 3], rng)
    batch = build_batch(trajs, agent, 0.99, 0.0, 0.0)
    np.testing.assert_array_equal(batch.r_hat, batch.r_env)
    agent.policy.params["log_std"] = agent.policy.params["log_std"] + 0.1
    loss = protagonist_loss(agent, agent.encoder.tensors(), agent.policy.tensors(), batch,
                            0.2, 0.0, 32, rng)
    heads = agent.encoder.dist(np.eye(agent.k))
    new = np.array([
        log_prob(agent.policy.dist(np.hstack([batch.obs[i], batch.z[i]])), batch.actions[i]).data
        + log_prob(type(heads)(heads.mean.data[batch.tasks[i]], heads.log_std.data),
                   batch.z[i]).data
        for i in range(len(batch))
    ]).ravel()
    ref = ppo_surrogate_reference(new, batch.logp_a + batch.logp_z, batch.adv, 0.2)
    assert float(loss.data) == pytest.approx(ref, abs=1e-12)


def test_adversary_gradient_vanishes_when_return_ignores_skill():
    rng = np.random.default_rng(2)
    agent, _ = random_agent(rng)
    z = draw_z(agent, 0, 20_000, rng)

    def grad_norm(adv):
        te = agent.encoder.tensors()
        adversary_loss(agent, te, synthetic_batch(agent, 0, z, adv), 0.2, 0.0, 1, rng).backward()
        return np.linalg.norm(np.concatenate([t.grad.ravel() for t in te.values()
                                              if t.grad is not None]))

    informative = (z[:, 0] - z[:, 0].mean()) / z[:, 0].std()
    independent = rng.standard_normal(len(z))
    assert grad_norm(independent) < 0.05 * grad_norm(informative)


def test_adversary_step_moves_away_from_the_high_return_mode():
    rng = np.random.default_rng(3)
    agent, _ = random_agent(rng)
    z = draw_z(agent, 1, 4000, rng)
    high = z[:, 0] > agent.task_heads()[0][1, 0]
    batch = synthetic_batch(agent, 1, z, np.where(high, 1.0, -1.0))
    before = batch.logp_z[high].mean()
    cfg = small_cfg(enc_ent_coeff=0.0)
    adversary_update(batch, agent, Adam(agent.encoder.params, 1e-3), cfg, rng)
    after = synthetic_batch(agent, 1, z, batch.adv).logp_z[high].mean()
    assert after < before


def test_adversary_update_never_touches_the_policy():
    rng = np.random.default_rng(4)
    agent, env = random_agent(rng, horizon=20)
    batch, _ = random_batch(agent, env, rng)
    digest = agent.policy.params.digest()
    enc = agent.encoder.params.copy()
    adversary_update(batch, agent, Adam(agent.encoder.params, 1e-2), small_cfg(), rng)
    assert agent.policy.params.digest() == digest
    assert not agent.encoder.params.equal(enc)


def test_zero_epochs_gives_initial_checkpoint_only():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        art = Trainer(small_cfg(n_epochs=0)).run()
    assert art.curve == [] and list(art.checkpoints) == [0]


@pytest.mark.parametrize("algo,calls", [("teppo", 0), ("ateppo", 3)])
def test_adversary_counter(algo, calls):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        art = Trainer(small_cfg(algo, n_epochs=3)).run()
    assert art.adversary_calls == calls
    assert len(art.curve) == 3


def test_run_directory_layout_and_curve_round_trip(tmp_path):
    cfg = small_cfg(n_epochs=3, checkpoint_interval=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        art = Trainer(cfg).run(str(tmp_path), save_trajectories=True)
    for name in ("config.json", "curve.csv", "trajectories.csv",
                 "checkpoints/epoch_0/agent.json", "checkpoints/epoch_2/agent.json",
                 "checkpoints/epoch_3/agent.json"):
        assert (tmp_path / name).exists(), name
    back = read_curve(tmp_path / "curve.csv")
    assert back == art.curve
    write_curve(tmp_path / "again.csv", back)
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "curve.csv").read_bytes()
    loaded = Agent.load(tmp_path / "checkpoints" / "epoch_3")
    assert loaded.policy.params.equal(art.agent.policy.params)


def test_alpha_bound_check():
    cfg = preset("pointmass", "ateppo", pointmass_reward="sparse")
    ok, bound = alpha_check(cfg)
    assert not ok
    assert bound == pytest.approx(1 / 0.01 + 1e-3 * math.log(0.04) / 0.01)
    cfg.enc_ent_coeff = bound + 1
    assert alpha_check(cfg)[0]
    with pytest.warns(AlphaBoundWarning):
        Trainer(small_cfg(n_epochs=0)).run()


def test_build_batch_options():
    rng = np.random.default_rng(5)
    agent, env = random_agent(rng, horizon=15)
    trajs = rollout(agent, env, [0, 1, 2], rng)
    trajs.append(type(trajs[0])(**{**trajs[0].__dict__, "rewards": np.zeros(0),
                                   "actions": np.zeros((0, 2)), "logp_a": np.zeros(0),
                                   "states": trajs[0].states[:1]}))
    centered = build_batch(trajs, agent, 0.99, 0.05, 1e-3, center_intrinsic=True)
    assert len(centered) == sum(len(t) for t in trajs)
    assert np.mean(centered.r_hat - centered.r_env) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        build_batch(trajs, agent, 0.99, 0.05, 1e-3, baseline="median")


def test_minibatches_partition():
    parts = minibatches(10, 4, np.random.default_rng(0))
    assert [len(p) for p in parts] == [4, 4, 2]
    assert sorted(np.concatenate(parts)) == list(range(10))


def test_final_return_tail_mean():
    curve = [{"mean_return": float(i)} for i in range(20)]
    assert final_return(curve, 10) == pytest.approx(14.5)
    assert math.isnan(final_return([]))


def test_training_is_seed_deterministic():
    def go():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return Trainer(small_cfg(seed=7)).run().curve

    assert go() == go()
