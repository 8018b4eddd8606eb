"""Encoder, policy and inference networks, and vectorized episode rollouts."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .envs import one_hot
from .nn import GaussianMlp, MlpSpec, ParamSet, entropy, log_prob


@dataclass
class Trajectory:
    """One episode. ``states`` has one more row than ``actions`` (the final state)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logp_a: np.ndarray
    z: np.ndarray
    logp_z: float
    task: int
    terminal: bool

    def __len__(self):
        return len(self.rewards)

    @property
    def total_reward(self):
        return float(self.rewards.sum())


@dataclass
class Agent:
    encoder: GaussianMlp
    policy: GaussianMlp
    inference: GaussianMlp
    k: int
    window: int
    obs_dim: int = 2
    action_dim: int = 2

    @property
    def latent_dim(self):
        return self.encoder.spec.output_dim

    @classmethod
    def create(cls, k, latent_dim, rng, *, obs_dim=2, action_dim=2, window=6,
               enc_hidden=(20, 20), pol_hidden=(32, 16), inf_hidden=(20, 20),
               embedding_max_std=0.2):
        encoder = GaussianMlp.create(
            MlpSpec(k, enc_hidden, latent_dim), rng, std_mode="capped",
            std_cap=embedding_max_std, label="encoder")
        policy = GaussianMlp.create(
            MlpSpec(obs_dim + latent_dim, pol_hidden, action_dim), rng, label="policy")
        inference = GaussianMlp.create(
            MlpSpec(window * obs_dim + action_dim, inf_hidden, latent_dim), rng, label="inference")
        return cls(encoder, policy, inference, k, window, obs_dim, action_dim)

    def copy(self):
        return Agent(self.encoder.copy(), self.policy.copy(), self.inference.copy(),
                     self.k, self.window, self.obs_dim, self.action_dim)

    def networks(self):
        return {"encoder": self.encoder, "policy": self.policy, "inference": self.inference}

    def task_heads(self):
        """Per-task embedding means (k, d) and the shared log std (d,)."""
        d = self.encoder.dist(np.eye(self.k))
        return d.mean.data, d.log_std.data

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        meta = {"k": self.k, "window": self.window, "obs_dim": self.obs_dim,
                "action_dim": self.action_dim}
        for name, net in self.networks().items():
            net.params.save(os.path.join(directory, f"{name}.json"))
            meta[name] = {"input_dim": net.spec.input_dim, "hidden_sizes": list(net.spec.hidden_sizes),
                          "output_dim": net.spec.output_dim, "std_mode": net.std_mode,
                          "std_cap": net.std_cap, "std_floor": net.std_floor}
        with open(os.path.join(directory, "agent.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "agent.json")) as fh:
            meta = json.load(fh)
        nets = {}
        for name in ("encoder", "policy", "inference"):
            m = meta[name]
            spec = MlpSpec(m["input_dim"], tuple(m["hidden_sizes"]), m["output_dim"])
            params = ParamSet.load(os.path.join(directory, f"{name}.json"))
            nets[name] = GaussianMlp(spec, params, m["std_mode"], m["std_cap"], m["std_floor"], name)
        return cls(nets["encoder"], nets["policy"], nets["inference"], meta["k"], meta["window"],
                   meta["obs_dim"], meta["action_dim"])


def inference_inputs(states, actions, window):
    """Rows ``[s_{i-H+1}, ..., s_i, a_i]`` with zeros before the episode start."""
    states = np.asarray(states)[: len(actions)]
    T, obs = states.shape
    padded = np.vstack([np.zeros((window - 1, obs)), states])
    cols = [padded[j : j + T] for j in range(window)]
    return np.hstack(cols + [np.asarray(actions)])


def policy_entropy(agent):
    return float(entropy(agent.policy.dist(np.zeros(agent.policy.spec.input_dim))).data)


def rollout(agent, env, tasks, rng, *, z=None, deterministic=False):
    """Run one episode per entry of ``tasks`` in lockstep.

    ``z`` (n, d) overrides the encoder draw. Noise for every episode is drawn
    at every step, so a fixed ``rng`` gives common random numbers across calls
    that differ only in ``z``.
    """
    tasks = np.asarray(tasks, dtype=int)
    n, H = len(tasks), env.horizon
    enc = agent.encoder.dist(one_hot(tasks, agent.k))
    eps_z = rng.standard_normal((n, agent.latent_dim))
    if z is None:
        z = enc.mean.data + np.exp(enc.log_std.data) * eps_z
    z = np.asarray(z, dtype=np.float64).reshape(n, agent.latent_dim)
    logp_z = log_prob(enc, z).data

    pos = np.zeros((n, env.obs_dim))
    states = np.zeros((H + 1, n, env.obs_dim))
    actions = np.zeros((H, n, env.action_dim))
    rewards = np.zeros((H, n))
    logp_a = np.zeros((H, n))
    length = np.full(n, H)
    terminal = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    for t in range(H):
        noise = rng.standard_normal((n, env.action_dim))
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        states[t, idx] = pos[idx]
        d = agent.policy.dist(np.hstack([pos[idx], z[idx]]))
        mean, std = d.mean.data, np.exp(d.log_std.data)
        a = mean if deterministic else mean + std * noise[idx]
        actions[t, idx] = a
        logp_a[t, idx] = log_prob(d, a).data
        new, r, term = env.step_batch(pos[idx], a, tasks[idx])
        pos[idx] = new
        rewards[t, idx] = r
        states[t + 1, idx] = new
        ended = idx[term]
        terminal[ended] = True
        length[ended] = t + 1
        alive[ended] = False

    out = []
    for i in range(n):
        T = length[i]
        out.append(Trajectory(
            states=states[: T + 1, i].copy(), actions=actions[:T, i].copy(),
            rewards=rewards[:T, i].copy(), logp_a=logp_a[:T, i].copy(), z=z[i].copy(),
            logp_z=float(logp_z[i]), task=int(tasks[i]), terminal=bool(terminal[i])))
    return out


def collect_rollouts(env, agent, batch_size, rng):
    """Sample ``ceil(batch_size / horizon)`` episodes with uniformly drawn tasks."""
    n_episodes = max(1, math.ceil(batch_size / env.horizon))
    tasks = rng.integers(agent.k, size=n_episodes)
    return rollout(agent, env, tasks, rng)


def goals_visited(agent, env, *, deterministic=True, rng=None, n_per_task=1):
    """Set of goal indices that any skill's rollout passes within ``eps`` of.

    Each task is rolled out with its mean embedding; every goal location (not
    only the active one) is checked along the path.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    means, _ = agent.task_heads()
    tasks = np.repeat(np.arange(agent.k), n_per_task)
    trajs = rollout(agent, env, tasks, rng, z=means[tasks], deterministic=deterministic)
    eps = env.params.eps + 1e-9
    hit = set()
    for tr in trajs:
        d = np.linalg.norm(tr.states[:, None, :] - env.goals[None], axis=2)
        hit.update(np.flatnonzero((d <= eps).any(axis=0)).tolist())
    return hit
