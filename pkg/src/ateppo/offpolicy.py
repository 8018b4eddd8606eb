"""Replay buffer and Retrace fitting of a skill-conditioned Q-function.

Records keep the behaviour log-probabilities of their actions and skill so
that later policies can reuse them. Targets use the truncated Retrace
recursion

    Q_ret(s_i, a_i) = Q'(s_i, a_i)
        + sum_{j=i}^{i+N-1} gamma^(j-i) (prod_{k=i+1}^{j} c_k) delta_j
    delta_j = r_hat_j + gamma * E_pi Q'(s_{j+1}, .) - Q'(s_j, a_j)

with ``c_k = min(1, pi(a_k|s_k,z) p(z|t) / (b(a_k|s_k,z) b(z|t)))`` and a
target network ``Q'`` refreshed by explicit copies.
"""
from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .envs import one_hot
from .nn import Adam, MlpSpec, ParamSet, glorot, grads_of, log_prob, mlp_output
from .objective import augment_arrays, regularizer_from_heads

BUFFER_VERSION = 1


@dataclass
class ReplayRecord:
    """One episode with its behaviour log-probabilities."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    b_a: np.ndarray
    b_z: float
    task: int
    z: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.b_a = np.asarray(self.b_a, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.b_z = float(self.b_z)
        self.task = int(self.task)
        self.terminal = bool(self.terminal)
        T = len(self.rewards)
        if len(self.actions) != T or len(self.b_a) != T or len(self.states) != T + 1:
            raise ValueError("record arrays disagree in length")
        for name in ("states", "actions", "rewards", "b_a", "z"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"record field {name} is not finite")
        if not math.isfinite(self.b_z):
            raise ValueError("record field b_z is not finite")

    def __len__(self):
        return len(self.rewards)

    @property
    def logp_z(self):
        return self.b_z

    @classmethod
    def from_trajectory(cls, traj):
        return cls(traj.states, traj.actions, traj.rewards, traj.logp_a, traj.logp_z, traj.task,
                   traj.z, traj.terminal)


class ReplayBuffer:
    """FIFO episode store; one writer, many readers.

    Readers sample from a snapshot taken under the lock, so a concurrent
    ``add`` never produces a half-updated view.
    """

    def __init__(self, capacity=10_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._records = deque(maxlen=self.capacity)
        self._lock = threading.Lock()

    def __len__(self):
        with self._lock:
            return len(self._records)

    def add(self, record: ReplayRecord):
        with self._lock:
            self._records.append(record)

    def extend(self, records):
        with self._lock:
            self._records.extend(records)

    def add_trajectories(self, trajs):
        self.extend(ReplayRecord.from_trajectory(t) for t in trajs if len(t))

    def snapshot(self):
        with self._lock:
            return list(self._records)

    def sample(self, n, rng):
        records = self.snapshot()
        if not records:
            raise ValueError("cannot sample from an empty replay buffer")
        return [records[i] for i in rng.integers(len(records), size=n)]

    def save(self, path):
        records = self.snapshot()
        lengths = np.array([len(r) for r in records], dtype=np.int64)

        def cat(name, width=None):
            parts = [getattr(r, name) for r in records]
            if parts:
                return np.concatenate(parts)
            return np.zeros((0,) if width is None else (0, width))

        obs_dim = records[0].states.shape[1] if records else 0
        act_dim = records[0].actions.shape[1] if records else 0
        with open(path, "wb") as fh:
            np.savez(
                fh, version=np.int64(BUFFER_VERSION), capacity=np.int64(self.capacity),
                lengths=lengths, states=cat("states", obs_dim), actions=cat("actions", act_dim),
                rewards=cat("rewards"), b_a=cat("b_a"),
                b_z=np.array([r.b_z for r in records]),
                task=np.array([r.task for r in records], dtype=np.int64),
                z=np.array([r.z for r in records]).reshape(len(records), -1),
                terminal=np.array([r.terminal for r in records], dtype=bool),
            )

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as f:
            if int(f["version"]) != BUFFER_VERSION:
                raise ValueError(f"unsupported replay buffer version {int(f['version'])}")
            buf = cls(int(f["capacity"]))
            lengths = f["lengths"]
            s_off = np.concatenate([[0], np.cumsum(lengths + 1)])
            a_off = np.concatenate([[0], np.cumsum(lengths)])
            for i in range(len(lengths)):
                a, b = a_off[i], a_off[i + 1]
                buf.add(ReplayRecord(
                    f["states"][s_off[i] : s_off[i + 1]], f["actions"][a:b], f["rewards"][a:b],
                    f["b_a"][a:b], float(f["b_z"][i]), int(f["task"][i]), f["z"][i],
                    bool(f["terminal"][i])))
        return buf


# -- Q-network ---------------------------------------------------------------

@dataclass
class QNet:
    """Scalar MLP over ``[s, a, z, one_hot(t)]`` with a separately held target copy."""

    spec: MlpSpec
    params: ParamSet
    target_params: ParamSet
    k: int

    @classmethod
    def create(cls, obs_dim, action_dim, latent_dim, k, rng, hidden=(32, 32)):
        spec = MlpSpec(obs_dim + action_dim + latent_dim + k, hidden, 1)
        params = ParamSet()
        sizes = spec.layer_sizes
        for i in range(len(sizes) - 1):
            params[f"W{i}"] = glorot(rng, sizes[i], sizes[i + 1])
            params[f"b{i}"] = np.zeros(sizes[i + 1])
        return cls(spec, params, params.copy(), k)

    def inputs(self, states, actions, z, tasks):
        n = len(states)
        z = np.broadcast_to(np.asarray(z, dtype=np.float64), (n, np.shape(z)[-1]))
        return np.hstack([states, actions, z, one_hot(np.asarray(tasks, dtype=int), self.k)])

    def tensors(self, requires_grad=True):
        return {k: ag.Tensor(v, requires_grad=requires_grad, name=f"q.{k}")
                for k, v in self.params.items()}

    def value(self, x, params=None):
        """Q at each row of ``x``; ``params`` may be tensors, a ParamSet, or None (online)."""
        p = self.params if params is None else params
        return mlp_output(self.spec, p, x, "q").reshape(-1)

    def target_value(self, x):
        return self.value(x, self.target_params).data

    def sync_target(self):
        self.target_params = self.params.copy()

    def copy(self):
        return QNet(self.spec, self.params.copy(), self.target_params.copy(), self.k)


# -- Retrace -----------------------------------------------------------------

def importance_weight(pi_logp, pz_logp, b_a, b_z):
    """``min(1, exp(pi + p_z - b_a - b_z))``, elementwise."""
    logr = np.asarray(pi_logp) + np.asarray(pz_logp) - np.asarray(b_a) - np.asarray(b_z)
    out = np.exp(np.minimum(logr, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def retrace_returns(rewards, q_taken, v_next, c, gamma, n_steps):
    """Truncated Retrace targets for one episode.

    ``q_taken[j] = Q'(s_j, a_j)``, ``v_next[j] = E_pi Q'(s_{j+1}, .)`` (zero
    after a terminal step) and ``c[j]`` the trace weight of step ``j``.
    Sums stop at the episode end.
    """
    if n_steps < 1:
        raise ValueError("bootstrap horizon must be >= 1")
    r = np.asarray(rewards, dtype=np.float64)
    q = np.asarray(q_taken, dtype=np.float64)
    delta = r + gamma * np.asarray(v_next, dtype=np.float64) - q
    c = np.asarray(c, dtype=np.float64)
    T = len(r)
    out = q.copy()
    for i in range(T):
        trace, disc = 1.0, 1.0
        for j in range(i, min(i + n_steps, T)):
            if j > i:
                trace *= c[j]
                disc *= gamma
                if trace == 0.0:
                    break
            out[i] += disc * trace * delta[j]
    return out


def _policy_in(states, z):
    return np.hstack([states, np.broadcast_to(z, (len(states), len(z)))])


def expected_q(qnet, agent, states, z, task, n_samples, rng, params=None):
    """Monte Carlo ``E_{a ~ pi(.|s,z)} Q(s, a; z, t)`` for every row of ``states``."""
    d = agent.policy.dist(_policy_in(states, z))
    mean, std = d.mean.data, np.exp(d.log_std.data)
    n = len(states)
    eps = rng.standard_normal((n_samples, n, mean.shape[1]))
    acts = (mean + std * eps).reshape(n_samples * n, -1)
    tiled = np.tile(states, (n_samples, 1))
    x = qnet.inputs(tiled, acts, z, np.full(n_samples * n, task))
    vals = qnet.value(x, qnet.target_params if params is None else params).data
    return vals.reshape(n_samples, n).mean(axis=0)


def retrace_target(record, qnet, agent, coeffs, n_steps=5, n_samples=8, rng=None,
                   with_h_enc=True):
    """Per-step Retrace targets for ``record`` under the current agent and target network."""
    rng = rng if rng is not None else np.random.default_rng(0)
    T = len(record)
    r_hat, *_ = augment_arrays(record, agent.inference, agent.policy, coeffs.alpha2,
                               coeffs.alpha3, agent.window, with_h_enc)
    s = record.states[:T]
    pi_logp = log_prob(agent.policy.dist(_policy_in(s, record.z)), record.actions).data
    pz_logp = float(log_prob(agent.encoder.dist(one_hot(np.array([record.task]), agent.k)),
                             record.z[None]).data[0])
    c = importance_weight(pi_logp, pz_logp, record.b_a, record.b_z)
    q_taken = qnet.target_value(qnet.inputs(s, record.actions, record.z, np.full(T, record.task)))
    v_next = expected_q(qnet, agent, record.states[1:], record.z, record.task, n_samples, rng)
    if record.terminal:
        v_next[-1] = 0.0
    return retrace_returns(r_hat, q_taken, v_next, c, coeffs.gamma, n_steps)


def q_loss(qnet, params, x, targets):
    """Mean squared error between ``Q_params(x)`` and fixed targets."""
    diff = qnet.value(x, params) - np.asarray(targets, dtype=np.float64)
    return (diff * diff).mean()


def fit_q(buffer, qnet, agent, coeffs, steps, *, target_copy_interval=100, batch_records=8,
          lr=1e-3, n_steps=5, n_samples=8, rng=None, optimizer=None, with_h_enc=True):
    """Regress ``Q`` on Retrace targets; returns ``(qnet, losses)``.

    The target network is copied from the online one after every
    ``target_copy_interval`` completed steps, never inside a step.
    """
    if len(buffer) == 0:
        raise ValueError("fit_q needs a non-empty replay buffer")
    if target_copy_interval < 1:
        raise ValueError("target_copy_interval must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = optimizer if optimizer is not None else Adam(qnet.params, lr)
    losses = []
    for step in range(steps):
        xs, ys = [], []
        for rec in buffer.sample(batch_records, rng):
            ys.append(retrace_target(rec, qnet, agent, coeffs, n_steps, n_samples, rng,
                                     with_h_enc))
            xs.append(qnet.inputs(rec.states[: len(rec)], rec.actions, rec.z,
                                  np.full(len(rec), rec.task)))
        tensors = qnet.tensors()
        loss = q_loss(qnet, tensors, np.vstack(xs), np.concatenate(ys))
        loss.backward()
        opt.step(qnet.params, grads_of(tensors))
        losses.append(float(loss.data))
        if (step + 1) % target_copy_interval == 0:
            qnet.sync_target()
    return qnet, losses


# -- policy improvement from the fitted critic --------------------------------

def offpolicy_loss(agent, qnet, te, tp, states, tasks, eps_z, eps_a, alpha, n_h_samples, rng):
    """``-E[Q(s, a, z, t)] + reg`` with ``z`` and ``a`` reparameterized through the heads.

    ``eps_z`` has one row per state (rows of one episode share a draw).
    """
    heads = agent.encoder.dist(np.eye(agent.k), te)
    z = heads.mean[tasks] + ag.exp(heads.log_std) * eps_z
    pol = agent.policy.dist(ag.concat([ag.as_tensor(states), z], axis=-1), tp)
    a = pol.mean + ag.exp(pol.log_std) * eps_a
    x = ag.concat([ag.as_tensor(states), a, z, ag.as_tensor(one_hot(tasks, agent.k))], axis=-1)
    loss = -qnet.value(x, qnet.params).mean()
    if alpha > 0:
        loss = loss + regularizer_from_heads(heads.mean, heads.log_std, alpha, n_h_samples, rng)
    return loss


def offpolicy_update(buffer, agent, qnet, coeffs, *, lr=1e-4, steps=1, batch_records=8,
                     n_h_samples=64, rng=None, optimizers=None):
    """Gradient steps on encoder and policy that ascend the fitted critic.

    Uses only stored states; no environment is touched. Returns the losses.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    opt_e, opt_p = optimizers or (Adam(agent.encoder.params, lr), Adam(agent.policy.params, lr))
    losses = []
    for _ in range(steps):
        recs = buffer.sample(batch_records, rng)
        states = np.vstack([r.states[: len(r)] for r in recs])
        tasks = np.concatenate([np.full(len(r), r.task) for r in recs])
        eps_z = np.vstack([np.broadcast_to(rng.standard_normal(agent.latent_dim),
                                           (len(r), agent.latent_dim)) for r in recs])
        eps_a = rng.standard_normal((len(states), agent.action_dim))
        te, tp = agent.encoder.tensors(), agent.policy.tensors()
        loss = offpolicy_loss(agent, qnet, te, tp, states, tasks, eps_z, eps_a, coeffs.alpha,
                              n_h_samples, rng)
        loss.backward()
        opt_e.step(agent.encoder.params, grads_of(te))
        opt_p.step(agent.policy.params, grads_of(tp))
        losses.append(float(loss.data))
    return losses


__all__ = [
    "BUFFER_VERSION", "QNet", "ReplayBuffer", "ReplayRecord", "expected_q",
    "fit_q", "importance_weight", "offpolicy_loss", "offpolicy_update", "q_loss",
    "retrace_returns", "retrace_target",
]
