"""Adversarial alternation between the skill encoder and the policy.

Each epoch collects one on-policy batch, runs ``A`` adversary passes in which
only the encoder moves (descending the return term), then ``P`` protagonist
passes in which policy and encoder ascend it jointly. The objective is
``O = E[Q] - reg``: the protagonist ascends it and the adversary descends it,
so the regularizer enters the objective with the same sign in both phases.
With ``A = 0`` the loop is the non-adversarial baseline.
"""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .agent import Agent, collect_rollouts, inference_inputs, rollout
from .config import TrainConfig
from .envs import make_task_set, reward_range, write_trajectories
from .nn import Adam, GaussianDist, grads_of, log_prob
from .objective import (
    alpha_bound,
    augment_arrays,
    normalized_advantages,
    ppo_surrogate,
    regularizer,
    regularizer_from_heads,
    returns_to_go,
)

BASELINES = ("batch", "time")
INFERENCE_REWARDS = ("logq", "bound")
CURVE_COLUMNS = ("epoch", "mean_return", "mean_augmented_return", "success_rate", "h_z",
                 "h_z_given_t")


class TrainingError(RuntimeError):
    pass


class FrozenPolicyError(RuntimeError):
    """The policy changed during an adversary phase."""


class AlphaBoundWarning(UserWarning):
    pass


@dataclass
class Batch:
    """Steps of a set of trajectories, flattened."""

    obs: np.ndarray
    z: np.ndarray
    actions: np.ndarray
    tasks: np.ndarray
    logp_a: np.ndarray
    logp_z: np.ndarray
    inf_x: np.ndarray
    r_env: np.ndarray
    r_hat: np.ndarray
    returns: np.ndarray
    adv: np.ndarray
    episode: np.ndarray
    step: np.ndarray

    def __len__(self):
        return len(self.adv)

    def take(self, idx):
        return Batch(**{k: v[idx] for k, v in self.__dict__.items()})


def build_batch(trajs, agent, gamma, alpha2, alpha3, baseline="time", inference_reward="bound",
                center_intrinsic=False):
    """Augment rewards, compute returns-to-go and normalized advantages.

    With ``center_intrinsic`` the entropy and inference terms of ``r_hat`` are
    shifted to zero batch mean, so their constant offset cannot favour longer
    or shorter episodes.
    """
    if baseline not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}")
    if inference_reward not in INFERENCE_REWARDS:
        raise ValueError(f"inference_reward must be one of {INFERENCE_REWARDS}")
    parts = {k: [] for k in Batch.__dataclass_fields__}
    trajs = [tr for tr in trajs if len(tr)]
    r_hats = [augment_arrays(tr, agent.inference, agent.policy, alpha2, alpha3, agent.window,
                             inference_reward == "bound")[0] for tr in trajs]
    if center_intrinsic and trajs:
        shift = np.mean(np.concatenate([rh - tr.rewards for rh, tr in zip(r_hats, trajs)]))
        r_hats = [rh - shift for rh in r_hats]
    for ep, (tr, r_hat) in enumerate(zip(trajs, r_hats)):
        T = len(tr)
        zs = np.broadcast_to(tr.z, (T, len(tr.z)))
        parts["obs"].append(tr.states[:T])
        parts["z"].append(zs)
        parts["actions"].append(tr.actions)
        parts["tasks"].append(np.full(T, tr.task))
        parts["logp_a"].append(tr.logp_a)
        parts["logp_z"].append(np.full(T, tr.logp_z))
        parts["inf_x"].append(inference_inputs(tr.states, tr.actions, agent.window))
        parts["r_env"].append(tr.rewards)
        parts["r_hat"].append(r_hat)
        parts["returns"].append(returns_to_go(r_hat, gamma))
        parts["episode"].append(np.full(T, ep))
        parts["step"].append(np.arange(T))
    steps = np.concatenate(parts["step"]) if baseline == "time" else None
    parts["adv"] = [normalized_advantages(np.concatenate(parts["returns"]), steps)]
    return Batch(**{k: np.concatenate(v) for k, v in parts.items()})


# -- losses ------------------------------------------------------------------

def protagonist_loss(agent, te, tp, mb, clip, alpha, n_samples, rng):
    """Negated objective: clipped surrogate on ``log pi(a|s,z) + log p(z|t)`` plus the regularizer."""
    heads = agent.encoder.dist(np.eye(agent.k), te)
    pol = agent.policy.dist(np.hstack([mb.obs, mb.z]), tp)
    new_logp = log_prob(pol, mb.actions) + _logp_z(heads, mb)
    loss = ppo_surrogate(new_logp, mb.logp_a + mb.logp_z, mb.adv, clip)
    if alpha > 0:
        loss = loss + regularizer_from_heads(heads.mean, heads.log_std, alpha, n_samples, rng)
    return loss


def adversary_loss(agent, te, mb, clip, alpha, n_samples, rng):
    """The objective itself: pessimistic clipped return term on ``p(z|t)`` minus the regularizer."""
    heads = agent.encoder.dist(np.eye(agent.k), te)
    loss = ppo_surrogate(_logp_z(heads, mb), mb.logp_z, -mb.adv, clip)
    if alpha > 0:
        loss = loss - regularizer_from_heads(heads.mean, heads.log_std, alpha, n_samples, rng)
    return loss


def inference_loss(agent, ti, mb):
    return -log_prob(agent.inference.dist(mb.inf_x, ti), mb.z).mean()


def _logp_z(heads, mb):
    return log_prob(GaussianDist(heads.mean[mb.tasks], heads.log_std), mb.z)


def _check(loss, what):
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite {what} loss")


# -- single updates ----------------------------------------------------------

def protagonist_update(mb, agent, opt_enc, opt_pol, cfg, rng):
    te, tp = agent.encoder.tensors(), agent.policy.tensors()
    loss = protagonist_loss(agent, te, tp, mb, cfg.lr_clip_range, cfg.enc_ent_coeff,
                            cfg.h_z_samples, rng)
    _check(loss, "protagonist")
    loss.backward()
    opt_enc.step(agent.encoder.params, grads_of(te))
    opt_pol.step(agent.policy.params, grads_of(tp))
    return float(loss.data)


def inference_update(mb, agent, opt_inf):
    ti = agent.inference.tensors()
    loss = inference_loss(agent, ti, mb)
    _check(loss, "inference")
    loss.backward()
    opt_inf.step(agent.inference.params, grads_of(ti))
    return float(loss.data)


def adversary_update(mb, agent, opt_adv, cfg, rng):
    """One encoder step against the frozen policy."""
    before = agent.policy.params.digest()
    te = agent.encoder.tensors()
    tp = agent.policy.tensors(requires_grad=False)
    loss = adversary_loss(agent, te, mb, cfg.lr_clip_range, cfg.enc_ent_coeff,
                          cfg.h_z_samples, rng)
    _check(loss, "adversary")
    loss.backward()
    if any(t.grad is not None for t in tp.values()):
        raise FrozenPolicyError("gradient reached the frozen policy")
    opt_adv.step(agent.encoder.params, grads_of(te))
    if agent.policy.params.digest() != before:
        raise FrozenPolicyError("policy parameters changed during the adversary step")
    return float(loss.data)


def minibatches(n, size, rng):
    perm = rng.permutation(n)
    return [perm[i : i + size] for i in range(0, n, size)]


# -- the loop ----------------------------------------------------------------

@dataclass
class RunArtifacts:
    curve: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    config_snapshot: dict = field(default_factory=dict)
    agent: Agent | None = None
    adversary_calls: int = 0


class Trainer:
    def __init__(self, cfg: TrainConfig, env=None, agent=None):
        self.cfg = cfg
        self.env = env if env is not None else make_env(cfg)
        init_ss, roll_ss, mb_ss, reg_ss, adv_ss, diag_ss = np.random.SeedSequence(cfg.seed).spawn(6)
        self.rng_rollout = np.random.default_rng(roll_ss)
        self.rng_minibatch = np.random.default_rng(mb_ss)
        self.rng_reg = np.random.default_rng(reg_ss)
        self.rng_adv = np.random.default_rng(adv_ss)
        self.rng_diag = np.random.default_rng(diag_ss)
        self.agent = agent if agent is not None else Agent.create(
            self.env.k, cfg.latent_length, np.random.default_rng(init_ss),
            obs_dim=self.env.obs_dim, action_dim=self.env.action_dim, window=cfg.inference_window,
            enc_hidden=cfg.enc_hidden_sizes, pol_hidden=cfg.pol_hidden_sizes,
            inf_hidden=cfg.inf_hidden_sizes, embedding_max_std=cfg.embedding_max_std)
        self.ad_steps = cfg.effective_ad_steps
        self.pr_steps = cfg.effective_pr_steps
        a = self.agent
        self.opt_enc = Adam(a.encoder.params, cfg.pr_lr)
        self.opt_pol = Adam(a.policy.params, cfg.pr_lr)
        self.opt_inf = Adam(a.inference.params, cfg.inf_lr)
        self.opt_adv = Adam(a.encoder.params, cfg.ad_lr or 0.0)
        self.adversary_calls = 0
        self.last_batch_trajs = []

    def _batch(self, trajs):
        c = self.cfg
        return build_batch(trajs, self.agent, c.discount, c.inf_ent_coeff, c.policy_ent_coeff,
                           c.advantage_baseline, c.inference_reward, c.center_intrinsic)

    def epoch(self, n):
        c, a = self.cfg, self.agent
        trajs = collect_rollouts(self.env, a, c.batch_size, self.rng_rollout)
        self.last_batch_trajs = trajs
        batch = self._batch(trajs)
        ent = regularizer(a.encoder, a.k, c.enc_ent_coeff, c.h_z_samples, self.rng_diag)
        row = {
            "epoch": n,
            "mean_return": float(np.mean([t.total_reward for t in trajs])),
            "mean_augmented_return": float(np.sum(batch.r_hat) / len(trajs)),
            "success_rate": float(np.mean([t.terminal for t in trajs])),
            "h_z": ent.h_z,
            "h_z_given_t": ent.h_z_given_t,
        }
        try:
            for _ in range(self.ad_steps):
                if c.ad_fresh_rollouts:
                    batch = self._batch(collect_rollouts(self.env, a, c.batch_size,
                                                         self.rng_rollout))
                for idx in minibatches(len(batch), c.ad_batch_size, self.rng_minibatch):
                    adversary_update(batch.take(idx), a, self.opt_adv, c, self.rng_adv)
                self.adversary_calls += 1
            for _ in range(self.pr_steps):
                for idx in minibatches(len(batch), c.pr_batch_size, self.rng_minibatch):
                    protagonist_update(batch.take(idx), a, self.opt_enc, self.opt_pol, c,
                                       self.rng_reg)
                for idx in minibatches(len(batch), c.inf_batch_size, self.rng_minibatch):
                    inference_update(batch.take(idx), a, self.opt_inf)
        except (TrainingError, ag.GradientError, FloatingPointError) as exc:
            raise TrainingError(f"epoch {n}: {exc}") from exc
        return row

    def run(self, output_dir=None, *, save_trajectories=False, progress=None):
        c = self.cfg
        c.validate()
        _alpha_warning(c, self.env)
        art = RunArtifacts(config_snapshot=c.to_dict())
        if output_dir:
            os.makedirs(output_dir, exist_ok=True)
            with open(os.path.join(output_dir, "config.json"), "w") as fh:
                fh.write(c.dumps())
        self._checkpoint(art, 0, output_dir)
        for n in range(c.n_epochs):
            row = self.epoch(n)
            art.curve.append(row)
            if progress:
                progress(row)
            if c.checkpoint_interval and (n + 1) % c.checkpoint_interval == 0:
                self._checkpoint(art, n + 1, output_dir)
        if c.n_epochs and c.n_epochs not in art.checkpoints:
            self._checkpoint(art, c.n_epochs, output_dir)
        art.agent = self.agent
        art.adversary_calls = self.adversary_calls
        if output_dir:
            write_curve(os.path.join(output_dir, "curve.csv"), art.curve)
            if save_trajectories:
                write_trajectories(os.path.join(output_dir, "trajectories.csv"),
                                   evaluation_rollouts(self.agent, self.env))
        return art

    def _checkpoint(self, art, n, output_dir):
        snap = self.agent.copy()
        art.checkpoints[n] = snap
        if output_dir:
            snap.save(os.path.join(output_dir, "checkpoints", f"epoch_{n}"))


def make_env(cfg):
    extra = {"reward": cfg.pointmass_reward} if cfg.env == "pointmass" else {}
    return make_task_set(cfg.env, cfg.effective_n_tasks, horizon=cfg.horizon, eps=cfg.goal_eps,
                         **extra)


def alpha_check(cfg, env=None):
    """``(ok, bound)`` for the configured ``enc_ent_coeff``.

    ``log_a_max`` is the log volume of the action box.
    """
    env = env if env is not None else make_env(cfg)
    log_a_max = math.log((2 * env.action_limit) ** env.action_dim)
    bound = alpha_bound(reward_range(env), cfg.discount, cfg.policy_ent_coeff, log_a_max)
    return cfg.enc_ent_coeff > bound, bound


def _alpha_warning(cfg, env):
    ok, bound = alpha_check(cfg, env)
    if not ok:
        warnings.warn(f"enc_ent_coeff={cfg.enc_ent_coeff:g} does not exceed the alpha bound "
                      f"{bound:.6g}", AlphaBoundWarning, stacklevel=3)


def run(cfg: TrainConfig, output_dir=None, **kwargs) -> RunArtifacts:
    return Trainer(cfg).run(output_dir, **kwargs)


def evaluation_rollouts(agent, env, *, deterministic=True, n_per_task=1, seed=0):
    """One rollout per task (or ``n_per_task``) at the task's mean embedding."""
    means, _ = agent.task_heads()
    tasks = np.repeat(np.arange(agent.k), n_per_task)
    return rollout(agent, env, tasks, np.random.default_rng(seed), z=means[tasks],
                   deterministic=deterministic)


# -- curve i/o ---------------------------------------------------------------

def write_curve(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in CURVE_COLUMNS[1:]])


def read_curve(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


def final_return(curve, last=10):
    """Mean of ``mean_return`` over the last ``last`` epochs."""
    tail = [r["mean_return"] for r in curve[-last:]]
    return float(np.mean(tail)) if tail else float("nan")


def load_config(path):
    with open(path) as fh:
        return TrainConfig.from_dict(json.load(fh))
