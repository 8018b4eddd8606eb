"""Augmented rewards, entropy estimators and the clipped surrogate.

The skill objective is ``E[Q] - alpha' * (H(z) - H(z|t))`` with
``alpha' = 2 * alpha``. ``H(z)`` is the entropy of the uniform mixture of the
per-task embedding Gaussians, estimated by Monte Carlo against the exact
mixture density; ``H(z|t)`` is the average closed-form head entropy.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .agent import inference_inputs
from .nn import HALF_LOG_2PIE, LOG_2PI, entropy, log_prob


@dataclass(frozen=True)
class AugmentedStep:
    """``r_hat = r_env + alpha2 * (logq + h_enc) + alpha3 * h_pi``.

    ``h_enc`` is the single-sample entropy estimate ``-log p(z|t)`` of the
    episode's skill, or zero when the plain inference bonus is used.
    """

    r_env: float
    logq: float
    h_pi: float
    r_hat: float
    h_enc: float = 0.0


@dataclass(frozen=True)
class EntropyReport:
    h_z: float
    h_z_given_t: float
    reg: float
    h_z_se: float = 0.0


@dataclass(frozen=True)
class Coefficients:
    gamma: float = 0.99
    alpha: float = 1e-3
    alpha2: float = 5e-2
    alpha3: float = 1e-3
    clip: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("alpha", "alpha2", "alpha3", "clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def augment_arrays(traj, inference, policy, alpha2, alpha3, window, with_h_enc=False):
    """Vectorized ``(r_hat, logq, h_pi, h_enc)`` for every step of ``traj``.

    With ``with_h_enc`` every step also carries ``-log p(z|t)``, whose
    expectation is the embedding entropy ``H[p(z|t)]``. The inference term is
    then the per-step variational bound ``log q + H[p(z|t)]`` instead of
    ``log q`` alone, and shrinking the embedding no longer inflates it.
    """
    if traj.z is None:
        raise ValueError("trajectory carries no skill sample")
    T = len(traj.rewards)
    if T == 0:
        empty = np.zeros(0)
        return empty, empty, empty, empty
    x = inference_inputs(traj.states, traj.actions, window)
    logq = log_prob(inference.dist(x), np.broadcast_to(traj.z, (T, len(traj.z)))).data
    pol_in = np.hstack([traj.states[:T], np.broadcast_to(traj.z, (T, len(traj.z)))])
    h_pi = np.broadcast_to(entropy(policy.dist(pol_in)).data, (T,)).astype(np.float64)
    h_enc = np.zeros(T)
    if with_h_enc:
        h_enc[:] = -traj.logp_z
    r_hat = traj.rewards + alpha2 * (logq + h_enc) + alpha3 * h_pi
    return r_hat, logq, h_pi, h_enc


def augment(traj, inference, policy, alpha2, alpha3, window=6, with_h_enc=False):
    r_hat, logq, h_pi, h_enc = augment_arrays(traj, inference, policy, alpha2, alpha3, window,
                                              with_h_enc)
    return [AugmentedStep(float(r), float(q), float(h), float(rh), float(he))
            for r, q, h, rh, he in zip(traj.rewards, logq, h_pi, r_hat, h_enc)]


def discounted_return(values, gamma):
    values = np.asarray(values, dtype=np.float64)
    return float(np.sum(values * gamma ** np.arange(len(values))))


def returns_to_go(values, gamma):
    out = np.zeros(len(values))
    acc = 0.0
    for i in range(len(values) - 1, -1, -1):
        acc = values[i] + gamma * acc
        out[i] = acc
    return out


def normalized_advantages(returns, timesteps=None):
    """Return-to-go minus a baseline, scaled to unit std when it is non-zero.

    The baseline is the batch mean, or with ``timesteps`` the mean over the
    batch entries sharing the same time index.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if timesteps is None:
        adv = returns - returns.mean()
    else:
        t = np.asarray(timesteps, dtype=int)
        sums = np.bincount(t, weights=returns)
        counts = np.bincount(t)
        adv = returns - sums[t] / counts[t]
    sd = adv.std()
    return adv / sd if sd > 1e-8 else adv


# -- entropy of the skill embedding ------------------------------------------

def _heads(encoder, k, tensors=None):
    d = encoder.dist(np.eye(k), tensors)
    return d.mean, d.log_std


def _mixture_neg_log_density(means, log_std, k, n_samples, rng):
    """Per-sample ``-log p_mix(z)`` for ``z`` drawn from the uniform task mixture."""
    tasks = rng.integers(k, size=n_samples)
    eps = rng.standard_normal((n_samples, means.shape[-1]))
    z = means[tasks] + ag.exp(log_std) * eps                       # (n, d)
    diff = (ag.reshape(z, (n_samples, 1, -1)) - ag.reshape(means, (1, k, -1))) * ag.exp(-log_std)
    comp = (-0.5 * diff * diff - log_std - 0.5 * LOG_2PI).sum(axis=-1)  # (n, k)
    return -(ag.logsumexp(comp, axis=1) - math.log(k))


def h_z_graph(encoder, k, n_samples, rng, tensors=None):
    means, log_std = _heads(encoder, k, tensors)
    return _mixture_neg_log_density(means, log_std, k, n_samples, rng).mean()


def h_z_given_t_graph(encoder, k, tensors=None):
    _, log_std = _heads(encoder, k, tensors)
    ent = (log_std + HALF_LOG_2PIE).sum(axis=-1)
    return ent.mean() if ent.ndim else ent


def estimate_h_z(encoder, tasks, n_samples=256, rng=None, *, return_se=False):
    """Monte Carlo entropy of the uniform mixture over ``tasks`` (count or list)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    k = tasks if isinstance(tasks, (int, np.integer)) else len(tasks)
    means, log_std = _heads(encoder, k)
    vals = _mixture_neg_log_density(means, log_std, k, n_samples, rng).data
    est = float(vals.mean())
    if return_se:
        se = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("inf")
        return est, se
    return est


def regularizer_graph(encoder, k, alpha, n_samples, rng, tensors=None):
    """``2 * alpha * (H(z) - H(z|t))`` as a differentiable scalar."""
    means, log_std = _heads(encoder, k, tensors)
    return regularizer_from_heads(means, log_std, alpha, n_samples, rng)


def regularizer_from_heads(means, log_std, alpha, n_samples, rng):
    k = means.shape[0]
    h_z = _mixture_neg_log_density(means, log_std, k, n_samples, rng).mean()
    h_zt = (log_std + HALF_LOG_2PIE).sum()
    return (2.0 * alpha) * (h_z - h_zt)


def regularizer(encoder, tasks, alpha, n_samples=256, rng=None):
    """Entropy diagnostics and the skill regularizer (subtracted from the objective)."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    k = tasks if isinstance(tasks, (int, np.integer)) else len(tasks)
    h_z, se = estimate_h_z(encoder, k, n_samples, rng, return_se=True)
    h_zt = float(h_z_given_t_graph(encoder, k).data)
    reg = 0.0 if alpha == 0 else 2.0 * alpha * (h_z - h_zt)
    return EntropyReport(h_z, h_zt, reg, se)


# -- discrete identity behind the tractable form -----------------------------

def _H(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mi_identity_check(joint, atol=1e-9):
    """``(H(t) - H(t|z), H(z) - H(z|t))`` for a discrete joint table p(t, z)."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or np.any(joint < 0) or abs(joint.sum() - 1.0) > atol:
        raise ValueError("joint must be a non-negative 2-D table summing to 1")
    h_tz = _H(joint.ravel())
    h_t = _H(joint.sum(axis=1))
    h_z = _H(joint.sum(axis=0))
    return h_t - (h_tz - h_z), h_z - (h_tz - h_t)


# -- policy-gradient surrogate -----------------------------------------------

def ppo_surrogate(new_logp, old_logp, advantages, clip):
    """``-mean(min(rho * A, clip(rho, 1-c, 1+c) * A))`` with ``rho = exp(new - old)``.

    Where the clipped branch is selected and ``rho`` lies outside the clip
    range, the gradient is exactly zero; on ties the unclipped branch carries it.
    """
    new_logp = ag.as_tensor(new_logp)
    if new_logp.data.size == 0:
        raise ValueError("empty batch")
    adv = np.asarray(advantages, dtype=np.float64)
    ratio = ag.exp(new_logp - np.asarray(old_logp, dtype=np.float64))
    unclipped = ratio * adv
    clipped = ag.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    return -ag.minimum(unclipped, clipped).mean()


def ppo_surrogate_reference(new_logp, old_logp, advantages, clip):
    """Scalar-loop evaluation of :func:`ppo_surrogate` (value only)."""
    total = 0.0
    for n, o, a in zip(new_logp, old_logp, advantages):
        rho = math.exp(n - o)
        total += min(rho * a, min(max(rho, 1.0 - clip), 1.0 + clip) * a)
    return -total / len(advantages)


# -- regularizer strength condition ------------------------------------------

def alpha_bound(r_max, gamma, alpha3, log_a_max):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return r_max / (1.0 - gamma) + alpha3 * log_a_max / (1.0 - gamma)


def check_alpha(alpha, r_max, gamma, alpha3, log_a_max):
    """Return ``(ok, bound)`` and emit a warning when ``alpha`` does not exceed the bound."""
    bound = alpha_bound(r_max, gamma, alpha3, log_a_max)
    ok = alpha > bound
    if not ok:
        warnings.warn(f"alpha={alpha:g} does not exceed the bound {bound:.6g}", stacklevel=2)
    return ok, bound
