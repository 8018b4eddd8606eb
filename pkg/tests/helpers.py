"""Shared fixtures-by-function for the test modules."""
import numpy as np

from ateppo.agent import Agent, rollout
from ateppo.envs import make_task_set
from ateppo.nn import grads_of
from ateppo.trainer import build_batch


def directional_gradcheck(nets, loss_fn, rng, h=1e-5):
    """Relative error between the autograd and central-difference derivative along a random direction.

    ``nets`` expose ``params`` and ``tensors()``; ``loss_fn`` maps a list of
    tensor dicts (one per net) to a scalar Tensor.
    """
    base = [n.params.copy() for n in nets]
    tensors = [n.tensors() for n in nets]
    loss = loss_fn(tensors)
    loss.backward()
    grad = np.concatenate([grads_of(t).flat() for t in tensors])
    direction = rng.standard_normal(grad.size)
    direction /= np.linalg.norm(direction)
    flat = np.concatenate([p.flat() for p in base])

    def value_at(x):
        i = 0
        for n, p in zip(nets, base):
            size = p.total_count
            n.params = p.with_flat(x[i : i + size])
            i += size
        return float(loss_fn([n.tensors(requires_grad=False) for n in nets]).data)

    fd = (value_at(flat + h * direction) - value_at(flat - h * direction)) / (2 * h)
    for n, p in zip(nets, base):
        n.params = p
    ad = float(grad @ direction)
    return abs(ad - fd) / max(abs(ad), abs(fd), 1e-8)


def random_agent(rng, env="pointmass", k=None, latent_dim=4, jitter=0.0, **env_kw):
    e = make_task_set(env, k, **env_kw)
    agent = Agent.create(e.k, latent_dim, rng, obs_dim=e.obs_dim, action_dim=e.action_dim)
    if jitter:
        for net in agent.networks().values():
            for name in net.params:
                net.params[name] = net.params[name] + jitter * rng.standard_normal(
                    net.params[name].shape)
    return agent, e


def random_batch(agent, env, rng, n_episodes=4, **kw):
    trajs = rollout(agent, env, rng.integers(agent.k, size=n_episodes), rng)
    return build_batch(trajs, agent, 0.99, 5e-2, 1e-3, **kw), trajs
