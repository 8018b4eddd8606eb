"""Feed-forward networks with diagonal Gaussian heads.

Networks are tanh MLPs whose final linear layer gives the Gaussian mean.
The log standard deviation is a learned, input-independent vector. Two
squashes are available for it:

* ``free``: ``log_std`` is the raw parameter, floored at ``std_floor``.
* ``capped``: ``std = floor + (cap - floor) * sigmoid(raw)``, which keeps the
  skill embedding inside ``(floor, cap)`` while leaving a usable gradient.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LOG_2PI = math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_sizes: tuple
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"layer sizes must be positive: {self}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported hidden activation {self.activation!r}")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_sizes, self.output_dim)


class ParamSet:
    """Ordered name -> float64 array mapping."""

    def __init__(self, entries=None):
        self.entries = OrderedDict()
        for name, value in (entries or {}).items():
            self.entries[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name):
        return self.entries[name]

    def __setitem__(self, name, value):
        self.entries[name] = np.asarray(value, dtype=np.float64)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def keys(self):
        return self.entries.keys()

    @property
    def total_count(self):
        return int(sum(v.size for v in self.entries.values()))

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self.entries.items()})

    def zeros_like(self):
        return ParamSet({k: np.zeros_like(v) for k, v in self.entries.items()})

    def flat(self):
        if not self.entries:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.entries.values()])

    def with_flat(self, vector):
        if len(vector) != self.total_count:
            raise ShapeError(f"flat vector has {len(vector)} entries, expected {self.total_count}")
        out, i = ParamSet(), 0
        for k, v in self.entries.items():
            out[k] = np.asarray(vector[i : i + v.size], dtype=np.float64).reshape(v.shape)
            i += v.size
        return out

    def digest(self):
        h = hashlib.sha256()
        for k, v in self.entries.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def equal(self, other):
        return list(self.keys()) == list(other.keys()) and all(
            np.array_equal(self[k], other[k]) for k in self
        )

    def to_json(self):
        return {
            "version": CHECKPOINT_VERSION,
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.entries.items()
            },
        }

    @classmethod
    def from_json(cls, blob):
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
        return cls(
            {
                k: np.array(e["data"], dtype=np.float64).reshape(e["shape"])
                for k, e in blob["params"].items()
            }
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class GaussianDist:
    """Diagonal Gaussian. ``mean`` is (..., d); ``log_std`` broadcasts against it."""

    mean: Tensor
    log_std: Tensor

    def __post_init__(self):
        self.mean = ag.as_tensor(self.mean)
        self.log_std = ag.as_tensor(self.log_std)
        if self.log_std.shape[-1] != self.mean.shape[-1]:
            raise ShapeError("mean and log_std lengths differ")

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def std(self):
        return np.exp(self.log_std.data)


def log_prob(d: GaussianDist, v) -> Tensor:
    """Log-density in nats, summed over the last axis."""
    v = ag.as_tensor(v)
    if v.shape[-1] != d.dim:
        raise ShapeError(f"value has {v.shape[-1]} components, distribution has {d.dim}")
    if not (np.all(np.isfinite(v.data)) and np.all(np.isfinite(d.mean.data))):
        raise FloatingPointError("non-finite input to log_prob")
    z = (v - d.mean) * ag.exp(-d.log_std)
    per = -0.5 * z * z - d.log_std - 0.5 * LOG_2PI
    return per.sum(axis=-1)


def entropy(d: GaussianDist) -> Tensor:
    return (d.log_std + HALF_LOG_2PIE).sum(axis=-1)


def sample(d: GaussianDist, rng):
    """Reparameterized draw; returns ``(value, log_prob)`` as tensors."""
    eps = rng.standard_normal(np.broadcast_shapes(d.mean.shape, d.log_std.shape))
    v = d.mean + ag.exp(d.log_std) * eps
    return v, log_prob(d, v)


def glorot(rng, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class GaussianMlp:
    """MLP producing a :class:`GaussianDist` over ``spec.output_dim`` values."""

    spec: MlpSpec
    params: ParamSet
    std_mode: str = "free"
    std_cap: float = 1.0
    std_floor: float = 1e-3
    label: str = field(default="net")

    @classmethod
    def create(cls, spec, rng, *, std_mode="free", std_cap=1.0, std_floor=1e-3,
               log_std_init=0.0, label="net"):
        params = ParamSet()
        sizes = spec.layer_sizes
        for i in range(len(sizes) - 1):
            params[f"W{i}"] = glorot(rng, sizes[i], sizes[i + 1])
            params[f"b{i}"] = np.zeros(sizes[i + 1])
        if std_mode == "capped":
            # raw = 4 puts std within 2% of the cap
            params["std_raw"] = np.full(spec.output_dim, 4.0)
        elif std_mode == "free":
            params["log_std"] = np.full(spec.output_dim, float(log_std_init))
        else:
            raise ValueError(f"unknown std_mode {std_mode!r}")
        return cls(spec, params, std_mode, std_cap, std_floor, label)

    def copy(self):
        return GaussianMlp(self.spec, self.params.copy(), self.std_mode, self.std_cap,
                           self.std_floor, self.label)

    def tensors(self, requires_grad=True):
        return OrderedDict(
            (k, Tensor(v, requires_grad=requires_grad, name=f"{self.label}.{k}"))
            for k, v in self.params.items()
        )

    def dist(self, x, tensors=None) -> GaussianDist:
        """Forward pass. ``x`` is (batch, input_dim) or (input_dim,)."""
        p = tensors if tensors is not None else self.tensors(requires_grad=False)
        return GaussianDist(mlp_output(self.spec, p, x, self.label), self.log_std(p))

    def log_std(self, tensors=None):
        p = tensors if tensors is not None else self.tensors(requires_grad=False)
        if self.std_mode == "capped":
            std = self.std_floor + (self.std_cap - self.std_floor) * ag.sigmoid(p["std_raw"])
            return ag.log(std)
        return ag.maximum(p["log_std"], math.log(self.std_floor))

    def mean_np(self, x):
        return self.dist(x).mean.data


def mlp_output(spec, params, x, label="net"):
    """Final linear-layer output of a tanh MLP; ``params`` maps names to arrays or tensors."""
    h = ag.as_tensor(x)
    squeeze = h.ndim == 1
    if squeeze:
        h = h.reshape(1, -1)
    n_layers = len(spec.layer_sizes) - 1
    for i in range(n_layers):
        w = ag.as_tensor(params[f"W{i}"])
        if h.shape[-1] != w.shape[0]:
            raise ShapeError(
                f"{label} layer {i}: input width {h.shape[-1]}, weight expects {w.shape[0]}"
            )
        h = h @ w + ag.as_tensor(params[f"b{i}"])
        if i < n_layers - 1:
            h = ag.tanh(h)
    return h.reshape(-1) if squeeze else h


def forward(spec, params, x, *, std_cap=1.0, std_floor=1e-3):
    """Head distribution of the network described by ``spec`` and ``params``.

    The log-std parameterization follows the parameter names: ``std_raw`` for
    the capped squash, ``log_std`` for the free one.
    """
    mode = "capped" if "std_raw" in params.keys() else "free"
    return GaussianMlp(spec, params, mode, std_cap, std_floor).dist(x)


def grads_of(tensors):
    """Collect ``.grad`` from a name -> Tensor map; missing grads become zeros."""
    return ParamSet(
        {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    )


class Adam:
    def __init__(self, params: ParamSet, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ParamSet, grads: ParamSet):
        """Descent step, in place on ``params``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            step = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = params[k] - step
