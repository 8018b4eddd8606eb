"""Training configuration and the per-environment hyperparameter presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

ALGOS = ("teppo", "ateppo")
ENVS = ("pointmass", "nav2d", "mt5")


@dataclass
class TrainConfig:
    algo: str = "ateppo"
    env: str = "pointmass"
    n_tasks: int | None = None
    seed: int = 0
    # general
    discount: float = 0.99
    batch_size: int = 4096
    n_epochs: int = 600
    # networks
    enc_hidden_sizes: tuple = (20, 20)
    inf_hidden_sizes: tuple = (20, 20)
    pol_hidden_sizes: tuple = (32, 16)
    hidden_nonlinearity: str = "tanh"
    lr_clip_range: float = 0.2
    latent_length: int = 4
    inference_window: int = 6
    embedding_max_std: float = 0.2
    policy_ent_coeff: float = 1e-3
    enc_ent_coeff: float = 1e-3
    inf_ent_coeff: float = 5e-2
    # optimizers
    pr_batch_size: int = 64
    ad_batch_size: int | None = 64
    inf_batch_size: int = 64
    pr_lr: float = 1e-3
    ad_lr: float | None = 1e-4
    inf_lr: float = 1e-3
    # alternation
    pr_steps: int | None = None
    ad_steps: int = 1
    ad_fresh_rollouts: bool = False
    advantage_baseline: str = "time"
    inference_reward: str = "bound"
    center_intrinsic: bool = False
    pointmass_reward: str = "dense"
    # estimators and bookkeeping
    h_z_samples: int = 256
    checkpoint_interval: int = 50
    horizon: int = 100
    goal_eps: float = 0.1

    def __post_init__(self):
        for name in ("enc_hidden_sizes", "inf_hidden_sizes", "pol_hidden_sizes"):
            setattr(self, name, tuple(int(h) for h in getattr(self, name)))

    @property
    def effective_pr_steps(self):
        return self.pr_steps if self.pr_steps is not None else self.effective_n_tasks

    @property
    def effective_ad_steps(self):
        return self.ad_steps if self.algo == "ateppo" else 0

    @property
    def effective_n_tasks(self):
        if self.n_tasks is not None:
            return self.n_tasks
        return {"pointmass": 4, "nav2d": 5, "mt5": 5}[self.env]

    def validate(self):
        """Raise ``ValueError`` on an inconsistent configuration."""
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.env not in ENVS:
            raise ValueError(f"env must be one of {ENVS}, got {self.env!r}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.lr_clip_range <= 0:
            raise ValueError("lr_clip_range must be positive")
        if self.advantage_baseline not in ("batch", "time"):
            raise ValueError("advantage_baseline must be 'batch' or 'time'")
        if self.inference_reward not in ("logq", "bound"):
            raise ValueError("inference_reward must be 'logq' or 'bound'")
        if self.pointmass_reward not in ("sparse", "dense"):
            raise ValueError("pointmass_reward must be 'sparse' or 'dense'")
        if self.hidden_nonlinearity != "tanh":
            raise ValueError("hidden_nonlinearity must be 'tanh'")
        for name in ("batch_size", "latent_length", "inference_window", "pr_batch_size",
                     "inf_batch_size", "h_z_samples", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be >= 0")
        if self.embedding_max_std <= 1e-3:
            raise ValueError("embedding_max_std must exceed the 1e-3 std floor")
        for name in ("policy_ent_coeff", "enc_ent_coeff", "inf_ent_coeff", "pr_lr", "inf_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.algo == "ateppo":
            if self.ad_steps < 1:
                raise ValueError("ateppo requires ad_steps >= 1")
            if self.ad_lr is None or self.ad_batch_size is None:
                raise ValueError("ateppo requires ad_lr and ad_batch_size")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        for name in ("enc_hidden_sizes", "inf_hidden_sizes", "pol_hidden_sizes"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_COMMON = dict(
    discount=0.99,
    enc_hidden_sizes=(20, 20),
    inf_hidden_sizes=(20, 20),
    pol_hidden_sizes=(32, 16),
    hidden_nonlinearity="tanh",
    lr_clip_range=0.2,
    inference_window=6,
    embedding_max_std=0.2,
)

# Hyperparameter tables per (env, algo). Fields a table leaves blank for
# TE-PPO (adversary batch size and learning rate) are None.
PRESETS = {
    ("pointmass", "teppo"): dict(
        _COMMON, batch_size=4096, n_epochs=600, latent_length=2,
        policy_ent_coeff=1e-3, enc_ent_coeff=1e-3, inf_ent_coeff=5e-2,
        pr_batch_size=32, ad_batch_size=None, inf_batch_size=32,
        pr_lr=1e-4, ad_lr=None, inf_lr=1e-3),
    ("pointmass", "ateppo"): dict(
        _COMMON, batch_size=4096, n_epochs=600, latent_length=4,
        policy_ent_coeff=1e-3, enc_ent_coeff=1e-3, inf_ent_coeff=5e-2,
        pr_batch_size=64, ad_batch_size=64, inf_batch_size=64,
        pr_lr=1e-3, ad_lr=1e-4, inf_lr=1e-3),
    ("nav2d", "teppo"): dict(
        _COMMON, batch_size=3072, n_epochs=400, latent_length=4,
        policy_ent_coeff=1e-3, enc_ent_coeff=1e-3, inf_ent_coeff=5e-2,
        pr_batch_size=32, ad_batch_size=None, inf_batch_size=32,
        pr_lr=1e-4, ad_lr=None, inf_lr=1e-3),
    ("nav2d", "ateppo"): dict(
        _COMMON, batch_size=3072, n_epochs=400, latent_length=4,
        policy_ent_coeff=1e-3, enc_ent_coeff=1e-3, inf_ent_coeff=5e-2,
        pr_batch_size=64, ad_batch_size=32, inf_batch_size=64,
        pr_lr=5e-4, ad_lr=1e-4, inf_lr=5e-4),
    # inert: the MT5 benchmark is not simulated here
    ("mt5", "teppo"): dict(
        _COMMON, batch_size=25000, n_epochs=1000, latent_length=4,
        policy_ent_coeff=2e-2, enc_ent_coeff=2e-2, inf_ent_coeff=5e-2,
        pr_batch_size=256, ad_batch_size=None, inf_batch_size=256,
        pr_lr=1e-3, ad_lr=None, inf_lr=1e-3),
    ("mt5", "ateppo"): dict(
        _COMMON, batch_size=25000, n_epochs=1000, latent_length=4,
        policy_ent_coeff=2e-2, enc_ent_coeff=2e-2, inf_ent_coeff=5e-2,
        pr_batch_size=256, ad_batch_size=256, inf_batch_size=256,
        pr_lr=5e-4, ad_lr=1e-4, inf_lr=5e-4),
}

# Names that appear as argument names in the hyperparameter tables.
TABLE_ARGUMENTS = (
    "discount", "batch_size", "n_epochs", "enc_hidden_sizes", "inf_hidden_sizes",
    "pol_hidden_sizes", "hidden_nonlinearity", "lr_clip_range", "latent_length",
    "inference_window", "embedding_max_std", "policy_ent_coeff", "enc_ent_coeff",
    "inf_ent_coeff", "pr_batch_size", "ad_batch_size", "inf_batch_size", "pr_lr", "ad_lr",
    "inf_lr",
)


def preset(env, algo, **overrides):
    key = (env, algo)
    if key not in PRESETS:
        raise ValueError(f"no preset for env={env!r}, algo={algo!r}")
    values = dict(PRESETS[key], env=env, algo=algo)
    if algo == "teppo":
        values["ad_steps"] = 0
    values.update(overrides)
    return TrainConfig(**values)
