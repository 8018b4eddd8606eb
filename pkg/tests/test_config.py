import json
import os

import pytest

from ateppo.config import PRESETS, TABLE_ARGUMENTS, TrainConfig, preset

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "presets.json")


@pytest.mark.parametrize("env,algo", [("pointmass", "teppo"), ("pointmass", "ateppo"),
                                      ("nav2d", "teppo"), ("nav2d", "ateppo")])
def test_presets_match_golden_tables(env, algo):
    with open(GOLDEN) as fh:
        golden = json.load(fh)[env][algo]
    cfg = preset(env, algo).to_dict()
    assert {k: cfg[k] for k in TABLE_ARGUMENTS} == golden


def test_every_preset_validates():
    for env, algo in PRESETS:
        cfg = preset(env, algo).validate()
        assert cfg.effective_ad_steps == (1 if algo == "ateppo" else 0)


def test_dict_round_trip():
    cfg = preset("nav2d", "ateppo", n_tasks=3, seed=4)
    back = TrainConfig.from_dict(json.loads(cfg.dumps()))
    assert back == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"unknown": 1})


def test_effective_steps():
    assert preset("pointmass", "ateppo").effective_pr_steps == 4
    assert preset("nav2d", "ateppo").effective_pr_steps == 5
    assert preset("nav2d", "ateppo", n_tasks=3).effective_pr_steps == 3
    assert preset("nav2d", "ateppo", pr_steps=2).effective_pr_steps == 2


@pytest.mark.parametrize("field,value", [
    ("discount", 1.5), ("discount", 0.0), ("algo", "sac"), ("env", "atari"),
    ("lr_clip_range", 0.0), ("batch_size", 0), ("n_epochs", -1), ("embedding_max_std", 1e-4),
    ("pr_lr", -1.0), ("hidden_nonlinearity", "relu"), ("advantage_baseline", "none"),
    ("inference_reward", "none"), ("pointmass_reward", "none"), ("ad_steps", 0),
    ("ad_lr", None),
])
def test_validation_rejects(field, value):
    cfg = preset("pointmass", "ateppo")
    setattr(cfg, field, value)
    with pytest.raises(ValueError):
        cfg.validate()


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset("pointmass", "sac")
