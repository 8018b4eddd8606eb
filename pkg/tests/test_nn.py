import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ateppo.agent import Agent
from ateppo.nn import (
    Adam,
    GaussianDist,
    GaussianMlp,
    MlpSpec,
    ParamSet,
    ShapeError,
    entropy,
    forward,
    grads_of,
    log_prob,
    sample,
)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_log_prob_closed_forms():
    d = GaussianDist(np.zeros(1), np.zeros(1))
    assert float(log_prob(d, [0.0]).data) == pytest.approx(-HALF_LOG_2PI, abs=1e-12)
    assert float(log_prob(d, [1.0]).data) == pytest.approx(-HALF_LOG_2PI - 0.5, abs=1e-12)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-3, 1)), min_size=1, max_size=4))
@settings(max_examples=50, deadline=None)
def test_log_prob_at_three_sigma_matches_high_precision(components):
    mean = np.array([m for m, _ in components])
    log_std = np.array([s for _, s in components])
    v = mean + 3 * np.exp(log_std)
    got = float(log_prob(GaussianDist(mean, log_std), v).data)
    mpmath.mp.dps = 50
    ref = mpmath.mpf(0)
    for m, s, x in zip(mean, log_std, v):
        sd = mpmath.e ** mpmath.mpf(s)
        ref += -((mpmath.mpf(x) - mpmath.mpf(m)) / sd) ** 2 / 2 - mpmath.mpf(s) \
            - mpmath.log(2 * mpmath.pi) / 2
    assert got == pytest.approx(float(ref), abs=1e-12)


def test_entropy_closed_forms():
    h1 = 0.5 * math.log(2 * math.pi * math.e)
    assert float(entropy(GaussianDist(np.zeros(1), np.zeros(1))).data) == pytest.approx(h1)
    assert float(entropy(GaussianDist(np.zeros(2), np.zeros(2))).data) == pytest.approx(2 * h1)
    d = GaussianDist(np.zeros(1), np.log([0.2]))
    assert float(entropy(d).data) == pytest.approx(-0.1905, abs=1e-4)


def test_entropy_agrees_with_monte_carlo():
    rng = np.random.default_rng(0)
    d = GaussianDist(np.array([0.3, -1.0]), np.log([0.5, 2.0]))
    v, lp = sample(GaussianDist(np.broadcast_to(d.mean.data, (200_000, 2)), d.log_std.data), rng)
    mc = -lp.data
    assert abs(mc.mean() - float(entropy(d).data)) < 3 * mc.std() / math.sqrt(len(mc))


def test_sample_moments_and_determinism():
    d = GaussianDist(np.zeros((100_000, 1)), np.zeros(1))
    v, _ = sample(d, np.random.default_rng(1))
    assert abs(v.data.mean()) < 0.02
    v2, _ = sample(d, np.random.default_rng(1))
    np.testing.assert_array_equal(v.data, v2.data)


def test_sample_at_std_floor_is_near_mean():
    net = GaussianMlp.create(MlpSpec(2, (4,), 2), np.random.default_rng(0), log_std_init=-50.0)
    d = net.dist(np.ones(2))
    assert np.allclose(np.exp(d.log_std.data), 1e-3)
    v, _ = sample(d, np.random.default_rng(0))
    assert np.max(np.abs(v.data - d.mean.data)) < 1e-2


def test_forward_examples():
    spec = MlpSpec(3, (4,), 2)
    zero = ParamSet({"W0": np.zeros((3, 4)), "b0": np.zeros(4), "W1": np.zeros((4, 2)),
                     "b1": np.zeros(2), "log_std": np.zeros(2)})
    np.testing.assert_array_equal(forward(spec, zero, np.array([5.0, -1.0, 2.0])).mean.data,
                                  np.zeros(2))
    ident = ParamSet({"W0": np.eye(2), "b0": np.zeros(2), "log_std": np.zeros(2)})
    np.testing.assert_array_equal(forward(MlpSpec(2, (), 2), ident, np.array([1.0, 2.0])).mean.data,
                                  [1.0, 2.0])
    net = GaussianMlp.create(spec, np.random.default_rng(3))
    x = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(net.dist(x).mean.data, net.dist(x).mean.data)


def test_linear_layer_gradient_is_input_outer_structure():
    spec = MlpSpec(3, (), 2)
    net = GaussianMlp.create(spec, np.random.default_rng(0))
    x = np.array([0.5, -1.0, 2.0])
    t = net.tensors()
    net.dist(x, t).mean.mean().backward()
    np.testing.assert_allclose(t["W0"].grad, np.outer(x, np.full(2, 0.5)), rtol=1e-6)


def test_capped_std_stays_in_range():
    net = GaussianMlp.create(MlpSpec(4, (8,), 3), np.random.default_rng(0), std_mode="capped",
                             std_cap=0.2)
    for raw in (-100.0, 0.0, 4.0, 100.0):
        net.params["std_raw"] = np.full(3, raw)
        std = np.exp(net.dist(np.eye(4)).log_std.data)
        assert np.all(std >= 1e-3 - 1e-15) and np.all(std <= 0.2 + 1e-15)


def test_shape_errors_name_the_layer():
    net = GaussianMlp.create(MlpSpec(3, (4,), 2), np.random.default_rng(0), label="policy")
    with pytest.raises(ShapeError, match="policy layer 0"):
        net.dist(np.ones(5))
    with pytest.raises(ShapeError):
        log_prob(net.dist(np.ones(3)), np.ones(3))


def test_non_finite_input_rejected():
    with pytest.raises(FloatingPointError):
        log_prob(GaussianDist(np.zeros(1), np.zeros(1)), [np.nan])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    agent = Agent.create(4, 3, np.random.default_rng(5))
    agent.save(tmp_path / "ckpt")
    back = Agent.load(tmp_path / "ckpt")
    for name, net in agent.networks().items():
        assert net.params.equal(back.networks()[name].params)
    x = np.random.default_rng(0).normal(size=(5, agent.policy.spec.input_dim))
    np.testing.assert_array_equal(agent.policy.dist(x).mean.data, back.policy.dist(x).mean.data)
    np.testing.assert_array_equal(agent.task_heads()[1], back.task_heads()[1])


def test_checkpoint_version_checked():
    blob = ParamSet({"a": np.ones(2)}).to_json()
    blob["version"] = 99
    with pytest.raises(ValueError, match="version"):
        ParamSet.from_json(blob)


def test_flat_round_trip_and_length_check():
    p = ParamSet({"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2)})
    assert p.with_flat(p.flat()).equal(p)
    with pytest.raises(ShapeError):
        p.with_flat(np.zeros(7))


def test_adam_zero_lr_leaves_params_and_descends_otherwise():
    p = ParamSet({"w": np.array([3.0, -2.0])})
    g = ParamSet({"w": np.array([6.0, -4.0])})
    before = p.copy()
    Adam(p, 0.0).step(p, g)
    assert p.equal(before)
    opt = Adam(p, 0.1)
    for _ in range(200):
        opt.step(p, ParamSet({"w": 2 * p["w"]}))
    assert np.all(np.abs(p["w"]) < 0.5)


def test_grads_of_fills_missing_with_zeros():
    net = GaussianMlp.create(MlpSpec(2, (3,), 1), np.random.default_rng(0))
    t = net.tensors()
    g = grads_of(t)
    assert all(np.all(v == 0) for _, v in g.items())
