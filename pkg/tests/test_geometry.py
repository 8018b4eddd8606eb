import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ateppo.agent import Agent
from ateppo.geometry import (
    efficiency,
    embedding_matrix,
    gram_rank,
    gram_volume_sq,
    orthogonalize_rows,
    volume_sq_by_heights,
)


def test_examples():
    assert gram_volume_sq([3.0, 4.0]) == pytest.approx(25.0)
    assert gram_volume_sq([[3.0, 0.0], [0.0, 4.0]]) == pytest.approx(144.0)


def test_dependent_rows_give_zero():
    assert gram_volume_sq([[1.0, 2.0], [2.0, 4.0]]) == 0.0
    assert gram_volume_sq(np.ones((3, 2))) == 0.0
    assert gram_volume_sq([[0.0, 0.0]]) == 0.0
    assert gram_rank([[1.0, 2.0], [2.0, 4.0]]) == 1


def test_orthonormal_rows_give_one():
    q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
    assert gram_volume_sq(q) == pytest.approx(1.0, rel=1e-12)


@given(st.integers(1, 4), st.integers(0, 3), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_shear_and_heights_agree(m, extra, seed):
    A = np.random.default_rng(seed).normal(size=(m, m + extra))
    B = orthogonalize_rows(A)
    # successive rows are orthogonal and the volume is preserved
    G = B @ B.T
    assert np.allclose(G - np.diag(np.diag(G)), 0, atol=1e-9)
    assert volume_sq_by_heights(A) == pytest.approx(gram_volume_sq(A), rel=1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
@settings(max_examples=40, deadline=None)
def test_row_scaling(seed, c):
    A = np.random.default_rng(seed).normal(size=(3, 5))
    A2 = A.copy()
    A2[1] *= c
    assert gram_volume_sq(A2) == pytest.approx(c**2 * gram_volume_sq(A), rel=1e-9)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        gram_volume_sq([[np.nan, 1.0]])


def test_agent_efficiency_and_scaling():
    agent = Agent.create(3, 4, np.random.default_rng(0))
    means, _ = agent.task_heads()
    np.testing.assert_array_equal(embedding_matrix(agent), means)
    assert efficiency(agent) == pytest.approx(gram_volume_sq(means))
    s = np.array([1.0, 2.0, 0.5, 3.0])
    assert efficiency(agent, scaling=s) == pytest.approx(gram_volume_sq(means * s))
    assert efficiency(agent, tasks=[0]) == pytest.approx(float(means[0] @ means[0]))
    with pytest.raises(ValueError):
        efficiency(agent, scaling=[1.0, -1.0, 1.0, 1.0])
    # identical heads collapse the parallelotope
    W = agent.encoder.params["W0"]
    agent.encoder.params["W0"] = np.zeros_like(W)
    assert efficiency(agent) == 0.0
