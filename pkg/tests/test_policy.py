import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soprank.clustering import kmeans
from soprank.policy import (
    PolicyError,
    PolicySpec,
    act,
    build_representation,
    load_policy,
    rank_labels,
    save_policy,
)


def _feedforward(rng, dims):
    ws = [rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [rng.normal(size=b) for b in dims[1:]]
    return PolicySpec("feedforward", dims[0], dims[-1], ws, bs, hidden=dims[1:-1])


def test_zero_linear_policy_gives_zero_action():
    p = PolicySpec.linear(np.zeros((3, 2)))
    np.testing.assert_array_equal(act(p, [1.0, -2.0, 3.0]), [0.0, 0.0])


def test_clip_edge():
    p = PolicySpec.linear(np.eye(2), action_clip=[[-0.25, 0.25], [-0.25, 0.25]])
    np.testing.assert_allclose(act(p, [0.3, -0.2]), [0.25, -0.2])


@pytest.mark.parametrize("seed", range(5))
def test_feedforward_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    dims = [3, 5, 4, 2]
    p = _feedforward(rng, dims)
    s = rng.normal(size=3)
    h = list(s)
    for layer, (w, b) in enumerate(zip(p.weights, p.biases)):
        out = []
        for j in range(w.shape[1]):
            z = b[j] + sum(h[i] * w[i, j] for i in range(w.shape[0]))
            out.append(math.tanh(z) if layer < len(p.weights) - 1 else z)
        h = out
    np.testing.assert_allclose(act(p, s), h, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(act(p, s[None])[0], h, rtol=1e-12, atol=1e-14)


def test_act_errors():
    p = PolicySpec.linear(np.eye(2))
    with pytest.raises(PolicyError):
        act(p, [1.0, 2.0, 3.0])
    with pytest.raises(PolicyError):
        PolicySpec.linear([[np.nan]])
    with pytest.raises(PolicyError):
        PolicySpec.linear(np.eye(2), action_clip=[[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(PolicyError):
        PolicySpec("linear", 2, 2, [np.eye(3)], [np.zeros(3)])


def test_policy_file_round_trip(tmp_path):
    p = _feedforward(np.random.default_rng(0), [2, 3, 1])
    save_policy(p, tmp_path / "p.json")
    q = load_policy(tmp_path / "p.json")
    s = np.random.default_rng(1).normal(size=(10, 2))
    np.testing.assert_array_equal(act(p, s), act(q, s))
    assert q.to_json() == p.to_json()


def test_policy_file_version_checked():
    obj = PolicySpec.linear(np.eye(1)).to_json()
    obj["version"] = 2
    with pytest.raises(PolicyError):
        PolicySpec.from_json(obj)


def test_representation():
    rng = np.random.default_rng(2)
    states = rng.normal(size=(40, 2))
    cm = kmeans(states, 4, seed=0)
    p1, p2 = PolicySpec.linear(rng.normal(size=(2, 1))), _feedforward(rng, [2, 4, 1])
    r1, r2 = build_representation(p1, states, cm), build_representation(p2, states, cm)
    np.testing.assert_array_equal(r1.pairs[:, :2], r2.pairs[:, :2])
    np.testing.assert_array_equal(r1.cluster_of, cm.assignments)
    again = build_representation(p1, states, cm)
    np.testing.assert_array_equal(again.pairs, r1.pairs)
    for i, s in enumerate(states):
        # batched and single-row matmul may differ in the last bit
        np.testing.assert_allclose(r2.pairs[i], np.concatenate([s, act(p2, s)]), rtol=1e-14, atol=1e-15)
    with pytest.raises(PolicyError):
        build_representation(p1, states[:10], cm)


def test_rank_label_examples():
    y = rank_labels([1.0, 2.0]).y
    assert (y[0, 1], y[1, 0]) == (0.0, 1.0)
    for eps in (0.0, 0.3):
        y = rank_labels([5.0, 5.0], eps).y
        assert (y[0, 1], y[1, 0]) == (0.5, 0.5)
    y = rank_labels([1.0, 1.05], 0.1).y
    assert (y[0, 1], y[1, 0]) == (0.5, 0.5)


def test_rank_label_errors():
    with pytest.raises(PolicyError):
        rank_labels([1.0])
    with pytest.raises(PolicyError):
        rank_labels([1.0, 2.0], -0.1)
    with pytest.raises(PolicyError):
        rank_labels([1.0, np.inf])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=12),
    st.floats(0, 2),
)
def test_labels_are_antisymmetric(returns, eps):
    y = rank_labels(returns, eps).y
    off = ~np.eye(len(returns), dtype=bool)
    assert np.all((y + y.T)[off] == 1.0)
    assert set(np.unique(y)) <= {0.0, 0.5, 1.0}
