import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tornadoagg import model as mdl
from tornadoagg.dataset import Examples
from tornadoagg.errors import InvalidArgument

from oracles import central_difference, max_relative_error, random_problem


def naive_loss(params, data):
    """Per-example loop straight from the cross-entropy definition."""
    d = data.feature_dim
    k = params.size // (d + 1)
    w = params[: k * d].reshape(k, d)
    b = params[k * d:]
    total = 0.0
    for x, y in zip(data.features, data.labels):
        z = [float(w[c] @ x + b[c]) for c in range(k)]
        m = max(z)
        total += -(z[y] - m - math.log(sum(math.exp(v - m) for v in z)))
    return total / len(data)


def test_loss_matches_naive_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p, data = random_problem(rng)
        assert mdl.loss(p, data) == pytest.approx(naive_loss(p, data), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("k,expected", [(2, math.log(2)), (10, math.log(10))])
def test_zero_model_loss_is_log_k(k, expected):
    data = Examples(np.random.default_rng(1).standard_normal((7, 3)), np.arange(7) % k)
    assert mdl.loss(mdl.zeros(k, 3), data) == pytest.approx(expected, abs=1e-12)


def test_aligned_model_on_separable_data_has_tiny_loss():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.1], [0.1, 2.0]])
    data = Examples(x, np.array([0, 1, 0, 1]))
    means = np.array([x[[0, 2]].mean(0), x[[1, 3]].mean(0)])
    scale = 1.0
    while mdl.loss(mdl.pack(scale * means, np.zeros(2)), data) >= 0.01:
        scale *= 2
        assert scale < 1e6
    assert mdl.loss(mdl.pack(scale * means, np.zeros(2)), data) < 0.01


def test_loss_is_stable_for_huge_logits():
    data = Examples(np.array([[1000.0, -1000.0]]), np.array([1]))
    p = mdl.pack(np.array([[5.0, 0.0], [0.0, 5.0]]), np.zeros(2))
    val = mdl.loss(p, data)
    assert math.isfinite(val) and val == pytest.approx(10000.0)
    assert np.isfinite(mdl.gradient(p, data)).all()


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        p, data = random_problem(rng)
        worst = max(worst, max_relative_error(mdl.gradient(p, data), central_difference(p, data)))
    assert worst < 1e-5


def test_gradient_is_invariant_to_duplicating_data():
    p, data = random_problem(np.random.default_rng(3))
    assert np.allclose(mdl.gradient(p, data), mdl.gradient(p, Examples.concat([data, data])), atol=1e-15)


def test_gradient_linearity_over_data():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p, _ = random_problem(rng, k=3, d=4)
        parts = [random_problem(rng, k=3, d=4)[1] for _ in range(int(rng.integers(2, 6)))]
        n = sum(len(s) for s in parts)
        mix = sum(len(s) / n * mdl.gradient(p, s) for s in parts)
        assert np.max(np.abs(mix - mdl.gradient(p, Examples.concat(parts)))) < 1e-10


def test_gd_reaches_stationarity_on_separable_toy_set():
    # bias-only-separable toy with overlapping classes has a finite optimum
    x = np.array([[1.0], [2.0], [-1.0], [-2.0], [0.5], [-0.5]])
    data = Examples(x, np.array([0, 0, 1, 1, 1, 0]))
    p = mdl.zeros(2, 1)
    for _ in range(5000):
        p = mdl.sgd_step(p, data, 1.0)
    assert np.linalg.norm(mdl.gradient(p, data)) < 1e-6


def test_sgd_step_semantics():
    p, data = random_problem(np.random.default_rng(5))
    before = p.copy()
    assert np.array_equal(mdl.sgd_step(p, data, 0.0), p)
    one = mdl.sgd_step(mdl.sgd_step(p, data, 0.03), data, 0.03)
    ref = p - 0.03 * mdl.gradient(p, data)
    ref = ref - 0.03 * mdl.gradient(ref, data)
    assert np.array_equal(one, ref)
    assert np.array_equal(p, before)
    assert mdl.loss(mdl.sgd_step(p, data, 0.03), data) < mdl.loss(p, data)


def test_minibatch_step_needs_rng_and_is_seeded():
    p, data = random_problem(np.random.default_rng(6), n=15)
    with pytest.raises(InvalidArgument):
        mdl.sgd_step(p, data, 0.1, batch_size=4)
    a = mdl.sgd_step(p, data, 0.1, 4, np.random.default_rng(1))
    b = mdl.sgd_step(p, data, 0.1, 4, np.random.default_rng(1))
    assert np.array_equal(a, b)


def test_loss_is_convex_along_segments():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p, data = random_problem(rng, k=3, d=3)
        q = rng.standard_normal(p.size)
        lam = float(rng.uniform(0.01, 0.99))
        lhs = mdl.loss(lam * p + (1 - lam) * q, data)
        assert lhs <= lam * mdl.loss(p, data) + (1 - lam) * mdl.loss(q, data) + 1e-9


def test_dimension_mismatch_is_rejected():
    data = Examples(np.zeros((2, 3)), np.array([0, 1]))
    with pytest.raises(InvalidArgument):
        mdl.loss(np.zeros(7), data)
    with pytest.raises(InvalidArgument):
        mdl.loss(np.zeros(4), data)  # 1 class cannot hold label 1


def test_weighted_average_examples():
    m = np.array([1.0, -2.0, 3.0])
    assert np.allclose(mdl.weighted_average([m, m, m], [0.1, 0.6, 0.3]), m, rtol=0, atol=1e-15)
    a, b = np.array([1.0, 2.0]), np.array([5.0, 7.0])
    assert np.array_equal(mdl.weighted_average([a, b], [1.0, 0.0]), a)
    vs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([2.0, 2.0])]
    assert np.allclose(mdl.weighted_average(vs, [0.2, 0.3, 0.5]), [1.2, 1.3])


@pytest.mark.parametrize("weights", [[0.5, 0.6], [1.5, -0.5], [1.0]])
def test_weighted_average_rejects_bad_weights(weights):
    with pytest.raises(InvalidArgument):
        mdl.weighted_average([np.zeros(2), np.zeros(2)], weights)


def test_weighted_average_rejects_mismatched_dims():
    with pytest.raises(InvalidArgument):
        mdl.weighted_average([np.zeros(2), np.zeros(3)], [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6))
def test_weighted_average_stays_in_hull(raw):
    rng = np.random.default_rng(len(raw))
    models = [rng.standard_normal(4) for _ in raw]
    w = np.array(raw) / sum(raw)
    avg = mdl.weighted_average(models, w)
    stack = np.stack(models)
    assert np.all(avg <= stack.max(0) + 1e-12) and np.all(avg >= stack.min(0) - 1e-12)


def test_accuracy_examples():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    data = Examples(x, np.array([0, 1]))
    assert mdl.accuracy(mdl.pack(np.eye(2), np.zeros(2)), data) == 1.0
    balanced = Examples(np.random.default_rng(0).standard_normal((10, 2)), np.arange(10) % 2)
    assert mdl.accuracy(mdl.zeros(2, 2), balanced) == 0.5
    assert np.all(mdl.predict(mdl.zeros(3, 2), balanced.features) == 0)


def test_serialization_layout_and_checkpoint_roundtrip():
    w = np.arange(6, dtype=float).reshape(2, 3)
    p = mdl.pack(w, np.array([10.0, 11.0]))
    assert np.array_equal(np.frombuffer(mdl.to_bytes(p), "<f8"), [0, 1, 2, 3, 4, 5, 10, 11])
    assert mdl.model_bytes(2, 3) == 64
    buf = mdl.checkpoint_bytes([p, 2 * p], 2, 3, step=7)
    assert buf[:4] == b"TORN"
    k, d, step, models = mdl.read_checkpoint(buf)
    assert (k, d, step) == (2, 3, 7)
    assert np.array_equal(models[1], 2 * p)
    with pytest.raises(InvalidArgument):
        mdl.read_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(InvalidArgument):
        mdl.read_checkpoint(buf[:-1])


def test_hyperparams_validation():
    with pytest.raises(InvalidArgument):
        mdl.Hyperparams(0.0, 10)
    with pytest.raises(InvalidArgument):
        mdl.Hyperparams(0.1, 0)
