import math

import numpy as np
import pytest

from tornadoagg import model as mdl
from tornadoagg.analysis import (check_bound, diagnose, estimate_divergences, estimate_smoothness, h_bound,
                                 probe_pairs, random_probes, ring_variance, run_virtual_trace,
                                 smoothness_upper_bound, unbiasedness_gap)
from tornadoagg.dataset import Examples, from_shards, generate_synthetic, partition_by_skew, sample_pool
from tornadoagg.errors import InvalidArgument
from tornadoagg.grouping import cluster, group_by_iid, random_grouping, single_group
from tornadoagg.model import Hyperparams
from tornadoagg.topology import ArchitectureConfig

from conftest import clone_fed, make_fed


def _repeated_power(eta, beta, t):
    acc = 1.0
    for _ in range(t):
        acc *= 1.0 + eta * beta
    return acc - 1.0


@pytest.mark.parametrize("eta,beta,t", [(0.1, 1.0, 2), (0.03, 1.0, 100), (0.5, 2.0, 7), (1e-4, 3.0, 1000)])
def test_h_matches_repeated_multiplication(eta, beta, t):
    assert h_bound(eta, beta, t) == pytest.approx(_repeated_power(eta, beta, t), rel=1e-12)


def test_h_examples_and_edges():
    assert h_bound(0.3, 2.0, 0) == 0.0
    assert h_bound(0.1, 1.0, 2) == pytest.approx(0.21)
    assert h_bound(0.03, 1.0, 100) == pytest.approx(18.2186, abs=1e-4)
    assert h_bound(1.0, 1.0, 2000) == math.inf
    with pytest.raises(InvalidArgument):
        h_bound(0.0, 1.0, 3)


def test_divergences_vanish_on_identical_nodes():
    fed = clone_fed(6)
    probes = random_probes(fed, 0, count=8, scale=1.0)
    est = estimate_divergences(fed, random_grouping(6, 3, 0), probes)
    # pooled and per-node gradients sum in different orders, so zero means rounding level
    assert max(est.delta, est.Delta, est.D) < 1e-12


def test_single_group_has_no_group_divergence(small_fed):
    est = estimate_divergences(small_fed, single_group(6), random_probes(small_fed, 1, count=8, scale=1.0))
    assert est.Delta == 0.0 and est.delta == est.D > 0
    with pytest.raises(InvalidArgument):
        estimate_divergences(small_fed, single_group(6), [])


def test_divergence_triangle_inequalities():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        fed = generate_synthetic(int(rng.integers(3, 12)), 3, 3, 20, float(rng.uniform()), seed)
        grouping = random_grouping(fed.num_nodes, int(rng.integers(1, fed.num_nodes + 1)), seed)
        est = estimate_divergences(fed, grouping, random_probes(fed, seed, count=6, scale=1.0))
        assert est.delta <= est.Delta + est.D + 1e-9
        assert est.D <= est.delta + est.Delta + 1e-9
        assert min(est.delta, est.Delta, est.D) >= 0


def _hessian_norm(params, data):
    """Spectral norm of the exact softmax cross-entropy Hessian, built densely."""
    k = mdl.num_classes_of(params, data.feature_dim)
    p = np.exp(mdl._log_softmax(mdl.logits(params, data.features)))
    xt = np.hstack([data.features, np.ones((len(data), 1))])
    d = xt.shape[1]
    h = np.zeros((k, d, k, d))
    for pi, xi in zip(p, xt):
        h += np.einsum("ab,ij->aibj", np.diag(pi) - np.outer(pi, pi), np.outer(xi, xi))
    h /= len(data)
    # reorder to the flat layout: weights row-major, then bias
    idx = [a * d + i for a in range(k) for i in range(d - 1)] + [a * d + d - 1 for a in range(k)]
    return float(np.linalg.norm(h.reshape(k * d, k * d)[np.ix_(idx, idx)], 2))


def test_smoothness_estimate_respects_curvature_bounds():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 4))
    x /= np.maximum(1.0, np.linalg.norm(x, axis=1, keepdims=True))
    fed = from_shards([Examples(x[:25], rng.integers(0, 3, 25)), Examples(x[25:], rng.integers(0, 3, 25))], 3)
    bound = smoothness_upper_bound(fed)
    assert bound <= 1.0  # 0.5 * (|x|^2 + 1) with |x| <= 1
    probes = random_probes(fed, 0, count=20, scale=1.0)
    for w in probes:
        for i in range(2):
            assert _hessian_norm(w, fed.examples(i)) <= bound + 1e-12
    est = estimate_smoothness(fed, probe_pairs(probes, 0))
    assert 0 < est.beta_hat <= bound and est.rho_hat > 0


def test_smoothness_is_a_running_max(small_fed):
    pairs = probe_pairs(random_probes(small_fed, 0, count=12, scale=0.5), 0, extra=0)
    est = estimate_smoothness(small_fed, pairs)
    doubled = estimate_smoothness(small_fed, pairs + pairs)
    assert (doubled.beta_hat, doubled.rho_hat) == (est.beta_hat, est.rho_hat)
    previous = 0.0
    for n in range(1, len(pairs) + 1):
        beta = estimate_smoothness(small_fed, pairs[:n]).beta_hat
        assert beta >= previous
        previous = beta
    w = pairs[0][0]
    with pytest.raises(InvalidArgument):
        estimate_smoothness(small_fed, [(w, w)])


def test_ring_variance_of_opposite_gradients():
    x = np.array([[0.3, -1.2]])
    fed = from_shards([Examples(x, np.array([0])), Examples(x, np.array([1]))], 2)
    w = mdl.zeros(2, 2)
    g = mdl.gradient(w, fed.examples(0))
    assert np.allclose(mdl.gradient(w, fed.examples(1)), -g)
    assert ring_variance(fed, w, None, "flat") == pytest.approx(float(g @ g), rel=1e-12)


def test_ring_variance_is_zero_on_clones_and_nonnegative():
    fed = clone_fed(5)
    w = random_probes(fed, 0, count=1, scale=1.0)[0]
    assert abs(ring_variance(fed, w, None, "flat")) < 1e-12
    for seed in range(10):
        fed = make_fed(seed=seed)
        w = random_probes(fed, seed, count=1, scale=1.0)[0]
        grouping = random_grouping(6, 2, seed)
        for level in ("flat", "group", "global"):
            assert ring_variance(fed, w, grouping, level) >= -1e-12


def test_ring_variance_grows_with_skew():
    pool = sample_pool(4000, 4, 5, seed=0, class_sep=2.0)
    w = mdl.zeros(4, 5)
    values = [ring_variance(partition_by_skew(pool, 8, 400, s, seed=0), w, None, "flat") for s in (0.0, 0.5, 1.0)]
    assert values[0] < values[1] < values[2]


def test_ring_variance_argument_checks(small_fed):
    w = mdl.zeros(4, 5)
    with pytest.raises(InvalidArgument):
        ring_variance(small_fed, w, None, "group")
    with pytest.raises(InvalidArgument):
        ring_variance(small_fed, np.zeros(3), None, "flat")
    with pytest.raises(InvalidArgument):
        ring_variance(small_fed, [w, w], random_grouping(6, 2, 0), "flat")


def test_grouping_shapes_the_variance():
    fed = generate_synthetic(24, 4, 5, 40, 1.0, 0, class_sep=2.0)
    w = random_probes(fed, 0, count=1, scale=0.1)[0]
    rand = random_grouping(24, 4, 0)
    clustered, _ = cluster(fed, 4, 0)
    iid, _ = group_by_iid(fed, 4, 0)
    assert ring_variance(fed, w, clustered, "group") < ring_variance(fed, w, rand, "group")
    assert ring_variance(fed, w, iid, "global") < ring_variance(fed, w, rand, "global")


def test_unbiasedness_identity():
    for seed in range(10):
        fed = make_fed(seed=seed)
        w = random_probes(fed, seed, count=1, scale=1.0)[0]
        assert unbiasedness_gap(fed, w, random_grouping(6, 3, seed)) < 1e-10


def _skewed(seed=0):
    return generate_synthetic(6, 3, 4, 30, 1.0, seed, class_sep=2.0)


@pytest.mark.parametrize("name", ["STAR", "STAR-stars"])
def test_virtual_trace_resynchronises(name):
    fed = _skewed()
    cfg = ArchitectureConfig.from_name(name, tau=5, tau1=2, tau2=3, num_groups=1)
    trace = run_virtual_trace(cfg, fed, None, Hyperparams(0.1, 30), seed=0)
    span = trace.tau1 * trace.tau2
    assert trace.sync_steps == list(range(0, 31, span))
    assert all(trace.gaps[s] == 0.0 for s in trace.sync_steps)
    assert trace.gaps.shape == (31,) and trace.snapshot_steps == [0, 10, 20, 30]


def test_virtual_trace_on_clones_has_no_gap():
    fed = clone_fed(4)
    cfg = ArchitectureConfig.from_name("STAR-stars", num_groups=2, grouping_scheme="random", tau1=2, tau2=2)
    trace = run_virtual_trace(cfg, fed, random_grouping(4, 2, 0), Hyperparams(0.1, 20), seed=0)
    assert np.abs(trace.gaps).max() < 1e-12


def test_virtual_trace_rejects_other_architectures():
    with pytest.raises(InvalidArgument):
        run_virtual_trace(ArchitectureConfig.from_name("RING"), _skewed(), None, Hyperparams(0.1, 3), seed=0)


def test_drift_bound_holds_on_a_skewed_instance():
    fed = _skewed()
    grouping = random_grouping(6, 2, 0)
    cfg = ArchitectureConfig.from_name("STAR-stars", num_groups=2, grouping_scheme="random", tau1=3, tau2=2)
    hyper = Hyperparams(0.05, 60)
    trace = run_virtual_trace(cfg, fed, grouping, hyper, seed=0, snapshot_every=3)
    probes = random_probes(fed, 0) + trace.probe_models()
    div = estimate_divergences(fed, grouping, probes)
    smooth = estimate_smoothness(fed, probe_pairs(probes, 0))
    check = check_bound(trace, div, smooth, hyper.eta)
    assert check.holds and check.zero_at_sync and check.max_gap > 0
    doc = diagnose(cfg, fed, grouping, hyper, seed=0)
    assert doc["bound_holds"] and doc["zero_at_sync"] and not doc["h_overflow"]
    assert doc["Delta"] > 0 and doc["delta"] > 0
