import numpy as np
import pytest

from tornadoagg.dataset import Examples, from_shards, generate_synthetic


def make_fed(num_nodes=6, num_classes=4, feature_dim=5, per_node=30, skew=0.7, seed=0, class_sep=2.0):
    return generate_synthetic(num_nodes, num_classes, feature_dim, per_node, skew, seed, class_sep)


def one_hot_fed(classes, num_classes=2, per_node=5, feature_dim=3, seed=0):
    """One node per entry of ``classes``, each holding only that label."""
    rng = np.random.default_rng(seed)
    shards = [Examples(rng.standard_normal((per_node, feature_dim)), np.full(per_node, c)) for c in classes]
    return from_shards(shards, num_classes)


def clone_fed(num_nodes=4, num_classes=3, feature_dim=4, per_node=12, seed=0):
    """Every node holds the same examples."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((per_node, feature_dim))
    y = np.arange(per_node) % num_classes
    return from_shards([Examples(x, y) for _ in range(num_nodes)], num_classes)


@pytest.fixture
def small_fed():
    return make_fed()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
