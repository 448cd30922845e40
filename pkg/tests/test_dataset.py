import struct

import numpy as np
import pytest

from tornadoagg.dataset import (Examples, FederatedDataset, NodeDataset, class_distribution, from_shards,
                                generate_synthetic, load_idx, load_npz, partition_by_shards, partition_by_skew,
                                partition_iid, sample_pool, save_npz, train_test_split, write_idx)
from tornadoagg.errors import InvalidArgument, ParseError


def test_skew_zero_is_near_uniform():
    fed = generate_synthetic(5, 2, 3, 1000, 0.0, seed=1)
    for p in fed.distributions():
        assert np.all(np.abs(p - 0.5) <= 0.05)


def test_skew_one_is_one_hot_round_robin():
    fed = generate_synthetic(12, 10, 4, 20, 1.0, seed=3)
    for i, p in enumerate(fed.distributions()):
        expected = np.zeros(10)
        expected[i % 10] = 1.0
        assert np.array_equal(p, expected)


def test_generator_is_deterministic():
    a = generate_synthetic(4, 3, 5, 17, 0.5, seed=9)
    b = generate_synthetic(4, 3, 5, 17, 0.5, seed=9)
    c = generate_synthetic(4, 3, 5, 17, 0.5, seed=10)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_intermediate_skew_follows_mixture():
    fed = generate_synthetic(3, 4, 2, 20000, 0.6, seed=0)
    for i, p in enumerate(fed.distributions()):
        expected = np.full(4, 0.1)
        expected[i % 4] += 0.6
        assert np.allclose(p, expected, atol=0.015)


@pytest.mark.parametrize("kwargs", [dict(examples_per_node=0), dict(num_nodes=0), dict(num_classes=1),
                                    dict(skew=1.5)])
def test_generator_rejects_bad_arguments(kwargs):
    args = dict(num_nodes=2, num_classes=3, feature_dim=2, examples_per_node=5, skew=0.5, seed=0)
    args.update(kwargs)
    with pytest.raises(InvalidArgument):
        generate_synthetic(**args)


def test_class_means_lie_on_sphere_of_given_radius():
    from tornadoagg.dataset import class_means
    m = class_means(6, 8, seed=2, radius=3.0)
    assert np.allclose(np.linalg.norm(m, axis=1), 3.0)


@pytest.mark.parametrize("labels,k,expected", [
    ([0, 0, 1, 1], 2, [0.5, 0.5]),
    ([2], 3, [0, 0, 1]),
    ([0, 1, 1, 2], 4, [0.25, 0.5, 0.25, 0]),
])
def test_class_distribution_counts(labels, k, expected):
    assert np.allclose(class_distribution(np.array(labels), k), expected)


def test_class_distribution_rejects_empty():
    with pytest.raises(InvalidArgument):
        class_distribution(np.array([], dtype=np.int64), 3)


def test_examples_validation():
    with pytest.raises(InvalidArgument):
        Examples(np.array([[np.nan, 1.0]]), np.array([0]))
    with pytest.raises(InvalidArgument):
        Examples(np.zeros((2, 2)), np.array([0]))
    with pytest.raises(InvalidArgument):
        Examples(np.zeros((1, 2)), np.array([-1]))


def test_federated_dataset_invariants():
    ex = Examples(np.zeros((2, 3)), np.array([0, 1]))
    with pytest.raises(InvalidArgument):
        FederatedDataset((NodeDataset(1, ex),), 2, 3)
    with pytest.raises(InvalidArgument):
        FederatedDataset((NodeDataset(0, ex),), 1, 3)
    with pytest.raises(InvalidArgument):
        NodeDataset(0, Examples(np.zeros((0, 3)), np.zeros(0, dtype=np.int64)))
    fed = from_shards([ex, ex.take([1])], 2)
    assert fed.total_examples == 3 == len(fed.pooled())


def test_shards_of_single_class_are_one_hot():
    pool = Examples(np.random.default_rng(0).standard_normal((100, 2)), np.full(100, 4))
    fed = partition_by_shards(pool, 10, 1, seed=0, num_classes=5)
    for p in fed.distributions():
        assert p[4] == 1.0


def test_two_shards_give_at_most_two_labels():
    pool = sample_pool(1000, 10, 3, seed=1)
    fed = partition_by_shards(pool, 20, 2, seed=5)
    for i in range(fed.num_nodes):
        assert len(set(fed.examples(i).labels.tolist())) <= 2


def test_shard_partition_is_complete_and_deterministic():
    pool = sample_pool(103, 4, 2, seed=1)
    a = partition_by_shards(pool, 5, 2, seed=7)
    b = partition_by_shards(pool, 5, 2, seed=7)
    assert a.tobytes() == b.tobytes()
    assert a.total_examples == 100
    got = sorted(map(tuple, np.column_stack([a.pooled().features, a.pooled().labels]).tolist()))
    order = np.argsort(pool.labels, kind="stable")[:100]
    want = sorted(map(tuple, np.column_stack([pool.features[order], pool.labels[order]]).tolist()))
    assert got == want


def test_shard_partition_rejects_small_pool():
    with pytest.raises(InvalidArgument):
        partition_by_shards(sample_pool(5, 2, 2, seed=0), 3, 2, seed=0)


def test_iid_and_skew_partitions():
    pool = sample_pool(400, 4, 2, seed=2)
    iid = partition_iid(pool, 4, seed=0)
    assert list(iid.sizes) == [100] * 4
    skewed = partition_by_skew(pool, 4, 100, 1.0, seed=0)
    for i, p in enumerate(skewed.distributions()):
        assert p[i % 4] == 1.0
    flat = partition_by_skew(pool, 4, 100, 0.0, seed=0)
    assert np.allclose(flat.distributions(), 0.25)


def test_train_test_split_holds_out_per_node():
    fed = generate_synthetic(3, 2, 2, 20, 0.5, seed=0)
    train, test = train_test_split(fed, 5, seed=0)
    assert list(train.sizes) == [15] * 3 and list(test.sizes) == [5] * 3
    for i in range(3):
        merged = np.sort(np.concatenate([train.examples(i).features[:, 0], test.examples(i).features[:, 0]]))
        assert np.array_equal(merged, np.sort(fed.examples(i).features[:, 0]))


def _idx(tmp_path, images, labels, img_magic=0x803, lbl_magic=0x801):
    ipath, lpath = tmp_path / "img", tmp_path / "lbl"
    n, r, c = images.shape
    ipath.write_bytes(struct.pack(">IIII", img_magic, n, r, c) + images.astype(np.uint8).tobytes())
    lpath.write_bytes(struct.pack(">II", lbl_magic, len(labels)) + np.asarray(labels, np.uint8).tobytes())
    return ipath, lpath


def test_load_idx_reads_and_scales(tmp_path):
    images = np.random.default_rng(0).integers(0, 256, size=(10, 28, 28))
    images[0, 0, 0] = 255
    ipath, lpath = _idx(tmp_path, images, np.arange(10) % 10)
    ex = load_idx(ipath, lpath)
    assert len(ex) == 10 and ex.feature_dim == 784
    assert ex.features[0, 0] == 1.0
    assert np.array_equal(ex.features * 255, images.reshape(10, -1))


@pytest.mark.parametrize("mutate,needle", [
    (dict(img_magic=0x804), "bad image magic"),
    (dict(lbl_magic=0x802), "bad label magic"),
])
def test_load_idx_rejects_bad_magic(tmp_path, mutate, needle):
    ipath, lpath = _idx(tmp_path, np.zeros((2, 2, 2)), [0, 1], **mutate)
    with pytest.raises(ParseError, match=needle):
        load_idx(ipath, lpath)


def test_load_idx_rejects_count_mismatch_and_truncation(tmp_path):
    ipath, lpath = _idx(tmp_path, np.zeros((3, 2, 2)), [0, 1])
    with pytest.raises(ParseError, match="count"):
        load_idx(ipath, lpath)
    ipath, lpath = _idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    ipath.write_bytes(ipath.read_bytes()[:-1])
    with pytest.raises(ParseError, match="truncated"):
        load_idx(ipath, lpath)


def test_idx_roundtrip(tmp_path):
    images = np.random.default_rng(1).integers(0, 256, size=(4, 3, 2)).astype(np.uint8)
    write_idx(tmp_path / "i", tmp_path / "l", images, np.array([1, 0, 3, 2]))
    ex = load_idx(tmp_path / "i", tmp_path / "l")
    assert np.array_equal(ex.labels, [1, 0, 3, 2])


def test_npz_roundtrip(tmp_path):
    fed = generate_synthetic(3, 3, 4, 7, 0.3, seed=0)
    save_npz(tmp_path / "d.npz", fed)
    back = load_npz(tmp_path / "d.npz")
    assert back.tobytes() == fed.tobytes() and back.num_classes == 3
