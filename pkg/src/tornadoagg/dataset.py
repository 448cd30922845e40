"""Labeled classification data split into per-node shards.

A batch of labeled examples is stored column-wise as an :class:`Examples`
pair of arrays rather than as a list of ``(x, y)`` objects; row ``j`` of
``features`` together with ``labels[j]`` is one example.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import substream
from .errors import InvalidArgument, ParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Examples:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise InvalidArgument(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise InvalidArgument(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.isfinite(x).all():
            raise InvalidArgument("features contain NaN or Inf")
        if y.size and y.min() < 0:
            raise InvalidArgument("labels must be non-negative")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def take(self, index: np.ndarray | Sequence[int]) -> "Examples":
        index = np.asarray(index, dtype=np.int64)
        return Examples(self.features[index], self.labels[index])

    @staticmethod
    def concat(parts: Sequence["Examples"]) -> "Examples":
        if not parts:
            raise InvalidArgument("nothing to concatenate")
        return Examples(
            np.concatenate([p.features for p in parts], axis=0),
            np.concatenate([p.labels for p in parts], axis=0),
        )

    def tobytes(self) -> bytes:
        return self.features.tobytes() + self.labels.tobytes()


@dataclass(frozen=True, eq=False)
class NodeDataset:
    node_id: int
    examples: Examples

    def __post_init__(self) -> None:
        if len(self.examples) == 0:
            raise InvalidArgument(f"node {self.node_id} holds no examples")

    def __len__(self) -> int:
        return len(self.examples)


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    nodes: tuple[NodeDataset, ...]
    num_classes: int
    feature_dim: int

    def __post_init__(self) -> None:
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise InvalidArgument("a federated dataset needs at least one node")
        if self.num_classes < 1:
            raise InvalidArgument("num_classes must be >= 1")
        for expected, node in enumerate(nodes):
            if node.node_id != expected:
                raise InvalidArgument(f"node ids must be 0..{len(nodes) - 1} without gaps")
            if node.examples.feature_dim != self.feature_dim:
                raise InvalidArgument(f"node {expected} has feature dimension {node.examples.feature_dim}")
            if node.examples.labels.max() >= self.num_classes:
                raise InvalidArgument(f"node {expected} has a label outside [0, {self.num_classes})")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(n) for n in self.nodes], dtype=np.int64)

    @property
    def total_examples(self) -> int:
        return int(self.sizes.sum())

    def examples(self, node: int) -> Examples:
        return self.nodes[node].examples

    def pooled(self, node_ids: Sequence[int] | None = None) -> Examples:
        ids = range(self.num_nodes) if node_ids is None else node_ids
        parts = [self.nodes[i].examples for i in ids]
        return parts[0] if len(parts) == 1 else Examples.concat(parts)

    def distributions(self) -> np.ndarray:
        """Per-node class distributions, one row per node."""
        return np.stack([class_distribution(n.examples, self.num_classes) for n in self.nodes])

    def label_counts(self) -> np.ndarray:
        return np.stack(
            [np.bincount(n.examples.labels, minlength=self.num_classes) for n in self.nodes]
        ).astype(np.int64)

    def tobytes(self) -> bytes:
        head = struct.pack("<III", self.num_nodes, self.num_classes, self.feature_dim)
        return head + b"".join(n.examples.tobytes() for n in self.nodes)


def from_shards(shards: Sequence[Examples], num_classes: int) -> FederatedDataset:
    if not shards:
        raise InvalidArgument("no shards")
    dim = shards[0].feature_dim
    return FederatedDataset(tuple(NodeDataset(i, s) for i, s in enumerate(shards)), num_classes, dim)


def class_distribution(examples: Examples | np.ndarray, num_classes: int) -> np.ndarray:
    """Empirical label frequencies as a length-``num_classes`` vector."""
    labels = examples.labels if isinstance(examples, Examples) else np.asarray(examples, dtype=np.int64)
    if labels.size == 0:
        raise InvalidArgument("class distribution of an empty example set")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InvalidArgument(f"label outside [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    return counts / labels.size


def class_means(num_classes: int, feature_dim: int, seed: int, radius: float = 1.0) -> np.ndarray:
    """Seeded class centroids on the sphere of the given radius."""
    rng = substream(seed, "means")
    while True:
        raw = rng.standard_normal((num_classes, feature_dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.all(norms > 1e-12):
            break
    return radius * raw / norms


def generate_synthetic(
    num_nodes: int,
    num_classes: int,
    feature_dim: int,
    examples_per_node: int,
    skew: float,
    seed: int,
    class_sep: float = 1.0,
) -> FederatedDataset:
    """Gaussian-blob classification data with a per-node label skew.

    Node ``i`` draws labels from ``skew * onehot(i mod K) + (1 - skew) * uniform``
    and features from ``N(mean[label], I)``. ``class_sep`` is the radius of the
    sphere holding the class means.
    """
    if num_nodes < 1:
        raise InvalidArgument("num_nodes must be >= 1")
    if num_classes < 2:
        raise InvalidArgument("num_classes must be >= 2")
    if feature_dim < 1:
        raise InvalidArgument("feature_dim must be >= 1")
    if examples_per_node < 1:
        raise InvalidArgument("examples_per_node must be >= 1")
    if not 0.0 <= skew <= 1.0:
        raise InvalidArgument("skew must lie in [0, 1]")
    means = class_means(num_classes, feature_dim, seed, class_sep)
    rng = substream(seed, "data")
    shards = []
    for i in range(num_nodes):
        probs = np.full(num_classes, (1.0 - skew) / num_classes)
        probs[i % num_classes] += skew
        if skew == 1.0:
            labels = np.full(examples_per_node, i % num_classes, dtype=np.int64)
        else:
            labels = rng.choice(num_classes, size=examples_per_node, p=probs)
        noise = rng.standard_normal((examples_per_node, feature_dim))
        shards.append(Examples(means[labels] + noise, labels))
    return from_shards(shards, num_classes)


def sample_pool(num_examples: int, num_classes: int, feature_dim: int, seed: int,
                class_sep: float = 1.0) -> Examples:
    """Class-balanced pool (labels cycle 0..K-1) drawn from the synthetic generator's blobs."""
    if num_examples < 1:
        raise InvalidArgument("num_examples must be >= 1")
    means = class_means(num_classes, feature_dim, seed, class_sep)
    rng = substream(seed, "pool")
    labels = np.arange(num_examples, dtype=np.int64) % num_classes
    return Examples(means[labels] + rng.standard_normal((num_examples, feature_dim)), labels)


def _num_classes_of(pool: Examples, num_classes: int | None) -> int:
    return int(pool.labels.max()) + 1 if num_classes is None else num_classes


def partition_by_shards(pool: Examples, num_nodes: int, shards_per_node: int, seed: int,
                        num_classes: int | None = None) -> FederatedDataset:
    """Label-sorted shard partitioning.

    The pool is stably sorted by label, truncated to a multiple of the shard
    count, cut into ``num_nodes * shards_per_node`` contiguous shards, and the
    shards are dealt to nodes through a seeded permutation.
    """
    if num_nodes < 1 or shards_per_node < 1:
        raise InvalidArgument("num_nodes and shards_per_node must be >= 1")
    num_shards = num_nodes * shards_per_node
    if len(pool) < num_shards:
        raise InvalidArgument(f"pool of {len(pool)} examples cannot fill {num_shards} shards")
    shard_len = len(pool) // num_shards
    order = np.argsort(pool.labels, kind="stable")[: shard_len * num_shards]
    perm = substream(seed, "shards").permutation(num_shards)
    parts = []
    for node in range(num_nodes):
        mine = np.sort(perm[node * shards_per_node:(node + 1) * shards_per_node])
        idx = np.concatenate([order[s * shard_len:(s + 1) * shard_len] for s in mine])
        parts.append(pool.take(idx))
    return from_shards(parts, _num_classes_of(pool, num_classes))


def partition_iid(pool: Examples, num_nodes: int, seed: int,
                  num_classes: int | None = None) -> FederatedDataset:
    """Uniformly random equal-size split (remainder dropped)."""
    if num_nodes < 1 or len(pool) < num_nodes:
        raise InvalidArgument("need at least one example per node")
    per = len(pool) // num_nodes
    perm = substream(seed, "iid").permutation(len(pool))[: per * num_nodes]
    parts = [pool.take(np.sort(perm[i * per:(i + 1) * per])) for i in range(num_nodes)]
    return from_shards(parts, _num_classes_of(pool, num_classes))


def partition_by_skew(pool: Examples, num_nodes: int, examples_per_node: int, skew: float,
                      seed: int, num_classes: int | None = None) -> FederatedDataset:
    """Split a fixed pool so node ``i`` follows the generator's skew mixture.

    Per-node class quotas come from largest-remainder rounding of
    ``examples_per_node * (skew * onehot(i mod K) + (1 - skew) / K)``. When a
    class runs dry the quota spills to the class with the most examples left.
    """
    k = _num_classes_of(pool, num_classes)
    if not 0.0 <= skew <= 1.0:
        raise InvalidArgument("skew must lie in [0, 1]")
    if num_nodes * examples_per_node > len(pool):
        raise InvalidArgument("pool too small for the requested partition")
    rng = substream(seed, "skew")
    buckets = [list(rng.permutation(np.flatnonzero(pool.labels == c))) for c in range(k)]
    parts = []
    for i in range(num_nodes):
        probs = np.full(k, (1.0 - skew) / k)
        probs[i % k] += skew
        raw = probs * examples_per_node
        quota = np.floor(raw).astype(np.int64)
        short = examples_per_node - int(quota.sum())
        for c in np.argsort(-(raw - quota), kind="stable")[:short]:
            quota[c] += 1
        picked: list[int] = []
        for c in range(k):
            for _ in range(int(quota[c])):
                src = c if buckets[c] else int(np.argmax([len(b) for b in buckets]))
                picked.append(int(buckets[src].pop()))
        parts.append(pool.take(np.sort(np.array(picked, dtype=np.int64))))
    return from_shards(parts, k)


def train_test_split(fed: FederatedDataset, test_per_node: int, seed: int) -> tuple[FederatedDataset, FederatedDataset]:
    """Hold out ``test_per_node`` random examples of every node as that node's test shard."""
    if test_per_node < 1:
        raise InvalidArgument("test_per_node must be >= 1")
    rng = substream(seed, "split")
    train, test = [], []
    for node in fed.nodes:
        n = len(node)
        if n <= test_per_node:
            raise InvalidArgument(f"node {node.node_id} has only {n} examples")
        perm = rng.permutation(n)
        test.append(node.examples.take(np.sort(perm[:test_per_node])))
        train.append(node.examples.take(np.sort(perm[test_per_node:])))
    return from_shards(train, fed.num_classes), from_shards(test, fed.num_classes)


def _read_header(buf: bytes, n_fields: int, what: str) -> tuple[int, ...]:
    size = 4 * n_fields
    if len(buf) < size:
        raise ParseError(f"{what} header", f"truncated {what} header")
    return struct.unpack(">" + "I" * n_fields, buf[:size])


def load_idx(images_path: str | Path, labels_path: str | Path) -> Examples:
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()
    magic, count, rows, cols = _read_header(img, 4, "image")
    if magic != IMAGE_MAGIC:
        raise ParseError("image magic", "bad image magic")
    lmagic, lcount = _read_header(lab, 2, "label")
    if lmagic != LABEL_MAGIC:
        raise ParseError("label magic", "bad label magic")
    if count != lcount:
        raise ParseError("count", f"count mismatch: {count} images vs {lcount} labels")
    need = count * rows * cols
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16)
    if pixels.size < need:
        raise ParseError("image data", f"truncated image data: {pixels.size} of {need} bytes")
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8)
    if labels.size < count:
        raise ParseError("label data", f"truncated label data: {labels.size} of {count} bytes")
    features = pixels[:need].reshape(count, rows * cols).astype(np.float64) / 255.0
    return Examples(features, labels[:count].astype(np.int64))


def write_idx(images_path: str | Path, labels_path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write a uint8 image stack of shape (n, rows, cols) and its labels as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise InvalidArgument("images must be (n, rows, cols) with n labels")
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, n) + labels.tobytes())


def save_npz(path: str | Path, fed: FederatedDataset) -> None:
    offsets = np.concatenate([[0], np.cumsum(fed.sizes)]).astype(np.int64)
    pooled = fed.pooled()
    with open(path, "wb") as fh:
        np.savez(fh, features=pooled.features, labels=pooled.labels, offsets=offsets,
                 num_classes=np.int64(fed.num_classes))


def load_npz(path: str | Path) -> FederatedDataset:
    with np.load(path) as z:
        x, y, off, k = z["features"], z["labels"], z["offsets"], int(z["num_classes"])
    shards = [Examples(x[off[i]:off[i + 1]], y[off[i]:off[i + 1]]) for i in range(len(off) - 1)]
    return from_shards(shards, k)
