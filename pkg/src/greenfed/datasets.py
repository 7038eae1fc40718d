"""Dataset ingestion and non-IID partitioning.

Ships an IDX (MNIST container) parser plus a synthetic Gaussian-pattern
dataset so the full pipeline runs without downloads. Partitioners return
client_id -> list of example indices; partitions are disjoint.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class PartitionError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W), float64
    labels: np.ndarray  # (N,), int
    num_classes: int

    def __post_init__(self):
        if len(self.images) == 0:
            raise ValueError("dataset must be non-empty")
        if len(self.images) != len(self.labels):
            raise ValueError("image/label count mismatch")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels outside [0, num_classes)")

    def __len__(self):
        return len(self.images)

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


# ---------------------------------------------------------------------------
# IDX files

def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 * (1 + ndim):
        raise IdxFormatError(f"{path}: truncated header")
    got = struct.unpack(">i", raw[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: unexpected magic 0x{got:08x}")
    dims = struct.unpack(f">{ndim}i", raw[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    body = raw[4 + 4 * ndim:]
    if len(body) < count:
        raise IdxFormatError(f"{path}: truncated data (need {count} bytes, have {len(body)})")
    return np.frombuffer(body[:count], dtype=np.uint8).reshape(dims)


def load_idx_dataset(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Load big-endian IDX image/label files; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"image count {len(images)} != label count {len(labels)}"
        )
    return Dataset(
        images=images.astype(float)[:, None, :, :] / 255.0,
        labels=labels.astype(int),
        num_classes=num_classes,
    )


# ---------------------------------------------------------------------------
# synthetic data

def synthetic_blobs(
    seed: int,
    num_examples: int,
    num_classes: int = 10,
    image_size: int = 8,
    noise: float = 0.35,
    pattern_seed: int | None = None,
) -> Dataset:
    """Each class is a fixed random pattern image plus Gaussian noise.

    ``pattern_seed`` pins the class patterns independently of the sample
    draw, so train and test splits built with different ``seed`` values
    share the same classes."""
    pattern_rng = np.random.default_rng(seed if pattern_seed is None else pattern_seed)
    patterns = pattern_rng.uniform(0.0, 1.0, size=(num_classes, 1, image_size, image_size))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=num_examples)
    images = patterns[labels] + noise * rng.standard_normal(
        (num_examples, 1, image_size, image_size)
    )
    return Dataset(images=images, labels=labels, num_classes=num_classes)


# ---------------------------------------------------------------------------
# partitioners

def _check_clients(ds: Dataset, num_clients: int):
    if num_clients < 1:
        raise PartitionError("num_clients must be >= 1")
    if len(ds) < num_clients:
        raise PartitionError(
            f"dataset of {len(ds)} examples cannot cover {num_clients} clients"
        )


def dirichlet_partition(
    ds: Dataset, num_clients: int, beta: float, seed: int, max_retries: int = 10
) -> dict:
    """Per-class Dirichlet(beta) split across clients.

    Every client ends up with at least one example: offending draws are
    retried, then examples are moved from the largest client as a last
    resort.
    """
    if beta <= 0:
        raise PartitionError("beta must be > 0")
    _check_clients(ds, num_clients)
    rng = np.random.default_rng(seed)
    parts = None
    for _ in range(max_retries):
        parts = {c: [] for c in range(num_clients)}
        for label in range(ds.num_classes):
            idx = ds.class_indices(label)
            if len(idx) == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(num_clients, beta))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
            for c, chunk in enumerate(np.split(idx, cuts)):
                parts[c].extend(int(i) for i in chunk)
        if all(parts[c] for c in parts):
            return parts
    # move one example at a time from the currently largest client
    for c in range(num_clients):
        while not parts[c]:
            donor = max(parts, key=lambda d: len(parts[d]))
            if len(parts[donor]) <= 1:
                raise PartitionError("cannot repair empty partitions")
            parts[c].append(parts[donor].pop())
    return parts


def balanced_noniid_partition(
    ds: Dataset, num_clients: int, labels_per_user: int, seed: int
) -> dict:
    """Shard-based split where each client holds at most ``labels_per_user``
    distinct classes and all clients get (near-)equal example counts."""
    if labels_per_user < 1:
        raise PartitionError("labels_per_user must be >= 1")
    if labels_per_user > ds.num_classes:
        raise PartitionError("labels_per_user cannot exceed num_classes")
    _check_clients(ds, num_clients)
    total_shards = num_clients * labels_per_user
    if total_shards % ds.num_classes != 0:
        raise PartitionError(
            f"need num_clients*labels_per_user ({total_shards}) divisible by "
            f"num_classes ({ds.num_classes})"
        )
    shards_per_class = total_shards // ds.num_classes
    rng = np.random.default_rng(seed)

    shard_pool = {}
    for label in range(ds.num_classes):
        idx = rng.permutation(ds.class_indices(label))
        if len(idx) < shards_per_class:
            raise PartitionError(
                f"class {label} has {len(idx)} examples but needs "
                f"{shards_per_class} shards"
            )
        shard_pool[label] = [chunk.tolist() for chunk in np.array_split(idx, shards_per_class)]

    parts = {c: [] for c in range(num_clients)}
    for c in rng.permutation(num_clients):
        # take shards from the classes with the most shards left; provably
        # never deadlocks when the shard arithmetic above holds
        remaining = sorted(
            (label for label in shard_pool if shard_pool[label]),
            key=lambda l: (-len(shard_pool[l]), l),
        )
        if len(remaining) < labels_per_user:
            raise PartitionError("shard assignment deadlocked")
        for label in remaining[:labels_per_user]:
            parts[int(c)].extend(shard_pool[label].pop())
    return parts


def partition_label_sets(ds: Dataset, parts: dict) -> dict:
    return {
        c: frozenset(int(label) for label in ds.labels[idx])
        for c, idx in parts.items()
    }
