"""Datasets, non-IID partitioning, and the IDX binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, IndivisibleShards, TruncatedFile

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801

# Class centers are drawn with per-coordinate scale 2/sqrt(d) so the
# expected center norm stays ~2 regardless of dimension: separable under
# unit within-class noise without inflating the loss curvature.
_CENTER_SCALE = 2.0


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer labels below ``n_classes``.

    ``image_shape`` survives an IDX load so the dataset can be written
    back byte-for-byte; synthetic data leaves it as ``None``.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    image_shape: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError("labels must be 1-D and align with features")
        if len(self.features) < 1:
            raise ValueError("dataset must hold at least one sample")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.features[indices], self.labels[indices]


@dataclass(frozen=True)
class Partition:
    """Disjoint per-client index lists over one dataset."""

    client_indices: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for idx in self.client_indices:
            for i in idx.tolist():
                if i in seen:
                    raise ValueError(f"sample {i} assigned to two clients")
                seen.add(i)

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)

    def shard(self, ds: Dataset, client: int) -> tuple[np.ndarray, np.ndarray]:
        return ds.subset(self.client_indices[client])

    def shard_sizes(self) -> list[int]:
        return [len(idx) for idx in self.client_indices]


def synth_generate(
    n_classes: int, n_features: int, n_samples: int, seed: int
) -> Dataset:
    """Gaussian class-conditional clusters with unit within-class variance.

    Class centers depend only on ``(seed, n_classes, n_features)``; labels
    are assigned round-robin so counts per class differ by at most one.
    Same arguments give a bit-identical dataset.
    """
    if n_classes < 1 or n_features < 1 or n_samples < 1:
        raise ValueError("n_classes, n_features, n_samples must be >= 1")
    center_rng = np.random.default_rng((seed, 0))
    centers = center_rng.normal(
        0.0, _CENTER_SCALE / np.sqrt(n_features), size=(n_classes, n_features)
    )
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    noise_rng = np.random.default_rng((seed, 1))
    features = centers[labels] + noise_rng.normal(size=(n_samples, n_features))
    return Dataset(features=features, labels=labels, n_classes=n_classes)


def holdout_split(ds: Dataset, eval_count: int) -> tuple[Dataset, Dataset]:
    """Split off a class-stratified evaluation set.

    Takes the trailing ``eval_count / n_classes`` samples of each class so
    both halves stay balanced; requires divisibility and enough samples.
    """
    if eval_count < 1 or eval_count >= len(ds):
        raise ValueError("eval_count must lie in [1, len(ds))")
    if eval_count % ds.n_classes:
        raise ValueError("eval_count must divide evenly across classes")
    per_class = eval_count // ds.n_classes
    eval_idx = []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if len(members) <= per_class:
            raise ValueError(f"class {c} too small for the requested holdout")
        eval_idx.append(members[-per_class:])
    eval_mask = np.zeros(len(ds), dtype=bool)
    eval_mask[np.concatenate(eval_idx)] = True
    train = Dataset(
        ds.features[~eval_mask], ds.labels[~eval_mask], ds.n_classes, ds.image_shape
    )
    held = Dataset(
        ds.features[eval_mask], ds.labels[eval_mask], ds.n_classes, ds.image_shape
    )
    return train, held


def partition_noniid(
    ds: Dataset, n_clients: int, shards_per_client: int, seed: int
) -> Partition:
    """Label-sorted shard assignment.

    Samples are sorted by label, cut into ``n_clients * shards_per_client``
    equal contiguous shards, and the shards are dealt at random,
    ``shards_per_client`` to each client.  Small ``shards_per_client``
    gives each client a thin slice of the label spectrum; raising it
    toward ``n_classes`` approaches an IID split.
    """
    if n_clients < 1 or shards_per_client < 1:
        raise ValueError("n_clients and shards_per_client must be >= 1")
    n_shards = n_clients * shards_per_client
    if len(ds) % n_shards:
        raise IndivisibleShards(
            f"{len(ds)} samples do not divide into {n_shards} equal shards"
        )
    shard_size = len(ds) // n_shards
    order = np.argsort(ds.labels, kind="stable")
    shards = [order[i * shard_size : (i + 1) * shard_size] for i in range(n_shards)]
    deal = np.random.default_rng((seed, 2)).permutation(n_shards)
    clients = []
    for c in range(n_clients):
        picks = deal[c * shards_per_client : (c + 1) * shards_per_client]
        clients.append(np.sort(np.concatenate([shards[s] for s in picks])))
    return Partition(client_indices=tuple(clients))


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Read an IDX image/label file pair.

    Pixels come back as float64 scaled to [0, 1].  Raises
    :class:`BadMagic`, :class:`TruncatedFile`, or :class:`CountMismatch`
    on malformed input.
    """
    raw_images = Path(images_path).read_bytes()
    raw_labels = Path(labels_path).read_bytes()

    if len(raw_images) < 16:
        raise TruncatedFile(f"{images_path}: header needs 16 bytes")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw_images, 0)
    if magic != _IDX_IMAGE_MAGIC:
        raise BadMagic(f"{images_path}: magic {magic:#010x}")
    expected = 16 + count * rows * cols
    if len(raw_images) < expected:
        raise TruncatedFile(f"{images_path}: ends {expected - len(raw_images)} bytes early")
    if len(raw_images) > expected:
        raise TruncatedFile(f"{images_path}: {len(raw_images) - expected} trailing bytes")

    if len(raw_labels) < 8:
        raise TruncatedFile(f"{labels_path}: header needs 8 bytes")
    lmagic, lcount = struct.unpack_from(">II", raw_labels, 0)
    if lmagic != _IDX_LABEL_MAGIC:
        raise BadMagic(f"{labels_path}: magic {lmagic:#010x}")
    if len(raw_labels) < 8 + lcount:
        raise TruncatedFile(f"{labels_path}: ends {8 + lcount - len(raw_labels)} bytes early")
    if len(raw_labels) > 8 + lcount:
        raise TruncatedFile(f"{labels_path}: {len(raw_labels) - 8 - lcount} trailing bytes")

    if count != lcount:
        raise CountMismatch(f"{count} images vs {lcount} labels")

    pixels = np.frombuffer(raw_images, dtype=np.uint8, offset=16)
    features = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset(
        features=features,
        labels=labels,
        n_classes=int(labels.max()) + 1,
        image_shape=(rows, cols),
    )


def save_idx(ds: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Inverse of :func:`load_idx`; reproduces a loaded file pair exactly."""
    if ds.image_shape is None:
        raise ValueError("dataset carries no image shape; cannot write IDX")
    rows, cols = ds.image_shape
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IDX_IMAGE_MAGIC, len(ds), rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _IDX_LABEL_MAGIC, len(ds)))
        fh.write(ds.labels.astype(np.uint8).tobytes())
