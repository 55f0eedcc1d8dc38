"""MNIST-format IDX loading, column sharding across verge machines, replication."""
from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .netcore import section_bounds

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SPLITS = ("train", "valid", "test")


class IDXError(ValueError):
    pass


class BadMagicError(IDXError):
    pass


class TruncatedFileError(IDXError):
    pass


class CountMismatchError(IDXError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or images.shape[0] != labels.shape[0]:
            raise ValueError(f"images {images.shape} and labels {labels.shape} do not line up")
        if images.size and (images.min() < 0 or images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def take(self, index, split: str | None = None) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], split or self.split)

    def fingerprint(self) -> str:
        """SHA-256 over pixel bytes and labels."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, expected_magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(flat, labels.astype(np.int64), split)


def write_idx(images, labels, images_path, labels_path, shape=(28, 28)) -> None:
    """Write byte images (values 0..255) and labels as uncompressed IDX files."""
    images = np.asarray(images, dtype=np.uint8).reshape(-1, *shape)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">II", IMAGE_MAGIC, len(images)))
        fh.write(struct.pack(">" + "I" * len(shape), *shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_bundled_subset() -> Dataset:
    """The 5000-image MNIST subset shipped with the package (500 per digit)."""
    root = resources.files("kdegree") / "data"
    with resources.as_file(root / "mnist5k-images-idx3-ubyte.gz") as img, \
            resources.as_file(root / "mnist5k-labels-idx1-ubyte.gz") as lab:
        return load_idx(img, lab)


def load_mnist(directory) -> dict[str, Dataset]:
    """Standard MNIST files split 50000 train / 10000 valid / 10000 test.

    Accepts the four ``*-ubyte`` files with or without ``.gz``.
    """
    d = Path(directory)

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (d / name).exists():
                return d / name
        raise FileNotFoundError(f"{stem}[.gz] not found in {d}")

    train = load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"))
    test = load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"), "test")
    return {
        "train": train.take(slice(0, 50000), "train"),
        "valid": train.take(slice(50000, 60000), "valid"),
        "test": test,
    }


def per_class_subset(data: Dataset, per_class: int, offset: int = 0, split: str | None = None) -> Dataset:
    """Samples ``offset .. offset + per_class`` of every class, in original order."""
    keep = []
    for c in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == c)
        chunk = idx[offset:offset + per_class]
        if len(chunk) < per_class:
            raise ValueError(f"class {c} has only {len(idx) - offset} samples past offset {offset}")
        keep.append(chunk)
    return data.take(np.sort(np.concatenate(keep)), split)


def desk_splits(data: Dataset, train_per_class: int, valid_per_class: int,
                test_per_class: int) -> dict[str, Dataset]:
    """Disjoint class-balanced train/valid/test subsets taken in file order."""
    train = per_class_subset(data, train_per_class, 0, "train")
    valid = per_class_subset(data, valid_per_class, train_per_class, "valid")
    test = per_class_subset(data, test_per_class, train_per_class + valid_per_class, "test")
    return {"train": train, "valid": valid, "test": test}


@dataclass(frozen=True, eq=False)
class ShardedDataset:
    shards: tuple[np.ndarray, ...]
    labels: np.ndarray
    bounds: tuple[tuple[int, int], ...]

    @property
    def shard_widths(self) -> list[int]:
        return [s.shape[1] for s in self.shards]

    def reassemble(self) -> np.ndarray:
        return np.concatenate(self.shards, axis=1)


def split_m(data: Dataset, M: int) -> ShardedDataset:
    """Cut every image into ``M`` contiguous raster-order column blocks."""
    n = data.images.shape[1]
    if M < 1:
        raise ValueError("M must be at least 1")
    if M > n:
        raise ValueError(f"cannot split {n} pixels into {M} parts")
    bounds = tuple(section_bounds(n, M))
    shards = tuple(data.images[:, a:b].copy() for a, b in bounds)
    return ShardedDataset(shards, data.labels.copy(), bounds)


def replicate_x(data: Dataset, X: int, seed: int = 0) -> Dataset:
    """Training set repeated ``X`` times and shuffled; other splits pass through."""
    if X < 1:
        raise ValueError(f"replication factor must be >= 1, got {X}")
    if data.split != "train":
        return data
    idx = np.tile(np.arange(len(data)), X)
    idx = np.random.default_rng(seed).permutation(idx)
    return data.take(idx)
