"""Datasets: the MNIST IDX container and a synthetic Gaussian-mixture generator."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, InvalidInputError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("features must be n x d with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError("labels outside [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


def _read(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_images(raw: bytes):
    if len(raw) < 16:
        raise TruncatedFileError("image file shorter than its 16-byte header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
    need = n * rows * cols
    if len(raw) - 16 < need:
        raise TruncatedFileError(f"image file holds {len(raw) - 16} pixel bytes, header promises {need}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=16)
    return pixels.reshape(n, rows * cols), (rows, cols)


def _parse_labels(raw: bytes):
    if len(raw) < 8:
        raise TruncatedFileError("label file shorter than its 8-byte header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
    if len(raw) - 8 < n:
        raise TruncatedFileError(f"label file holds {len(raw) - 8} labels, header promises {n}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Parse an IDX image/label pair, scaling pixels to [0, 1].

    A file shorter than its header promises raises :class:`TruncatedFileError`,
    itself a :class:`CountMismatchError`; nothing is returned on failure.
    """
    pixels, _ = _parse_images(_read(images_path))
    labels = _parse_labels(_read(labels_path))
    if pixels.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{pixels.shape[0]} images but {labels.shape[0]} labels"
        )
    if labels.size and labels.max() >= num_classes:
        raise CountMismatchError(f"label {labels.max()} outside {num_classes} classes")
    return Dataset(pixels.astype(np.float64) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(dataset: Dataset, images_path, labels_path, shape=None) -> None:
    """Inverse of :func:`load_idx`; pixels are quantized to ``round(255 * x)``."""
    n, d = dataset.features.shape
    rows, cols = shape if shape is not None else (1, d)
    if rows * cols != d:
        raise InvalidInputError("image shape does not match feature width")
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    dim: int = 20
    samples_per_class: int = 200
    class_mean_separation: float = 2.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.class_mean_separation > 0 or not self.noise_std > 0:
            raise InvalidInputError("separation and noise_std must be positive")
        if self.dim < self.num_classes:
            raise InvalidInputError("dim must be at least num_classes")
        if self.num_classes < 2 or self.samples_per_class < 1:
            raise InvalidInputError("need >= 2 classes and >= 1 sample per class")


def class_means(spec: SyntheticSpec) -> np.ndarray:
    # Scaled axis vectors: any two means are exactly `separation` apart.
    means = np.zeros((spec.num_classes, spec.dim))
    means[np.arange(spec.num_classes), np.arange(spec.num_classes)] = (
        spec.class_mean_separation / np.sqrt(2.0)
    )
    return means


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Isotropic Gaussian classes, shuffled, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    features = class_means(spec)[labels] + spec.noise_std * rng.standard_normal(
        (labels.size, spec.dim)
    )
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order], spec.num_classes)
