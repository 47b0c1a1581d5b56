"""
Readers and writers for the MNIST IDX and CIFAR binary formats, input
normalization, seeded batching and the export of deep features.

IDX files are big-endian: a 4 byte magic number (2051 for images, 2049 for
labels), a 4 byte item count, for images two more 4 byte sizes (rows,
columns), then one unsigned byte per pixel or label. Files ending in ``.gz``
(or starting with the gzip magic) are decompressed transparently.

CIFAR-10 records are 1 label byte followed by 3072 pixel bytes (1024 red,
then green, then blue, row-major 32x32). CIFAR-100 records carry a coarse and
a fine label byte before the pixels; the coarse (20 super-class) label is
kept.
"""
import csv
import gzip
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._utils import logger_warning, seeded_stream, write_sidecar
from .constants import DATASET_CLASSES, Numerics, RandomStreams
from .errors import (
    FILE_TRUNCATED,
    ConfigError,
    ContractViolationError,
    DatasetFormatError,
    DegenerateFeatureError,
    LabelRangeError,
)
from .types import CifarVariantType, SchemeType, SplitType

if TYPE_CHECKING:
    from .models import Model

logger = logging.getLogger(__name__)

StrPath = Union[str, Path]

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
GZIP_MAGIC = b"\x1f\x8b"
CIFAR_PIXELS = 3 * 32 * 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR10_DIR = "cifar-10-batches-bin"
CIFAR10_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}
CIFAR100_DIR = "cifar-100-binary"
CIFAR100_FILES = {"train": ("train.bin",), "test": ("test.bin",)}

DEFAULT_SCHEMES: Dict[str, SchemeType] = {"mnist": "unit_range", "cifar10": "standardize", "cifar100": "standardize"}


@dataclass(frozen=True)
class Dataset:
    """
    Images (N, C, H, W) and integer labels of one split.

    ``scheme`` records how the pixel values were normalized; ``raw`` means
    the byte values 0..255. ``indices`` are the positions of the rows in the
    file they were loaded from; None means ``0..N-1``.
    """

    images: np.ndarray
    labels: np.ndarray
    split: SplitType
    name: str
    num_classes: int
    scheme: SchemeType = "raw"
    indices: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DatasetFormatError(
                f"{self.name}: expected (N, C, H, W) images and N labels, got {self.images.shape} and {self.labels.shape}"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"{self.name}: labels must lie in [0, {self.num_classes})")
        if self.indices is not None and self.indices.shape != self.labels.shape:
            raise DatasetFormatError(f"{self.name}: expected one source index per label, got {self.indices.shape}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def source_indices(self) -> np.ndarray:
        return np.arange(len(self.labels)) if self.indices is None else self.indices


def _read_bytes(path: StrPath) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"Cannot read {path}: {exc}") from exc
    if path.suffix == ".gz" or raw[:2] == GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DatasetFormatError(f"{path}: {FILE_TRUNCATED} ({exc})") from exc
    return raw


def _idx_header(data: bytes, path: StrPath, magic: int, size: int) -> Tuple[int, ...]:
    if len(data) < size:
        raise DatasetFormatError(f"{path}: {FILE_TRUNCATED}")
    fields = struct.unpack_from(">" + "I" * (size // 4), data)
    if fields[0] != magic:
        raise DatasetFormatError(f"{path}: bad IDX magic number {fields[0]}, expected {magic}")
    return fields[1:]


def load_mnist_idx(images_path: StrPath, labels_path: StrPath, split: SplitType = "train") -> Dataset:
    """
    Decode an IDX image file and its label file.

    Returns:
        A raw dataset with (N, 1, rows, cols) float64 pixels in 0..255.

    Raises:
        DatasetFormatError: on a bad magic number, a truncated file or
            differing item counts.
    """
    image_bytes = _read_bytes(images_path)
    count, rows, cols = _idx_header(image_bytes, images_path, IDX_IMAGES_MAGIC, 16)
    if len(image_bytes) - 16 < count * rows * cols:
        raise DatasetFormatError(f"{images_path}: {FILE_TRUNCATED}")
    label_bytes = _read_bytes(labels_path)
    (label_count,) = _idx_header(label_bytes, labels_path, IDX_LABELS_MAGIC, 8)
    if len(label_bytes) - 8 < label_count:
        raise DatasetFormatError(f"{labels_path}: {FILE_TRUNCATED}")
    if label_count != count:
        raise DatasetFormatError(f"{images_path} holds {count} images but {labels_path} {label_count} labels")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=count, offset=8)
    logger.debug("Read %d MNIST images from %s", count, images_path)
    return Dataset(
        images=pixels.reshape(count, 1, rows, cols).astype(np.float64),
        labels=labels.astype(np.int64),
        split=split,
        name="mnist",
        num_classes=DATASET_CLASSES["mnist"],
    )


def _write_bytes(path: StrPath, data: bytes, compress: bool) -> None:
    # mtime=0 keeps compressed fixtures byte-identical
    Path(path).write_bytes(gzip.compress(data, mtime=0) if compress else data)


def write_mnist_idx(
    images: np.ndarray, labels: Sequence[int], images_path: StrPath, labels_path: StrPath, compress: bool = False
) -> None:
    """
    Encode uint8 images of shape (N, rows, cols) or (N, 1, rows, cols) and
    their labels as IDX files.
    """
    pixels = np.asarray(images)
    if pixels.ndim == 4:
        pixels = pixels[:, 0]
    if pixels.ndim != 3:
        raise DatasetFormatError(f"write_mnist_idx: expected (N, rows, cols) images, got {pixels.shape}")
    pixels = pixels.astype(np.uint8)
    count, rows, cols = pixels.shape
    _write_bytes(images_path, struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols) + pixels.tobytes(), compress)
    values = np.asarray(labels, dtype=np.uint8)
    _write_bytes(labels_path, struct.pack(">II", IDX_LABELS_MAGIC, len(values)) + values.tobytes(), compress)


def _record_size(variant: CifarVariantType) -> int:
    if variant == "cifar10":
        return 1 + CIFAR_PIXELS
    if variant == "cifar100-coarse":
        return 2 + CIFAR_PIXELS
    raise ConfigError(f"variant: expected 'cifar10' or 'cifar100-coarse', got {variant!r}")


def load_cifar_bin(
    paths: Sequence[StrPath], variant: CifarVariantType = "cifar10", split: SplitType = "train"
) -> Dataset:
    """
    Decode and concatenate CIFAR binary batch files.

    Raises:
        DatasetFormatError: if a file size is not a whole number of records.
    """
    record = _record_size(variant)
    label_bytes = record - CIFAR_PIXELS
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for path in paths:
        data = _read_bytes(path)
        if len(data) % record:
            raise DatasetFormatError(f"{path}: size {len(data)} is not a multiple of the {record} byte record")
        rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, record)
        labels.append(rows[:, 0].astype(np.int64))
        images.append(rows[:, label_bytes:].reshape(-1, 3, 32, 32))
    name = "cifar10" if variant == "cifar10" else "cifar100"
    if not images:
        raise DatasetFormatError(f"{name}: no batch files given")
    return Dataset(
        images=np.concatenate(images).astype(np.float64),
        labels=np.concatenate(labels),
        split=split,
        name=name,
        num_classes=DATASET_CLASSES[name],
    )


def write_cifar_bin(
    images: np.ndarray,
    labels: Sequence[int],
    path: StrPath,
    variant: CifarVariantType = "cifar10",
    fine_labels: Optional[Sequence[int]] = None,
) -> None:
    """Encode uint8 (N, 3, 32, 32) images as one CIFAR binary batch file."""
    record = _record_size(variant)
    pixels = np.asarray(images).astype(np.uint8).reshape(-1, CIFAR_PIXELS)
    count = len(pixels)
    rows = np.zeros((count, record), dtype=np.uint8)
    rows[:, 0] = np.asarray(labels, dtype=np.uint8)
    if variant == "cifar100-coarse":
        rows[:, 1] = np.asarray(fine_labels if fine_labels is not None else np.zeros(count), dtype=np.uint8)
    rows[:, record - CIFAR_PIXELS:] = pixels
    Path(path).write_bytes(rows.tobytes())


def _find(data_dir: Path, names: Sequence[str], subdir: Optional[str] = None) -> List[Path]:
    found = []
    for name in names:
        candidates = [data_dir / name, data_dir / (name + ".gz")]
        if subdir is not None:
            candidates += [data_dir / subdir / name, data_dir / subdir / (name + ".gz")]
        match = next((c for c in candidates if c.is_file()), None)
        if match is None:
            raise DatasetFormatError(f"{name} not found in {data_dir}")
        found.append(match)
    return found


def load_dataset(name: str, data_dir: StrPath, split: SplitType) -> Dataset:
    """
    Load a split of ``mnist``, ``cifar10`` or ``cifar100`` from the standard
    file names inside ``data_dir`` (or its standard subdirectory).
    """
    root = Path(data_dir)
    if split not in ("train", "test"):
        raise ConfigError(f"split: expected 'train' or 'test', got {split!r}")
    if name == "mnist":
        images_path, labels_path = _find(root, MNIST_FILES[split])
        return load_mnist_idx(images_path, labels_path, split)
    if name == "cifar10":
        return load_cifar_bin(_find(root, CIFAR10_FILES[split], CIFAR10_DIR), "cifar10", split)
    if name == "cifar100":
        return load_cifar_bin(_find(root, CIFAR100_FILES[split], CIFAR100_DIR), "cifar100-coarse", split)
    raise ConfigError(f"dataset: expected one of {sorted(DATASET_CLASSES)}, got {name!r}")


def channel_statistics(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over all images and pixels."""
    return dataset.images.mean(axis=(0, 2, 3)), dataset.images.std(axis=(0, 2, 3))


def normalize_images(dataset: Dataset, scheme: SchemeType, reference: Optional[Dataset] = None) -> Dataset:
    """
    Normalize raw pixel values.

    Args:
        dataset: a raw dataset.
        scheme: ``unit_range`` divides by 255; ``standardize`` subtracts the
            per-channel mean and divides by the per-channel standard
            deviation of ``reference``; ``raw`` keeps the values.
        reference: the split the statistics come from, normally the train
            split. Defaults to ``dataset`` itself.

    Raises:
        ContractViolationError: if the dataset is already normalized.
    """
    if dataset.scheme != "raw":
        raise ContractViolationError(f"{dataset.name}: images are already normalized ({dataset.scheme})")
    if scheme == "raw":
        return dataset
    if scheme == "unit_range":
        return replace(dataset, images=dataset.images / 255.0, scheme=scheme)
    if scheme == "standardize":
        if reference is None:
            if dataset.split == "test":
                logger_warning(f"{dataset.name}: test split standardized with its own statistics", __name__)
            reference = dataset
        if reference.scheme != "raw":
            raise ContractViolationError("The reference split must hold raw pixel values")
        mean, std = channel_statistics(reference)
        std = np.where(std > 0, std, 1.0)
        images = (dataset.images - mean[None, :, None, None]) / std[None, :, None, None]
        return replace(dataset, images=images, scheme=scheme)
    raise ConfigError(f"scheme: expected 'raw', 'unit_range' or 'standardize', got {scheme!r}")


def normalize_splits(train: Dataset, test: Dataset, scheme: SchemeType) -> Tuple[Dataset, Dataset]:
    """Normalize both splits with the statistics of the train split."""
    return normalize_images(train, scheme), normalize_images(test, scheme, reference=train)


def subset(dataset: Dataset, size: int, seed: int) -> Dataset:
    """A seeded random subset of ``size`` samples, kept in original order."""
    if not 0 < size <= len(dataset):
        raise ConfigError(f"subset: size must lie in [1, {len(dataset)}], got {size}")
    rng = seeded_stream(seed, RandomStreams.SUBSET)
    chosen = np.sort(rng.choice(len(dataset), size=size, replace=False))
    return replace(
        dataset, images=dataset.images[chosen], labels=dataset.labels[chosen], indices=dataset.source_indices[chosen]
    )


@dataclass(frozen=True)
class BatchPlan:
    """
    Seeded mini-batch order: every epoch draws its own permutation of
    ``[0, size)`` and cuts it into full batches; the remainder is dropped.
    """

    size: int
    batch_size: int
    seed: int

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"batch-size: must be >= 2, got {self.batch_size}")
        if self.size < self.batch_size:
            raise ConfigError(f"batch-size: {self.batch_size} exceeds the {self.size} training samples")

    def permutation(self, epoch: int) -> np.ndarray:
        return seeded_stream(self.seed, RandomStreams.BATCHES, epoch).permutation(self.size)

    def batches(self, epoch: int) -> Iterator[np.ndarray]:
        order = self.permutation(epoch)
        for start in range(0, len(self) * self.batch_size, self.batch_size):
            yield order[start:start + self.batch_size]

    def __len__(self) -> int:
        return self.size // self.batch_size


def export_embeddings(
    model: "Model",
    dataset: Dataset,
    path: StrPath,
    normalized: bool = False,
    config: Optional[Dict[str, Any]] = None,
    batch_size: int = 256,
) -> Path:
    """
    Write the eval-mode deep features as CSV rows ``index,label,f1..fp``.
    ``index`` is the position of the image in its split file.

    Args:
        model: the network.
        dataset: a normalized split.
        path: the CSV file.
        normalized: write unit-norm ``z_i`` instead of the raw ``x_i``.
        config: run configuration written to ``<path>.meta.json``.

    Raises:
        DegenerateFeatureError: if ``normalized`` and a feature is zero.
    """
    features, _ = model.predict(dataset.images, batch_size=batch_size)
    if normalized:
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        if (norms <= Numerics.MIN_FEATURE_NORM).any():
            raise DegenerateFeatureError("Cannot normalize a zero deep feature")
        features = features / norms
    target = Path(path)
    with target.open("w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(["index", "label", *[f"f{i}" for i in range(1, features.shape[1] + 1)]])
        for index, label, row in zip(dataset.source_indices, dataset.labels, features):
            writer.writerow([int(index), int(label), *[repr(float(v)) for v in row]])
    if config is not None:
        write_sidecar(target, config)
    logger.info("Wrote %d embeddings to %s", len(features), target)
    return target
