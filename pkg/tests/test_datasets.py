"""Test the amcloss.datasets module."""
import csv
import gzip
import json
import logging
import struct

import numpy as np
import pytest

from amcloss.datasets import (
    BatchPlan,
    Dataset,
    channel_statistics,
    export_embeddings,
    load_cifar_bin,
    load_dataset,
    load_mnist_idx,
    normalize_images,
    normalize_splits,
    subset,
    write_cifar_bin,
    write_mnist_idx,
)
from amcloss.errors import ConfigError, ContractViolationError, DatasetFormatError, LabelRangeError

from . import synthetic_digits, tiny_dataset, write_cifar10_fixture, write_mnist_fixture


def test_load_mnist_fixture(mnist_dir):
    train = load_dataset("mnist", mnist_dir, "train")
    test = load_dataset("mnist", mnist_dir, "test")
    assert (len(train), len(test)) == (64, 32)
    assert train.images.shape == (64, 1, 28, 28)
    assert train.num_classes == 10
    assert train.scheme == "raw"
    images, labels = synthetic_digits(64, 0)
    np.testing.assert_array_equal(train.images[:, 0], images[:, 0])
    np.testing.assert_array_equal(train.labels, labels)


def test_load_gzipped_mnist(tmp_path):
    directory = write_mnist_fixture(tmp_path, train=8, test=4, compress=True)
    assert (directory / "train-images-idx3-ubyte.gz").read_bytes()[:2] == b"\x1f\x8b"
    assert len(load_dataset("mnist", directory, "train")) == 8


def test_gzipped_fixtures_are_reproducible(tmp_path):
    a = write_mnist_fixture(tmp_path / "a", train=4, test=2, compress=True)
    b = write_mnist_fixture(tmp_path / "b", train=4, test=2, compress=True)
    name = "t10k-labels-idx1-ubyte.gz"
    assert (a / name).read_bytes() == (b / name).read_bytes()


def test_idx_header_is_big_endian(tmp_path):
    write_mnist_idx(np.zeros((3, 28, 28), dtype=np.uint8), [0, 1, 2], tmp_path / "i", tmp_path / "l")
    assert struct.unpack(">IIII", (tmp_path / "i").read_bytes()[:16]) == (2051, 3, 28, 28)
    assert struct.unpack(">II", (tmp_path / "l").read_bytes()[:8]) == (2049, 3)


@pytest.mark.parametrize(
    ("mutate", "match"),
    [
        (lambda images, labels: (b"\x00\x00\x08\x01" + images[4:], labels), "magic"),
        (lambda images, labels: (images[:-5], labels), "ended unexpectedly"),
        (lambda images, labels: (images, labels[:6]), "ended unexpectedly"),
        (lambda images, labels: (images, struct.pack(">II", 2049, 2) + labels[8:10]), "labels"),
    ],
)
def test_broken_idx_files(tmp_path, mutate, match):
    write_mnist_idx(np.zeros((3, 4, 4), dtype=np.uint8), [0, 1, 2], tmp_path / "i", tmp_path / "l")
    images, labels = mutate((tmp_path / "i").read_bytes(), (tmp_path / "l").read_bytes())
    (tmp_path / "i").write_bytes(images)
    (tmp_path / "l").write_bytes(labels)
    with pytest.raises(DatasetFormatError, match=match):
        load_mnist_idx(tmp_path / "i", tmp_path / "l")


def test_truncated_gzip(tmp_path):
    (tmp_path / "i.gz").write_bytes(gzip.compress(b"\x00" * 100)[:20])
    (tmp_path / "l").write_bytes(b"")
    with pytest.raises(DatasetFormatError, match="ended unexpectedly"):
        load_mnist_idx(tmp_path / "i.gz", tmp_path / "l")


def test_missing_files(tmp_path):
    with pytest.raises(DatasetFormatError, match="not found"):
        load_dataset("mnist", tmp_path, "train")


def test_load_cifar10_fixture(tmp_path):
    directory = write_cifar10_fixture(tmp_path, per_batch=6)
    train = load_dataset("cifar10", directory, "train")
    test = load_dataset("cifar10", directory, "test")
    assert train.images.shape == (30, 3, 32, 32)
    assert len(test) == 6
    images, labels = synthetic_digits(6, 0, size=32, channels=3)
    np.testing.assert_array_equal(train.images[:6], images)
    np.testing.assert_array_equal(train.labels[:6], labels)


def test_cifar100_coarse_labels(tmp_path):
    root = tmp_path / "cifar-100-binary"
    root.mkdir()
    images = np.random.default_rng(60).integers(0, 256, size=(5, 3, 32, 32)).astype(np.uint8)
    coarse = [0, 19, 7, 3, 12]
    for name in ("train.bin", "test.bin"):
        write_cifar_bin(images, coarse, root / name, variant="cifar100-coarse", fine_labels=[99, 0, 1, 2, 3])
    train = load_dataset("cifar100", tmp_path, "train")
    assert train.num_classes == 20
    np.testing.assert_array_equal(train.labels, coarse)
    np.testing.assert_array_equal(train.images, images)


def test_cifar_record_size(tmp_path):
    (tmp_path / "batch.bin").write_bytes(b"\x00" * 3073 * 2 + b"\x00")
    with pytest.raises(DatasetFormatError, match="multiple"):
        load_cifar_bin([tmp_path / "batch.bin"])


def test_cifar_needs_files():
    with pytest.raises(DatasetFormatError, match="no batch files"):
        load_cifar_bin([])


def test_cifar10_label_range(tmp_path):
    write_cifar_bin(np.zeros((1, 3, 32, 32)), [12], tmp_path / "b.bin")
    with pytest.raises(LabelRangeError):
        load_cifar_bin([tmp_path / "b.bin"])


@pytest.mark.parametrize(("name", "split", "field"), [("svhn", "train", "dataset"), ("mnist", "valid", "split")])
def test_load_dataset_rejects(tmp_path, name, split, field):
    with pytest.raises(ConfigError, match=field):
        load_dataset(name, tmp_path, split)


def _raw(images, split="train"):
    images = np.asarray(images, dtype=np.float64)
    return Dataset(images, np.zeros(len(images), dtype=np.int64), split, "cifar10", 10)


def test_unit_range():
    out = normalize_images(_raw(np.full((2, 1, 2, 2), 255.0)), "unit_range")
    np.testing.assert_array_equal(out.images, 1.0)
    assert out.scheme == "unit_range"


def test_standardize_uses_train_statistics():
    rng = np.random.default_rng(61)
    train = _raw(rng.uniform(0, 255, size=(20, 3, 4, 4)))
    test = _raw(rng.uniform(0, 255, size=(10, 3, 4, 4)), split="test")
    train_n, test_n = normalize_splits(train, test, "standardize")
    np.testing.assert_allclose(train_n.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(train_n.images.std(axis=(0, 2, 3)), 1.0, atol=1e-12)
    mean, std = channel_statistics(train)
    np.testing.assert_allclose(test_n.images, (test.images - mean[None, :, None, None]) / std[None, :, None, None])


def test_standardize_test_split_alone_warns(caplog):
    with caplog.at_level(logging.WARNING):
        normalize_images(_raw(np.arange(8.0).reshape(2, 1, 2, 2), split="test"), "standardize")
    assert "its own statistics" in caplog.text


def test_constant_channel_is_not_divided_by_zero():
    out = normalize_images(_raw(np.full((2, 1, 2, 2), 7.0)), "standardize")
    np.testing.assert_array_equal(out.images, 0.0)


def test_normalize_twice():
    once = normalize_images(_raw(np.zeros((1, 1, 2, 2))), "unit_range")
    with pytest.raises(ContractViolationError, match="already normalized"):
        normalize_images(once, "unit_range")


def test_subset_is_seeded_and_ordered():
    data = tiny_dataset(50, seed=62)
    a, b = subset(data, 20, seed=3), subset(data, 20, seed=3)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert len(a) == 20
    with pytest.raises(ConfigError, match="subset"):
        subset(data, 51, seed=3)


def test_subset_keeps_source_indices():
    data = tiny_dataset(50, seed=62)
    first = subset(data, 20, seed=3)
    np.testing.assert_array_equal(data.images[first.source_indices], first.images)
    second = subset(first, 5, seed=4)
    assert len(second.source_indices) == 5
    np.testing.assert_array_equal(data.labels[second.source_indices], second.labels)
    np.testing.assert_array_equal(data.images[second.source_indices], second.images)
    np.testing.assert_array_equal(data.source_indices, np.arange(50))


def test_batch_plan():
    plan = BatchPlan(10, 4, seed=5)
    assert len(plan) == 2
    batches = list(plan.batches(0))
    assert [len(b) for b in batches] == [4, 4]
    assert len(set(np.concatenate(batches))) == 8
    np.testing.assert_array_equal(plan.permutation(3), BatchPlan(10, 4, seed=5).permutation(3))
    assert not np.array_equal(plan.permutation(0), plan.permutation(1))


@pytest.mark.parametrize(("size", "batch"), [(10, 1), (3, 4)])
def test_batch_plan_rejects(size, batch):
    with pytest.raises(ConfigError, match="batch-size"):
        BatchPlan(size, batch, seed=1)


def test_dataset_shape_check():
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((2, 4, 4)), np.zeros(2, dtype=np.int64), "train", "mnist", 10)
    with pytest.raises(DatasetFormatError, match="source index"):
        Dataset(np.zeros((2, 1, 4, 4)), np.zeros(2, dtype=np.int64), "train", "mnist", 10, indices=np.arange(3))


@pytest.mark.parametrize("normalized", [False, True])
def test_export_embeddings(model, tmp_path, normalized):
    data = tiny_dataset(9, seed=63)
    path = export_embeddings(model, data, tmp_path / "embed.csv", normalized=normalized, config={"seed": 1})
    with path.open(newline="") as stream:
        rows = list(csv.reader(stream))
    assert rows[0] == ["index", "label", "f1", "f2", "f3", "f4"]
    assert len(rows) == 10
    assert [int(row[1]) for row in rows[1:]] == data.labels.tolist()
    features = np.array([[float(v) for v in row[2:]] for row in rows[1:]])
    expected, _ = model.predict(data.images)
    if normalized:
        np.testing.assert_allclose(np.linalg.norm(features, axis=1), 1.0, atol=1e-12)
        expected = expected / np.linalg.norm(expected, axis=1, keepdims=True)
    np.testing.assert_array_equal(features, expected)
    sidecar = json.loads((tmp_path / "embed.csv.meta.json").read_text())
    assert sidecar["config"] == {"seed": 1}
    assert sidecar["seed"] == 1


def test_export_embeddings_of_subset(model, tmp_path):
    data = tiny_dataset(30, seed=64)
    part = subset(data, 6, seed=2)
    path = export_embeddings(model, part, tmp_path / "part.csv")
    with path.open(newline="") as stream:
        rows = list(csv.reader(stream))[1:]
    indices = [int(row[0]) for row in rows]
    assert indices == part.source_indices.tolist()
    assert [int(row[1]) for row in rows] == data.labels[indices].tolist()
    full, _ = model.predict(data.images[indices])
    np.testing.assert_allclose(np.array([[float(v) for v in row[2:]] for row in rows]), full, rtol=0, atol=1e-12)


@pytest.mark.samples()
def test_official_mnist_sizes(real_data_dir):
    assert len(load_dataset("mnist", real_data_dir, "train")) == 60_000
    assert len(load_dataset("mnist", real_data_dir, "test")) == 10_000


@pytest.mark.samples()
def test_official_cifar_sizes(real_data_dir):
    train = load_dataset("cifar10", real_data_dir, "train")
    assert len(train) == 50_000
    assert set(np.unique(train.labels)) <= set(range(10))
    coarse = load_dataset("cifar100", real_data_dir, "test")
    assert coarse.labels.max() < 20
