"""Test the amcloss._checkpoint module."""
import json

import numpy as np
import pytest

from amcloss._checkpoint import FORMAT_VERSION, META_KEY, load_checkpoint, save_checkpoint
from amcloss.errors import CheckpointError
from amcloss.tensor import Tape

from . import tiny_model


def _trained_once(model):
    tape = Tape()
    images = np.random.default_rng(40).uniform(size=(4, 1, 12, 12))
    model.forward(tape.constant(images), mode="train", tape=tape, rng=np.random.default_rng(0))
    return model


def test_round_trip_restores_outputs(model, tmp_path):
    _trained_once(model)
    target = save_checkpoint(model, tmp_path / "model.npz", config={"seed": 3})
    restored, meta = load_checkpoint(target)
    assert meta["format_version"] == FORMAT_VERSION
    assert meta["config"] == {"seed": 3}
    assert restored.spec == model.spec
    images = np.random.default_rng(41).uniform(size=(3, 1, 12, 12))
    np.testing.assert_array_equal(restored.forward(images)[1].numpy(), model.forward(images)[1].numpy())
    assert restored.bn_states["bn1"].updates == 1
    np.testing.assert_array_equal(restored.bn_states["bn2"].running_var, model.bn_states["bn2"].running_var)


def test_suffix_is_appended(model, tmp_path):
    assert save_checkpoint(model, tmp_path / "model").name == "model.npz"


def test_float32_round_trip(tmp_path):
    model = tiny_model(dtype="float32")
    restored, meta = load_checkpoint(save_checkpoint(model, tmp_path / "m32.npz"))
    assert meta["dtype"] == "float32"
    assert restored.parameters["dense.weight"].value.dtype == np.float32


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="Cannot read"):
        load_checkpoint(tmp_path / "absent.npz")


def test_foreign_archive(tmp_path):
    np.savez(tmp_path / "other.npz", weights=np.zeros(3))
    with pytest.raises(CheckpointError, match="metadata"):
        load_checkpoint(tmp_path / "other.npz")


def _rewrite(path, target, **changes):
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files}
    arrays.update(changes)
    np.savez(target, **arrays)
    return target


def _meta_array(meta):
    return np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)


def test_unsupported_version(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "model.npz")
    _, meta = load_checkpoint(path)
    meta["format_version"] = 99
    broken = _rewrite(path, tmp_path / "v99.npz", **{META_KEY: _meta_array(meta)})
    with pytest.raises(CheckpointError, match="format version 99"):
        load_checkpoint(broken)


def test_parameter_shape_mismatch(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "model.npz")
    broken = _rewrite(path, tmp_path / "bad.npz", **{"param/dense.bias": np.zeros(3)})
    with pytest.raises(CheckpointError, match="dense.bias"):
        load_checkpoint(broken)


def test_missing_batch_norm_statistics(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "model.npz")
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files if not name.startswith("bn/bn3/")}
    np.savez(tmp_path / "nobn.npz", **arrays)
    with pytest.raises(CheckpointError, match="bn3"):
        load_checkpoint(tmp_path / "nobn.npz")


def test_corrupt_metadata(model, tmp_path):
    path = save_checkpoint(model, tmp_path / "model.npz")
    broken = _rewrite(path, tmp_path / "corrupt.npz", **{META_KEY: np.frombuffer(b"{not json", dtype=np.uint8)})
    with pytest.raises(CheckpointError, match="Corrupt"):
        load_checkpoint(broken)
