"""
Model checkpoints as NumPy ``.npz`` archives.

An archive holds one array per parameter (``param/<name>``), two arrays per
batch-norm layer (``bn/<name>/running_mean`` and ``bn/<name>/running_var``)
and a ``__meta__`` entry: the UTF-8 JSON metadata record stored as a uint8
array. Archives are read with ``allow_pickle=False``. See
``docs/user/checkpoint-format.md``.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ._version import __version__
from .errors import CheckpointError, ConfigError
from .models import ArchitectureSpec, Model, init_bn_states, init_parameters

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_KEY = "__meta__"

StrPath = Union[str, Path]


def save_checkpoint(model: Model, path: StrPath, config: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a model to ``path``.

    Args:
        model: the model to store.
        path: target file; NumPy appends ``.npz`` if it is missing.
        config: the resolved run configuration, kept for provenance.

    Returns:
        The path that was written.
    """
    meta = {
        "format_version": FORMAT_VERSION,
        "amcloss_version": __version__,
        "dtype": model.dtype.name,
        "architecture": model.spec.to_dict(),
        "config": config or {},
        "bn_updates": {name: state.updates for name, state in model.bn_states.items()},
    }
    arrays: Dict[str, np.ndarray] = {
        META_KEY: np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    }
    for name, param in model.parameters.items():
        arrays[f"param/{name}"] = param.value
    for name, state in model.bn_states.items():
        arrays[f"bn/{name}/running_mean"] = state.running_mean
        arrays[f"bn/{name}/running_var"] = state.running_var
    target = Path(path)
    if target.suffix != ".npz":
        target = target.with_name(target.name + ".npz")
    try:
        np.savez(target, **arrays)
    except OSError as exc:
        raise CheckpointError(f"Cannot write checkpoint {target}: {exc}") from exc
    logger.info("Saved checkpoint %s", target)
    return target


def _read_meta(archive: Any) -> Dict[str, Any]:
    if META_KEY not in archive.files:
        raise CheckpointError("Not an amcloss checkpoint: metadata record missing")
    try:
        meta = json.loads(archive[META_KEY].tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Corrupt checkpoint metadata: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format version {meta.get('format_version')!r}")
    return meta


def load_checkpoint(path: StrPath) -> Tuple[Model, Dict[str, Any]]:
    """
    Read a model written by :func:`save_checkpoint`.

    Returns:
        The model and the metadata record.

    Raises:
        CheckpointError: if the file is missing, corrupt, of another format
            version or its arrays do not fit the stored architecture.
    """
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    with archive:
        meta = _read_meta(archive)
        try:
            spec = ArchitectureSpec.from_dict(meta["architecture"])
        except (KeyError, ConfigError) as exc:
            raise CheckpointError(f"Checkpoint architecture is invalid: {exc}") from exc
        dtype = np.dtype(meta.get("dtype", "float64"))
        params = init_parameters(spec, np.random.default_rng(0), dtype)
        for name, param in params.items():
            key = f"param/{name}"
            if key not in archive.files:
                raise CheckpointError(f"Checkpoint lacks parameter {name}")
            value = archive[key]
            if value.shape != param.shape:
                raise CheckpointError(f"Parameter {name}: stored shape {value.shape}, architecture needs {param.shape}")
            param.value[...] = value
        bn_states = init_bn_states(spec, dtype)
        updates = meta.get("bn_updates", {})
        for name, state in bn_states.items():
            try:
                state.running_mean[...] = archive[f"bn/{name}/running_mean"]
                state.running_var[...] = archive[f"bn/{name}/running_var"]
            except KeyError as exc:
                raise CheckpointError(f"Checkpoint lacks batch-norm statistics of {name}") from exc
            except ValueError as exc:
                raise CheckpointError(f"Batch-norm statistics of {name} do not fit: {exc}") from exc
            state.updates = int(updates.get(name, 0))
    return Model(spec, params, bn_states, dtype), meta
