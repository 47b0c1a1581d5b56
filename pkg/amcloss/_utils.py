"""Utility functions shared by the amcloss modules."""
import functools
import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from ._version import __version__
from .errors import ConfigError

logger = logging.getLogger(__name__)

SeedType = Union[int, Tuple[int, ...]]


def logger_error(msg: str, src: str) -> None:
    """
    Use this instead of logger.error directly.

    That allows people to overwrite it more easily.
    """
    logging.getLogger(src).error(msg)


def logger_warning(msg: str, src: str) -> None:
    """
    Use this instead of logger.warning directly.

    That allows people to overwrite it more easily.

    ## Exception, warnings.warn, logger_warning
    - Exceptions should be used if the user should write code that deals with
      an error case, e.g. a truncated dataset file.
    - warnings.warn should be used if the user needs to fix their code.
    - logger_warning should be used if the user needs to know that an issue was
      handled by amcloss, e.g. a cross-entropy run that was given margins.
    """
    logging.getLogger(src).warning(msg)


def seeded_stream(seed: int, *keys: int) -> np.random.Generator:
    """
    Create an independent random generator from a run seed and stream keys.

    The same ``(seed, *keys)`` always yields the same stream.

    Args:
        seed: the master run seed.
        *keys: stream identifiers, e.g. ``RandomStreams.PAIRS, epoch, step``.

    Returns:
        A NumPy generator.
    """
    return np.random.default_rng([seed, *keys])


def provenance(config: Dict[str, Any]) -> Dict[str, Any]:
    """Metadata record attached to every artifact."""
    return {"amcloss_version": __version__, "config": config, "seed": config.get("seed")}


def write_sidecar(path: Union[str, Path], config: Dict[str, Any]) -> Path:
    """
    Write ``<path>.meta.json`` next to an artifact that cannot embed metadata itself.

    Args:
        path: the artifact.
        config: the resolved run configuration.

    Returns:
        The path of the sidecar file.
    """
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(provenance(config), indent=2, sort_keys=True))
    return sidecar


@functools.lru_cache(maxsize=None)
def dtype_from_name(name: str) -> np.dtype:
    if name not in ("float64", "float32"):
        raise ConfigError(f"dtype: expected 'float64' or 'float32', got {name!r}")
    return np.dtype(name)
