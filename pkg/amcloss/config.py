"""
Run configuration.

Values are resolved with the precedence command line flag > JSON config file
> built-in default. The default data directory comes from the
``AMCLOSS_DATA_DIR`` environment variable when it is set. The resolved
configuration is what every artifact records.
"""
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from ._utils import dtype_from_name, logger_warning
from .constants import DATASET_CLASSES, SCHEDULE_PRESETS, LossDefaults, ScheduleDefaults, TrainingDefaults
from .datasets import DEFAULT_SCHEMES
from .errors import ConfigError
from .losses import LOSS_MODES, LossConfig
from .models import PRESETS
from .schedules import ScheduleConfig

DATA_DIR_ENV = "AMCLOSS_DATA_DIR"

DATASET_PRESETS = {"mnist": "mnist_net", "cifar10": "cifar_net", "cifar100": "cifar_net"}
SCHEMES = ("raw", "unit_range", "standardize")


def _default_data_dir() -> str:
    return os.environ.get(DATA_DIR_ENV, "data")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything needed to reproduce a run.

    ``preset``, ``embed_dim`` and ``scheme`` left as None are filled in from
    the dataset by :meth:`resolve`.
    """

    dataset: str = "mnist"
    data_dir: str = "data"
    preset: Optional[str] = None
    loss: str = "amc"
    lam: float = LossDefaults.LAMBDA
    margin_g: float = LossDefaults.MARGIN_GEODESIC
    margin_e: float = LossDefaults.MARGIN_EUCLIDEAN
    epochs: int = ScheduleDefaults.TOTAL_EPOCHS
    rampup: int = ScheduleDefaults.RAMPUP_LENGTH
    rampdown: int = ScheduleDefaults.RAMPDOWN_LENGTH
    rampdown_weight: bool = True
    batch_size: int = TrainingDefaults.BATCH_SIZE
    lr: float = ScheduleDefaults.MAX_LEARNING_RATE
    seed: int = TrainingDefaults.SEED
    embed_dim: Optional[int] = None
    scheme: Optional[str] = None
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    kmeans: bool = False
    dtype: str = "float64"
    out: str = "runs"

    @property
    def num_classes(self) -> int:
        return DATASET_CLASSES[self.dataset]

    def resolve(self) -> "RunConfig":
        """Fill the dataset dependent fields and validate."""
        if self.dataset not in DATASET_CLASSES:
            raise ConfigError(f"dataset: expected one of {sorted(DATASET_CLASSES)}, got {self.dataset!r}")
        preset = self.preset or DATASET_PRESETS[self.dataset]
        embed_dim = self.embed_dim
        if embed_dim is None:
            embed_dim = 128 if preset == "cifar_net" else 64
        resolved = replace(self, preset=preset, embed_dim=embed_dim, scheme=self.scheme or DEFAULT_SCHEMES[self.dataset])
        resolved.validate()
        return resolved

    def validate(self) -> None:
        """
        Raises:
            ConfigError: naming the first invalid field.
        """
        if self.dataset not in DATASET_CLASSES:
            raise ConfigError(f"dataset: expected one of {sorted(DATASET_CLASSES)}, got {self.dataset!r}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"preset: expected one of {PRESETS}, got {self.preset!r}")
        if self.preset is not None and self.preset != DATASET_PRESETS[self.dataset]:
            raise ConfigError(f"preset: {self.preset} does not take {self.dataset} images")
        if self.loss not in LOSS_MODES:
            raise ConfigError(f"loss: expected one of {LOSS_MODES}, got {self.loss!r}")
        if self.embed_dim is not None and self.embed_dim < 2:
            raise ConfigError(f"embed_dim: need at least 2, got {self.embed_dim}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigError(f"scheme: expected one of {SCHEMES}, got {self.scheme!r}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size: must be >= 2, got {self.batch_size}")
        for name in ("train_subset", "test_subset"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name}: must be >= 1, got {value}")
        dtype_from_name(self.dtype)
        self.loss_config()
        self.schedule_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, margin_g=self.margin_g, margin_e=self.margin_e, mode=self.loss)  # type: ignore[arg-type]

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            total_epochs=self.epochs,
            rampup_len=self.rampup,
            rampdown_len=self.rampdown,
            max_lr=self.lr,
            rampdown_weight=self.rampdown_weight,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown configuration field")
        return cls(**dict(data))

    @classmethod
    def from_sources(
        cls,
        flags: Optional[Mapping[str, Any]] = None,
        config_file: Optional[Union[str, Path]] = None,
        schedule: Optional[str] = None,
    ) -> "RunConfig":
        """
        Merge explicitly given flags over a JSON config file over the defaults.

        Args:
            flags: values set on the command line; absent keys are not set.
            config_file: a JSON object of field values.
            schedule: ``table`` or ``figure``; supplies epochs and ramp
                lengths that neither the flags nor the file set.

        Returns:
            The resolved, validated configuration.
        """
        merged: Dict[str, Any] = {"data_dir": _default_data_dir()}
        file_values: Dict[str, Any] = {}
        if config_file is not None:
            try:
                file_values = json.loads(Path(config_file).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"config: cannot read {config_file} ({exc})") from exc
            if not isinstance(file_values, dict):
                raise ConfigError("config: the file must hold a JSON object")
        explicit = {**file_values, **(flags or {})}
        if schedule is not None:
            if schedule not in SCHEDULE_PRESETS:
                raise ConfigError(f"schedule: expected one of {sorted(SCHEDULE_PRESETS)}, got {schedule!r}")
            preset = SCHEDULE_PRESETS[schedule]
            merged.update(
                epochs=preset["total_epochs"], rampup=preset["rampup_len"], rampdown=preset["rampdown_len"]
            )
        merged.update(explicit)
        config = cls.from_dict(merged).resolve()
        if config.loss == "ce" and ({"margin_g", "margin_e"} & set(explicit)):
            logger_warning("Margins have no effect with the cross-entropy loss", __name__)
        return config
