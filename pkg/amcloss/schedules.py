"""
Gaussian ramp-up and ramp-down curves for the pair weight, the learning rate
and Adam's β1.

For epoch ``t`` (0-based) of ``T``:

* ramp-up ``exp(-5 (1 - t / L_up)^2)`` for ``t < L_up``, then 1;
* ramp-down 1 until ``T - L_down``, then ``exp(-12.5 (1 - (T - t) / L_down)^2)``;
* ``w(t) = up * down``, ``lr(t) = max_lr * up * down``,
  ``β1(t) = 0.5 + 0.4 * down``.
"""
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, NamedTuple

from .constants import SCHEDULE_PRESETS, AdamDefaults, ScheduleDefaults
from .errors import ConfigError, ContractViolationError


@dataclass(frozen=True)
class ScheduleConfig:
    """
    Args:
        total_epochs: T.
        rampup_len: epochs of ramp-up; 0 disables the ramp-up.
        rampdown_len: epochs of ramp-down; 0 disables the ramp-down.
        max_lr: learning rate between the ramps.
        rampdown_weight: also ramp the pair weight w(t) down at the end.
    """

    total_epochs: int = ScheduleDefaults.TOTAL_EPOCHS
    rampup_len: int = ScheduleDefaults.RAMPUP_LENGTH
    rampdown_len: int = ScheduleDefaults.RAMPDOWN_LENGTH
    max_lr: float = ScheduleDefaults.MAX_LEARNING_RATE
    rampdown_weight: bool = True

    def __post_init__(self) -> None:
        if self.total_epochs < 1:
            raise ConfigError(f"epochs: must be >= 1, got {self.total_epochs}")
        if self.rampup_len < 0:
            raise ConfigError(f"rampup: must be >= 0, got {self.rampup_len}")
        if self.rampdown_len < 0:
            raise ConfigError(f"rampdown: must be >= 0, got {self.rampdown_len}")
        if self.rampup_len + self.rampdown_len > self.total_epochs:
            raise ConfigError(
                f"rampup/rampdown: {self.rampup_len} + {self.rampdown_len} exceed {self.total_epochs} epochs"
            )
        if not self.max_lr > 0:
            raise ConfigError(f"lr: must be > 0, got {self.max_lr}")

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "ScheduleConfig":
        """``table`` (300/80/50) or ``figure`` (150/40/30), optionally overridden."""
        if name not in SCHEDULE_PRESETS:
            raise ConfigError(f"schedule: expected one of {sorted(SCHEDULE_PRESETS)}, got {name!r}")
        return cls(**{**SCHEDULE_PRESETS[name], **overrides})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ScheduleValues(NamedTuple):
    w: float
    lr: float
    beta1: float


def rampup(t: float, cfg: ScheduleConfig) -> float:
    if t < 0:
        raise ContractViolationError(f"rampup: epoch must be >= 0, got {t}")
    if cfg.rampup_len == 0 or t >= cfg.rampup_len:
        return 1.0
    phase = 1.0 - t / cfg.rampup_len
    return math.exp(ScheduleDefaults.RAMPUP_EXPONENT * phase * phase)


def rampdown(t: float, cfg: ScheduleConfig) -> float:
    if t > cfg.total_epochs:
        raise ContractViolationError(f"rampdown: epoch must be <= {cfg.total_epochs}, got {t}")
    if cfg.rampdown_len == 0 or t <= cfg.total_epochs - cfg.rampdown_len:
        return 1.0
    phase = 1.0 - (cfg.total_epochs - t) / cfg.rampdown_len
    return math.exp(ScheduleDefaults.RAMPDOWN_EXPONENT * phase * phase)


def schedule_values(t: float, cfg: ScheduleConfig) -> ScheduleValues:
    """
    The pair weight, learning rate and β1 for epoch ``t``.

    Raises:
        ContractViolationError: if ``t`` is outside [0, T].
    """
    up = rampup(t, cfg)
    down = rampdown(t, cfg)
    beta1 = ScheduleDefaults.BETA1_FINAL + (AdamDefaults.BETA1 - ScheduleDefaults.BETA1_FINAL) * down
    w = up * down if cfg.rampdown_weight else up
    return ScheduleValues(w=w, lr=cfg.max_lr * up * down, beta1=beta1)
