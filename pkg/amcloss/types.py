"""Helpers for working with amcloss types."""
import sys
from typing import Literal, Sequence, Union

import numpy as np

if sys.version_info[:2] >= (3, 10):
    from typing import TypeAlias
else:
    from typing_extensions import TypeAlias

ModeType: TypeAlias = Literal["train", "eval"]
PaddingType: TypeAlias = Literal["same", "valid"]
LossModeType: TypeAlias = Literal["ce", "eucd", "amc"]
PresetType: TypeAlias = Literal["cifar_net", "mnist_net"]
SchemeType: TypeAlias = Literal["raw", "unit_range", "standardize"]
SplitType: TypeAlias = Literal["train", "test"]
CifarVariantType: TypeAlias = Literal["cifar10", "cifar100-coarse"]
ArrayLike: TypeAlias = Union[np.ndarray, Sequence[float], float]
