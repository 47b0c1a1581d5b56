"""
All errors/exceptions amcloss raises and all of the warnings it uses.

Please note that malformed input arrays might cause other (NumPy) exceptions.
"""


class AmcLossError(Exception):
    """Base class for all exceptions raised by amcloss."""


class ShapeError(AmcLossError):
    """Raised when tensor shapes do not fit the operation they are passed to."""


class NonFiniteError(AmcLossError):
    """Raised when an operation, a loss or a gradient produced NaN or Inf."""


class DegenerateFeatureError(AmcLossError):
    """Raised when a feature vector is too close to zero to be normalized."""


class ContractViolationError(AmcLossError):
    """
    Raised when an input breaks a documented contract of the callee,
    e.g. a feature handed to the geodesic distance is not unit norm.
    """


class LabelRangeError(AmcLossError):
    """Raised when a class label is outside of [0, num_classes)."""


class ConfigError(AmcLossError):
    """Raised when a configuration value is invalid. The message names the field."""


class DatasetFormatError(AmcLossError):
    """Raised when an IDX or CIFAR binary file cannot be decoded."""


class CheckpointError(AmcLossError):
    """Raised when a checkpoint cannot be read or does not match the model/dataset."""


FILE_TRUNCATED = "File has ended unexpectedly"
