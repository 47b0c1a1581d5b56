"""
The layers of the convolutional networks: convolution, pooling, dense maps,
activations, batch normalization, dropout, input noise and softmax.

Images are NCHW. All kernels are plain NumPy and single-threaded apart from
what the BLAS behind ``np.tensordot`` does, which is order-deterministic.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..constants import Numerics
from ..errors import ConfigError, ShapeError
from ..types import ModeType, PaddingType
from ._base import Function, Operand, Tensor

SUPPORTED_KERNELS = ((3, 3), (1, 1))


class Conv2d(Function):
    name = "conv2d"

    def __init__(self, padding: PaddingType) -> None:
        if padding not in ("same", "valid"):
            raise ConfigError(f"padding: expected 'same' or 'valid', got {padding!r}")
        self.padding = padding

    def forward(self, x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or kernel.ndim != 4:
            raise ShapeError(f"conv2d: expected NCHW input and OCkk kernel, got {x.shape} and {kernel.shape}")
        out_channels, in_channels, kh, kw = kernel.shape
        if (kh, kw) not in SUPPORTED_KERNELS:
            raise ShapeError(f"conv2d: unsupported kernel size {kh}x{kw}")
        if x.shape[1] != in_channels:
            raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {in_channels}")
        if bias.shape != (out_channels,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {out_channels} kernels")
        pad = (kh - 1) // 2 if self.padding == "same" else 0
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        h_out, w_out = padded.shape[2] - kh + 1, padded.shape[3] - kw + 1
        if h_out < 1 or w_out < 1:
            raise ShapeError(f"conv2d: input {x.shape[2]}x{x.shape[3]} is smaller than the kernel")
        # (N, C, H', W', kh, kw)
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        out = np.tensordot(windows, kernel, axes=((1, 4, 5), (1, 2, 3)))
        self.windows, self.kernel, self.padded_shape, self.pad = windows, kernel, padded.shape, pad
        self.input_hw = x.shape[2:]
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        kh, kw = self.kernel.shape[2:]
        h_out, w_out = grad.shape[2:]
        grad_kernel = np.tensordot(grad, self.windows, axes=((0, 2, 3), (0, 2, 3)))
        grad_bias = grad.sum(axis=(0, 2, 3))
        # (N, H', W', C, kh, kw)
        cols = np.tensordot(grad, self.kernel, axes=((1,), (0,)))
        grad_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + h_out, j:j + w_out] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        pad = self.pad
        height, width = self.input_hw
        grad_input = grad_padded[:, :, pad:pad + height, pad:pad + width]
        return np.ascontiguousarray(grad_input), grad_kernel, grad_bias


class MaxPool2x2(Function):
    name = "maxpool2x2"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise ShapeError(f"maxpool2x2: expected NCHW input, got {x.shape}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2: spatial size {h}x{w} is not even")
        windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        # argmax returns the first maximum in row-major window order
        self.argmax = windows.argmax(axis=-1)[..., None]
        self.shape = x.shape
        return np.take_along_axis(windows, self.argmax, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n, c, h, w = self.shape
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax, grad[..., None], axis=-1)
        routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (routed.reshape(n, c, h, w),)


class GlobalAvgPool(Function):
    name = "global_avg_pool"

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
            raise ShapeError(f"global_avg_pool: expected non-empty NCHW input, got {x.shape}")
        self.shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        h, w = self.shape[2:]
        spread = np.broadcast_to(grad[:, :, None, None] / (h * w), self.shape)
        return (np.array(spread),)


class Dense(Function):
    name = "dense"

    def forward(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
            raise ShapeError(f"dense: cannot map input {x.shape} with weight {weight.shape}")
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias shape {bias.shape} does not match weight {weight.shape}")
        self.x, self.weight = x, weight
        return x @ weight + bias

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return grad @ self.weight.T, self.x.T @ grad, grad.sum(axis=0)


class LeakyReLU(Function):
    name = "leaky_relu"

    def __init__(self, alpha: float) -> None:
        if not 0.0 < alpha < 1.0:
            raise ConfigError(f"alpha: must lie in (0, 1), got {alpha}")
        self.alpha = alpha

    def forward(self, x: np.ndarray) -> np.ndarray:
        # the slope at exactly 0 is alpha
        self.slope = np.where(x > 0, 1.0, self.alpha).astype(x.dtype)
        return x * self.slope

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.slope,)


@dataclass
class BatchNormState:
    """Running per-channel statistics of one batch normalization layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = Numerics.BATCH_NORM_MOMENTUM
    epsilon: float = Numerics.BATCH_NORM_EPSILON
    updates: int = field(default=0)

    @classmethod
    def create(cls, channels: int, dtype: np.dtype = np.dtype("float64")) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


class BatchNorm(Function):
    name = "batch_norm"

    def __init__(self, state: BatchNormState, mode: ModeType) -> None:
        self.state = state
        self.mode = mode

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
        if x.ndim not in (2, 4):
            raise ShapeError(f"batch_norm: expected NC or NCHW input, got {x.shape}")
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ShapeError(f"batch_norm: {x.shape[1]} channels but gamma/beta have shapes {gamma.shape}/{beta.shape}")
        state = self.state
        if self.mode == "train":
            if x.shape[0] < 2:
                raise ShapeError("batch_norm: train mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            state.running_mean = state.momentum * state.running_mean + (1.0 - state.momentum) * mean
            state.running_var = state.momentum * state.running_var + (1.0 - state.momentum) * var
            state.updates += 1
        else:
            mean, var = state.running_mean, state.running_var
        self.inv_std = (1.0 / np.sqrt(var + state.epsilon)).astype(x.dtype).reshape(shape)
        self.normalized = (x - mean.reshape(shape)) * self.inv_std
        self.gamma, self.axes, self.shape = gamma.reshape(shape), axes, shape
        self.count = x.size // x.shape[1]
        return self.gamma * self.normalized + beta.reshape(shape)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        axes, xhat = self.axes, self.normalized
        grad_gamma = (grad * xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_xhat = grad * self.gamma
        if self.mode == "train":
            m = self.count
            grad_input = self.inv_std / m * (
                m * grad_xhat
                - grad_xhat.sum(axis=axes, keepdims=True)
                - xhat * (grad_xhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_input = grad_xhat * self.inv_std
        return grad_input, grad_gamma, grad_beta


class _Multiply(Function):
    """Multiplication with a constant array (the dropout mask)."""

    name = "dropout"

    def __init__(self, factor: np.ndarray) -> None:
        self.factor = factor

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x * self.factor

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.factor,)


class _Shift(Function):
    """Addition of a constant array (the input noise)."""

    name = "gaussian_noise"

    def __init__(self, offset: np.ndarray) -> None:
        self.offset = offset

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x + self.offset

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad,)


class Softmax(Function):
    name = "softmax"

    def forward(self, logits: np.ndarray) -> np.ndarray:
        self.probs = softmax_array(logits)
        return self.probs

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        s = self.probs
        return (s * (grad - (grad * s).sum(axis=1, keepdims=True)),)


def softmax_array(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of an (N, C) array with max-subtraction."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"softmax: expected (N, C) logits with C >= 2, got {logits.shape}")
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def conv2d(input: Operand, kernel: Operand, bias: Operand, padding: PaddingType = "same") -> Tensor:
    """
    2-D cross-correlation of an NCHW batch with OCkk kernels (k in {1, 3}).

    Args:
        input: images or feature maps, NCHW.
        kernel: weights of shape (out_channels, in_channels, k, k).
        bias: one value per output channel.
        padding: ``same`` keeps H x W, ``valid`` shrinks it by k - 1.

    Returns:
        The feature maps, (N, out_channels, H', W').

    Raises:
        ShapeError: on channel mismatch or an unsupported kernel size.
    """
    return Conv2d.apply(input, kernel, bias, padding=padding)


def maxpool2x2(input: Operand) -> Tensor:
    """2x2 max-pooling with stride 2. Ties route the gradient to the first cell."""
    return MaxPool2x2.apply(input)


def global_avg_pool(input: Operand) -> Tensor:
    """Per-channel spatial mean: NCHW -> NC."""
    return GlobalAvgPool.apply(input)


def dense(input: Operand, weight: Operand, bias: Operand) -> Tensor:
    """Affine map ``input @ weight + bias`` with weight of shape (D, K)."""
    return Dense.apply(input, weight, bias)


def leaky_relu(input: Operand, alpha: float = Numerics.LEAKY_RELU_ALPHA) -> Tensor:
    return LeakyReLU.apply(input, alpha=alpha)


def batch_norm(input: Operand, gamma: Operand, beta: Operand, state: BatchNormState, mode: ModeType) -> Tensor:
    """
    Batch normalization over the batch (and spatial) axes.

    In train mode the batch statistics are used and folded into the running
    statistics of ``state``; in eval mode the running statistics are used.

    Raises:
        ShapeError: for a train-mode batch of one sample.
    """
    return BatchNorm.apply(input, gamma, beta, state=state, mode=mode)


def dropout(input: Tensor, rate: float, mode: ModeType, rng: Optional[np.random.Generator]) -> Tensor:
    """
    Inverted dropout: survivors are scaled by 1 / (1 - rate) at train time,
    so evaluation is the identity.

    Raises:
        ConfigError: if rate is outside [0, 1) or no generator is given in train mode.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"rate: dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return input
    if rng is None:
        raise ConfigError("rng: train-mode dropout needs a seeded generator")
    keep = rng.random(input.shape) >= rate
    return _Multiply.apply(input, factor=(keep / (1.0 - rate)).astype(input.dtype))


def gaussian_noise(input: Tensor, sigma: float, mode: ModeType, rng: Optional[np.random.Generator]) -> Tensor:
    """Add N(0, sigma^2) noise in train mode; the identity in eval mode."""
    if sigma < 0:
        raise ConfigError(f"sigma: must be non-negative, got {sigma}")
    if mode == "eval" or sigma == 0.0:
        return input
    if rng is None:
        raise ConfigError("rng: train-mode noise needs a seeded generator")
    return _Shift.apply(input, offset=rng.normal(0.0, sigma, input.shape).astype(input.dtype))


def softmax(logits: Operand) -> Tensor:
    return Softmax.apply(logits)
