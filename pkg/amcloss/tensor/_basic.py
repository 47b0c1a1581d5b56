"""Small differentiable helpers used to assemble losses."""
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from ._base import Function, Operand, Tensor


class Add(Function):
    name = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
        return a + b

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return grad, grad


class Scale(Function):
    name = "scale"

    def __init__(self, factor: float) -> None:
        self.factor = factor

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x * self.factor

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * self.factor,)


class Total(Function):
    name = "total"

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class TakeRows(Function):
    name = "take_rows"

    def __init__(self, indices: Sequence[int]) -> None:
        self.indices = np.asarray(indices, dtype=np.intp)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return x[self.indices]

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.indices, grad)
        return (out,)


class Pick(Function):
    name = "pick"

    def __init__(self, index: Tuple[int, ...]) -> None:
        self.index = index

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.shape = x.shape
        return np.array(x[self.index])

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        out = np.zeros(self.shape, dtype=grad.dtype)
        out[self.index] = grad
        return (out,)


def add(a: Operand, b: Operand) -> Tensor:
    """Element-wise sum of two tensors of identical shape."""
    return Add.apply(a, b)


def scale(x: Operand, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def total(x: Operand) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    return Total.apply(x)


def take_rows(x: Operand, indices: Sequence[int]) -> Tensor:
    return TakeRows.apply(x, indices=indices)


def pick(x: Operand, index: Tuple[int, ...]) -> Tensor:
    """Select a single entry, e.g. one class logit of one sample."""
    return Pick.apply(x, index=index)
