"""
Tensors, parameters and the tape that records operations on them.

A :class:`Tape` is a flat list of operation records. Every record only refers
to records created before it, so replaying the list backwards is a valid
reverse-mode sweep. Gradients of intermediate tensors stay available on the
tape after :func:`backward`, which is what the saliency maps rely on.
"""
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ContractViolationError, NonFiniteError, ShapeError


class Tensor:
    """
    A dense, row-major floating point array.

    The data of a tensor is never modified after creation. A tensor may belong
    to a tape; if it also has a node index, gradients flow back to it.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data: Any, tape: Optional["Tape"] = None, dtype: Optional[np.dtype] = None) -> None:
        array = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        array.flags.writeable = False
        self.data: np.ndarray = array
        self.tape = tape
        self.node: Optional[int] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, tape: Optional["Tape"], node: Optional[int]) -> "Tensor":
        tensor = cls.__new__(cls)
        array.flags.writeable = False
        tensor.data = array
        tensor.tape = tape
        tensor.node = node
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def tracked(self) -> bool:
        """True if gradients can flow back to this tensor."""
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"Only single-element tensors convert to a number, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        state = f"node={self.node}" if self.tracked else "constant"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, {state})"


class Parameter:
    """
    A trainable array together with its accumulated gradient.

    Args:
        value: initial value, copied.
        name: identifier used in checkpoints and diagnostics.
        trainable: frozen parameters never receive gradients.
    """

    def __init__(self, value: Any, name: str = "", trainable: bool = True, dtype: Optional[np.dtype] = None) -> None:
        self.value: np.ndarray = np.array(value, dtype=dtype or np.float64, copy=True)
        self.grad: np.ndarray = np.zeros_like(self.value)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


Operand = Union[Tensor, Parameter]


@dataclass
class TapeNode:
    """One recorded operation. Leaf nodes (watched inputs) have no function."""

    function: Optional["Function"]
    inputs: Tuple[Operand, ...]

    @property
    def op(self) -> str:
        return "leaf" if self.function is None else self.function.name

    @property
    def input_ids(self) -> List[Optional[int]]:
        """Node index of every tensor input, None for parameters and constants."""
        return [x.node if isinstance(x, Tensor) else None for x in self.inputs]


class Tape:
    """
    Ordered record of the operations of one forward pass.

    Args:
        enabled: a disabled tape records nothing, which is what evaluation
            passes use.
        dtype: floating point type of the constants created through the tape.
    """

    def __init__(self, enabled: bool = True, dtype: Union[str, np.dtype] = "float64") -> None:
        self.enabled = enabled
        self.dtype = np.dtype(dtype)
        self.nodes: List[TapeNode] = []
        self.grads: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def constant(self, data: Any) -> Tensor:
        """Bind an array to this tape without making it differentiable."""
        return Tensor(data, tape=self, dtype=self.dtype)

    def watch(self, data: Any) -> Tensor:
        """Bind an array to this tape as a differentiable leaf."""
        tensor = Tensor(data, tape=self, dtype=self.dtype)
        if self.enabled:
            tensor.node = self._append(TapeNode(None, ()))
        return tensor

    def record(self, function: "Function", inputs: Tuple[Operand, ...]) -> int:
        return self._append(TapeNode(function, inputs))

    def _append(self, node: TapeNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def grad(self, tensor: Tensor) -> np.ndarray:
        """
        Gradient of the last :func:`backward` call with respect to ``tensor``.

        Tensors that the loss does not depend on get a zero gradient.
        """
        if tensor.tape is not self or tensor.node is None:
            raise ContractViolationError("Tensor is not recorded on this tape")
        grad = self.grads.get(tensor.node)
        return np.zeros_like(tensor.data) if grad is None else grad


def _data_of(operand: Any) -> np.ndarray:
    if isinstance(operand, Tensor):
        return operand.data
    if isinstance(operand, Parameter):
        return operand.value
    raise TypeError(f"Expected Tensor or Parameter, got {type(operand)}")


def _tape_of(operands: Sequence[Operand]) -> Optional[Tape]:
    tape: Optional[Tape] = None
    for operand in operands:
        if isinstance(operand, Tensor) and operand.tape is not None:
            if tape is not None and operand.tape is not tape:
                raise ContractViolationError("Operands belong to different tapes")
            tape = operand.tape
    return tape


def _is_tracked(operand: Operand) -> bool:
    if isinstance(operand, Parameter):
        return operand.trainable
    return operand.node is not None


class Function:
    """
    A differentiable operation.

    Subclasses implement ``forward`` on plain arrays and keep what they need
    for ``backward`` on ``self``. ``backward`` returns one gradient (or None)
    per input, in input order.
    """

    name: ClassVar[str] = "op"

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Operand, **options: Any) -> Tensor:
        function = cls(**options)
        out = np.asarray(function.forward(*[_data_of(x) for x in inputs]))
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{cls.name} produced non-finite values")
        tape = _tape_of(inputs)
        if tape is not None and tape.enabled and any(_is_tracked(x) for x in inputs):
            return Tensor._wrap(out, tape, tape.record(function, inputs))
        return Tensor._wrap(out, tape, None)


def backward(tape: Tape, loss: Tensor, accumulate: bool = True) -> None:
    """
    Propagate gradients from a scalar loss through the tape.

    Nodes are visited in exact reverse recording order. Gradients of every
    recorded tensor are kept in ``tape.grads``.

    Args:
        tape: the tape ``loss`` was recorded on.
        loss: a single-element tensor.
        accumulate: add the gradients of trainable parameters to
            ``Parameter.grad``. With False the parameters are left untouched.

    Raises:
        ShapeError: if the loss is not a scalar.
        ContractViolationError: if the loss was not recorded on ``tape``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape or loss.node is None:
        raise ContractViolationError("The loss is not recorded on this tape")
    tape.grads = {loss.node: np.ones_like(loss.data)}
    for index in range(loss.node, -1, -1):
        grad = tape.grads.get(index)
        node = tape.nodes[index]
        if grad is None or node.function is None:
            continue
        for operand, input_grad in zip(node.inputs, node.function.backward(grad)):
            if input_grad is None:
                continue
            if isinstance(operand, Parameter):
                if operand.trainable and accumulate:
                    operand.grad += input_grad
            elif operand.node is not None:
                previous = tape.grads.get(operand.node)
                tape.grads[operand.node] = input_grad if previous is None else previous + input_grad
