"""Adam with a learning rate and β1 supplied per step by the schedule."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .constants import AdamDefaults
from .errors import ContractViolationError, NonFiniteError, ShapeError
from .tensor import Parameter

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First and second moment estimates of every parameter and the step count."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta2: float = AdamDefaults.BETA2
    epsilon: float = AdamDefaults.EPSILON

    @classmethod
    def create(cls, params: Sequence[Parameter], **kwargs: float) -> "AdamState":
        state = cls(**kwargs)  # type: ignore[arg-type]
        for param in params:
            if param.name in state.m:
                raise ContractViolationError(f"Duplicate parameter name {param.name!r}")
            state.m[param.name] = np.zeros_like(param.value)
            state.v[param.name] = np.zeros_like(param.value)
        return state


def adam_step(
    params: Sequence[Parameter],
    state: AdamState,
    lr: float,
    beta1: float,
    grads: Optional[Sequence[np.ndarray]] = None,
) -> None:
    """
    One bias-corrected Adam update, in place.

    The bias correction of the first moment uses the β1 of the current step.

    Args:
        params: parameters to update; frozen ones are skipped.
        state: moments created for exactly these parameters.
        lr: learning rate of this step.
        beta1: first moment decay of this step.
        grads: gradients in parameter order, ``Parameter.grad`` by default.

    Raises:
        NonFiniteError: naming the first parameter with a NaN/Inf gradient.
            Nothing is updated in that case.
    """
    gradients: List[np.ndarray] = [p.grad for p in params] if grads is None else list(grads)
    if len(gradients) != len(params):
        raise ShapeError(f"adam_step: {len(params)} parameters but {len(gradients)} gradients")
    for param, grad in zip(params, gradients):
        if grad.shape != param.shape:
            raise ShapeError(f"adam_step: gradient of {param.name} has shape {grad.shape}, expected {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient for parameter {param.name} at Adam step {state.step + 1}")
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param, grad in zip(params, gradients):
        if not param.trainable:
            continue
        try:
            m, v = state.m[param.name], state.v[param.name]
        except KeyError:
            raise ContractViolationError(f"Adam state has no moments for {param.name!r}") from None
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param.value -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
