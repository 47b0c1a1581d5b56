"""
The two convolutional networks and their declarative description.

``cifar_net`` takes 3x32x32 images, ``mnist_net`` 1x28x28 images. Both start
with additive Gaussian input noise, stack 3x3 and 1x1 convolution blocks
(convolution, batch normalization, leaky ReLU) with 2x2 max-pooling and
dropout in between, and end with global average pooling followed by a dense
classifier. The output of the global average pool is the deep feature.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._utils import dtype_from_name, seeded_stream
from .constants import Numerics, RandomStreams
from .errors import ConfigError, ShapeError
from .tensor import (
    BatchNormState,
    Parameter,
    Tape,
    Tensor,
    batch_norm,
    conv2d,
    dense,
    dropout,
    gaussian_noise,
    global_avg_pool,
    leaky_relu,
    maxpool2x2,
    softmax_array,
)
from .types import ModeType, PresetType

logger = logging.getLogger(__name__)

PRESETS = ("cifar_net", "mnist_net")

LAYER_KINDS = ("noise", "conv", "pool", "dropout", "gap", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int = 0
    kernel: int = 0
    padding: str = "same"
    alpha: float = 0.0
    rate: float = 0.0
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"layers: unknown layer kind {self.kind!r}")


def _conv(channels: int, kernel: int, padding: str = "same") -> LayerSpec:
    return LayerSpec("conv", channels=channels, kernel=kernel, padding=padding, alpha=Numerics.LEAKY_RELU_ALPHA)


def _pool_and_drop() -> List[LayerSpec]:
    return [LayerSpec("pool"), LayerSpec("dropout", rate=Numerics.DROPOUT_RATE)]


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Ordered layer descriptors of one network.

    Args:
        preset: name of the network family.
        input_shape: (C, H, W) of the images.
        layers: layer descriptors in execution order.
        embed_dim: width of the deep feature (the last convolution).
        num_classes: width of the classifier.
        gap_size: spatial size the global average pool must see.
        batch_norm: normalize every convolution before its activation.
    """

    preset: str
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    embed_dim: int
    num_classes: int
    gap_size: int
    batch_norm: bool = True

    def shapes(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """
        Per-sample activation shape after every layer.

        Raises:
            ShapeError: if a layer cannot be applied to its input.
        """
        c, h, w = self.input_shape
        out: List[Tuple[str, Tuple[int, ...]]] = []
        flat: Optional[int] = None
        for layer in self.layers:
            if flat is not None and layer.kind != "dense":
                raise ShapeError(f"{self.preset}: {layer.kind} after global average pooling")
            if layer.kind == "conv":
                if layer.padding == "valid":
                    h, w = h - layer.kernel + 1, w - layer.kernel + 1
                c = layer.channels
                if h < 1 or w < 1:
                    raise ShapeError(f"{self.preset}: convolution shrinks the maps below 1x1")
            elif layer.kind == "pool":
                if h % 2 or w % 2:
                    raise ShapeError(f"{self.preset}: cannot max-pool {h}x{w} maps")
                h, w = h // 2, w // 2
            elif layer.kind == "gap":
                if (h, w) != (self.gap_size, self.gap_size):
                    raise ShapeError(
                        f"{self.preset}: global average pool expects {self.gap_size}x{self.gap_size}, got {h}x{w}"
                    )
                flat = c
            elif layer.kind == "dense":
                if flat is None:
                    raise ShapeError(f"{self.preset}: dense layer before global average pooling")
                flat = layer.channels
            out.append((layer.kind, (flat,) if flat is not None else (c, h, w)))
        return out

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes: need at least 2, got {self.num_classes}")
        if self.embed_dim < 2:
            raise ConfigError(f"embed_dim: need at least 2, got {self.embed_dim}")
        convs = [layer for layer in self.layers if layer.kind == "conv"]
        if not convs or convs[-1].channels != self.embed_dim:
            raise ConfigError(f"embed_dim: {self.embed_dim} does not match the final convolution width")
        if self.layers[-1].kind != "dense" or self.layers[-1].channels != self.num_classes:
            raise ConfigError(f"num_classes: {self.num_classes} does not match the classifier width")
        self.shapes()

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["input_shape"] = list(self.input_shape)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArchitectureSpec":
        try:
            spec = cls(
                preset=data["preset"],
                input_shape=tuple(data["input_shape"]),  # type: ignore[arg-type]
                layers=tuple(LayerSpec(**layer) for layer in data["layers"]),
                embed_dim=int(data["embed_dim"]),
                num_classes=int(data["num_classes"]),
                gap_size=int(data["gap_size"]),
                batch_norm=bool(data.get("batch_norm", True)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"architecture: malformed description ({exc})") from exc
        spec.validate()
        return spec


def architecture(preset: PresetType, embed_dim: Optional[int] = None, num_classes: int = 10) -> ArchitectureSpec:
    """
    Describe one of the preset networks.

    Args:
        preset: ``cifar_net`` or ``mnist_net``.
        embed_dim: width of the final convolution and hence of the deep
            feature. Defaults to 128 for cifar_net and 64 for mnist_net.
        num_classes: classifier width, e.g. 20 for the CIFAR-100 super-classes.

    Raises:
        ConfigError: for an unknown preset or an invalid width.
    """
    noise = LayerSpec("noise", sigma=Numerics.NOISE_SIGMA)
    head = [LayerSpec("gap"), LayerSpec("dense", channels=num_classes)]
    if preset == "cifar_net":
        width = 128 if embed_dim is None else embed_dim
        layers = [
            noise,
            *[_conv(128, 3) for _ in range(3)],
            *_pool_and_drop(),
            *[_conv(256, 3) for _ in range(3)],
            *_pool_and_drop(),
            _conv(512, 3, "valid"),
            _conv(256, 1),
            _conv(width, 1),
            *head,
        ]
        spec = ArchitectureSpec(preset, (3, 32, 32), tuple(layers), width, num_classes, gap_size=6)
    elif preset == "mnist_net":
        width = 64 if embed_dim is None else embed_dim
        layers = [
            noise,
            _conv(64, 3),
            *_pool_and_drop(),
            _conv(64, 3),
            *_pool_and_drop(),
            _conv(128, 3, "valid"),
            _conv(width, 1),
            *head,
        ]
        spec = ArchitectureSpec(preset, (1, 28, 28), tuple(layers), width, num_classes, gap_size=5)
    else:
        raise ConfigError(f"preset: expected one of {PRESETS}, got {preset!r}")
    spec.validate()
    return spec


@dataclass
class Trace:
    """Named activations of one forward pass, in execution order."""

    names: List[str] = field(default_factory=list)
    activations: List[Tensor] = field(default_factory=list)

    def add(self, name: str, activation: Tensor) -> Tensor:
        self.names.append(name)
        self.activations.append(activation)
        return activation

    def __getitem__(self, name: str) -> Tensor:
        return self.activations[self.names.index(name)]

    def __len__(self) -> int:
        return len(self.names)


class Model:
    """
    A network built from an :class:`ArchitectureSpec`.

    Parameters are named ``conv{i}.kernel``, ``conv{i}.bias``, ``bn{i}.gamma``,
    ``bn{i}.beta``, ``dense.weight`` and ``dense.bias`` with 1-based ``i``.
    Batch-norm running statistics are kept per ``bn{i}``.

    A model is not thread-safe in train mode since the running statistics
    change with every batch.
    """

    def __init__(
        self,
        spec: ArchitectureSpec,
        parameters: Dict[str, Parameter],
        bn_states: Dict[str, BatchNormState],
        dtype: Union[str, np.dtype] = "float64",
    ) -> None:
        self.spec = spec
        self.parameters = parameters
        self.bn_states = bn_states
        self.dtype = np.dtype(dtype)

    @property
    def params(self) -> List[Parameter]:
        return list(self.parameters.values())

    @property
    def final_conv_name(self) -> str:
        """Name of the activation that feeds the global average pool."""
        count = sum(1 for layer in self.spec.layers if layer.kind == "conv")
        return f"conv{count}"

    def zero_grad(self) -> None:
        for param in self.parameters.values():
            param.zero_grad()

    def trace(
        self,
        images: Union[np.ndarray, Tensor],
        mode: ModeType = "eval",
        tape: Optional[Tape] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Trace:
        """
        Run the network and keep every layer output.

        Convolution blocks are recorded under ``conv{i}`` (after the
        activation), the rest under their kind and index, e.g. ``pool1``,
        plus ``gap`` (the deep features) and ``logits``.

        Args:
            images: an (N, C, H, W) batch. Arrays are bound to ``tape`` as
                constants.
            mode: ``train`` uses batch statistics, dropout and input noise.
            tape: where operations are recorded; a disabled tape by default.
            rng: generator for dropout and noise, required in train mode.

        Raises:
            ShapeError: if the images do not match the input shape.
        """
        if isinstance(images, Tensor):
            x = images
        else:
            if tape is None:
                tape = Tape(enabled=False, dtype=self.dtype)
            x = tape.constant(images)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(f"{self.spec.preset}: expected (N, {self.spec.input_shape}) images, got {x.shape}")
        trace = Trace()
        counts: Dict[str, int] = {}
        for layer in self.spec.layers:
            counts[layer.kind] = counts.get(layer.kind, 0) + 1
            index = counts[layer.kind]
            if layer.kind == "noise":
                x = trace.add("noise", gaussian_noise(x, layer.sigma, mode, rng))
            elif layer.kind == "conv":
                p = self.parameters
                x = conv2d(x, p[f"conv{index}.kernel"], p[f"conv{index}.bias"], layer.padding)  # type: ignore[arg-type]
                if self.spec.batch_norm:
                    x = batch_norm(x, p[f"bn{index}.gamma"], p[f"bn{index}.beta"], self.bn_states[f"bn{index}"], mode)
                x = trace.add(f"conv{index}", leaky_relu(x, layer.alpha))
            elif layer.kind == "pool":
                x = trace.add(f"pool{index}", maxpool2x2(x))
            elif layer.kind == "dropout":
                x = trace.add(f"dropout{index}", dropout(x, layer.rate, mode, rng))
            elif layer.kind == "gap":
                x = trace.add("gap", global_avg_pool(x))
            else:
                x = trace.add("logits", dense(x, self.parameters["dense.weight"], self.parameters["dense.bias"]))
        return trace

    def forward(
        self,
        images: Union[np.ndarray, Tensor],
        mode: ModeType = "eval",
        tape: Optional[Tape] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, Tensor]:
        """
        Returns:
            The deep features ``x_i`` (before normalization) and the logits.
        """
        trace = self.trace(images, mode, tape, rng)
        return trace["gap"], trace["logits"]

    def predict(self, images: np.ndarray, batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
        """
        Eval-mode features and class probabilities of a whole array of images.

        Returns:
            (features, probabilities) as arrays of shape (N, embed_dim) and
            (N, num_classes).
        """
        features, probs = [], []
        for start in range(0, len(images), batch_size):
            feats, logits = self.forward(images[start:start + batch_size], mode="eval")
            features.append(feats.numpy())
            probs.append(softmax_array(logits.numpy()))
        if not features:
            return (np.zeros((0, self.spec.embed_dim), self.dtype), np.zeros((0, self.spec.num_classes), self.dtype))
        return np.concatenate(features), np.concatenate(probs)

    def __repr__(self) -> str:
        size = sum(p.value.size for p in self.parameters.values())
        return f"Model({self.spec.preset!r}, embed_dim={self.spec.embed_dim}, parameters={size})"


def init_parameters(spec: ArchitectureSpec, rng: np.random.Generator, dtype: np.dtype) -> Dict[str, Parameter]:
    """He-normal kernels and zero biases; batch-norm scales start at one."""
    params: Dict[str, Parameter] = {}
    channels = spec.input_shape[0]
    conv_index = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            conv_index += 1
            fan_in = channels * layer.kernel * layer.kernel
            shape = (layer.channels, channels, layer.kernel, layer.kernel)
            kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
            params[f"conv{conv_index}.kernel"] = Parameter(kernel, f"conv{conv_index}.kernel", dtype=dtype)
            params[f"conv{conv_index}.bias"] = Parameter(np.zeros(layer.channels), f"conv{conv_index}.bias", dtype=dtype)
            if spec.batch_norm:
                params[f"bn{conv_index}.gamma"] = Parameter(np.ones(layer.channels), f"bn{conv_index}.gamma", dtype=dtype)
                params[f"bn{conv_index}.beta"] = Parameter(np.zeros(layer.channels), f"bn{conv_index}.beta", dtype=dtype)
            channels = layer.channels
        elif layer.kind == "dense":
            weight = rng.normal(0.0, np.sqrt(1.0 / channels), (channels, layer.channels))
            params["dense.weight"] = Parameter(weight, "dense.weight", dtype=dtype)
            params["dense.bias"] = Parameter(np.zeros(layer.channels), "dense.bias", dtype=dtype)
    return params


def init_bn_states(spec: ArchitectureSpec, dtype: np.dtype) -> Dict[str, BatchNormState]:
    if not spec.batch_norm:
        return {}
    convs: Sequence[LayerSpec] = [layer for layer in spec.layers if layer.kind == "conv"]
    return {f"bn{i}": BatchNormState.create(layer.channels, dtype) for i, layer in enumerate(convs, start=1)}


def build(
    preset: PresetType,
    embed_dim: Optional[int] = None,
    num_classes: int = 10,
    seed: int = 1,
    dtype: str = "float64",
) -> Model:
    """
    Build a freshly initialized preset network.

    The same arguments always produce the same parameters.

    Raises:
        ConfigError: for an unknown preset, dtype or an invalid width.
    """
    resolved = dtype_from_name(dtype)
    spec = architecture(preset, embed_dim, num_classes)
    params = init_parameters(spec, seeded_stream(seed, RandomStreams.INIT), resolved)
    logger.debug("Built %s with embed_dim=%d and %d classes", preset, spec.embed_dim, num_classes)
    return Model(spec, params, init_bn_states(spec, resolved), resolved)
