import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from amcloss._utils import seeded_stream
from amcloss.constants import RandomStreams
from amcloss.datasets import Dataset, write_cifar_bin, write_mnist_idx
from amcloss.models import ArchitectureSpec, LayerSpec, Model, init_bn_states, init_parameters
from amcloss.tensor import Parameter, Tape, Tensor, backward

LossBuilder = Callable[[Tape, List[Tensor]], Tensor]


def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    loss_fn: LossBuilder,
    inputs: Sequence[np.ndarray],
    samples: int = 20,
    eps: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-5,
) -> float:
    """
    Compare tape gradients of a scalar loss with central differences.

    ``loss_fn`` receives a tape and one watched tensor per input array and
    returns a scalar tensor. At most ``samples`` random coordinates of every
    input are probed.

    Returns:
        The largest relative error seen.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tape = Tape()
    tensors = [tape.watch(a) for a in arrays]
    loss = loss_fn(tape, tensors)
    backward(tape, loss)
    grads = [tape.grad(t) for t in tensors]

    def evaluate(values: List[np.ndarray]) -> float:
        quiet = Tape(enabled=False)
        return loss_fn(quiet, [quiet.watch(v) for v in values]).item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, array in enumerate(arrays):
        coords = rng.choice(array.size, size=min(samples, array.size), replace=False)
        for flat in coords:
            index = np.unravel_index(flat, array.shape)
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][index] += eps
            minus[k][index] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * eps)
            worst = max(worst, _relative_error(float(grads[k][index]), numeric, floor))
    return worst


def parameter_gradient_check(
    loss_fn: Callable[[Tape], Tensor],
    params: Sequence[Parameter],
    samples: int = 20,
    eps: float = 1e-6,
    seed: int = 0,
    floor: float = 1e-5,
) -> Tuple[float, Optional[str]]:
    """
    Compare accumulated ``Parameter.grad`` with central differences.

    ``loss_fn`` must be deterministic (fresh seeded generators per call).

    Returns:
        The largest relative error and the name of the parameter it occurred in.
    """
    for param in params:
        param.zero_grad()
    tape = Tape()
    backward(tape, loss_fn(tape))
    rng = np.random.default_rng(seed)
    worst, where = 0.0, None
    for param in params:
        analytic = param.grad.copy()
        coords = rng.choice(param.value.size, size=min(samples, param.value.size), replace=False)
        for flat in coords:
            index = np.unravel_index(flat, param.shape)
            original = param.value[index]
            param.value[index] = original + eps
            up = loss_fn(Tape(enabled=False)).item()
            param.value[index] = original - eps
            down = loss_fn(Tape(enabled=False)).item()
            param.value[index] = original
            error = _relative_error(float(analytic[index]), (up - down) / (2 * eps), floor)
            if error > worst:
                worst, where = error, param.name
    return worst, where


def naive_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, padding: str) -> np.ndarray:
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    pad = (kh - 1) // 2 if padding == "same" else 0
    padded = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    padded[:, :, pad:pad + h, pad:pad + w] = x
    h_out, w_out = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    out = np.zeros((n, o, h_out, w_out))
    for b in range(n):
        for f in range(o):
            for i in range(h_out):
                for j in range(w_out):
                    acc = bias[f]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += padded[b, ch, i + u, j + v] * kernel[f, ch, u, v]
                    out[b, f, i, j] = acc
    return out


def naive_maxpool(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for b in range(n):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[b, ch, i, j] = max(
                        x[b, ch, 2 * i, 2 * j],
                        x[b, ch, 2 * i, 2 * j + 1],
                        x[b, ch, 2 * i + 1, 2 * j],
                        x[b, ch, 2 * i + 1, 2 * j + 1],
                    )
    return out


def naive_matmul(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    out = np.zeros((x.shape[0], weight.shape[1]))
    for i in range(x.shape[0]):
        for k in range(weight.shape[1]):
            out[i, k] = bias[k] + math.fsum(x[i, d] * weight[d, k] for d in range(x.shape[1]))
    return out


def naive_amc(z_i: np.ndarray, z_j: np.ndarray, similar: Sequence[int], margin: float) -> List[float]:
    out = []
    for a, b, s in zip(z_i, z_j, similar):
        inner = min(max(sum(float(u) * float(v) for u, v in zip(a, b)), -1 + 1e-7), 1 - 1e-7)
        theta = math.acos(inner)
        out.append(theta * theta if s == 1 else max(0.0, margin - theta) ** 2)
    return out


def naive_eucd(x_i: np.ndarray, x_j: np.ndarray, similar: Sequence[int], margin: float) -> List[float]:
    out = []
    for a, b, s in zip(x_i, x_j, similar):
        squared = sum((float(u) - float(v)) ** 2 for u, v in zip(a, b))
        out.append(squared if s == 1 else max(0.0, margin - math.sqrt(squared)) ** 2)
    return out


def random_unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    x = rng.normal(size=(count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def synthetic_digits(count: int, seed: int, size: int = 28, channels: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Learnable uint8 images: class ``c`` lights one cell of a 2x5 grid on a
    noisy background.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=count)
    images = rng.integers(0, 60, size=(count, channels, size, size))
    cell_h, cell_w = size // 2, size // 5
    for k, label in enumerate(labels):
        row, col = divmod(int(label), 5)
        images[k, :, row * cell_h:(row + 1) * cell_h, col * cell_w:(col + 1) * cell_w] = 230
    return images.astype(np.uint8), labels


def tiny_architecture(embed_dim: int = 4, num_classes: int = 10) -> ArchitectureSpec:
    """A 1x12x12 network with the layer kinds of mnist_net, small enough to train in tests."""
    layers = (
        LayerSpec("noise", sigma=0.15),
        LayerSpec("conv", channels=8, kernel=3, alpha=0.1),
        LayerSpec("pool"),
        LayerSpec("dropout", rate=0.5),
        LayerSpec("conv", channels=8, kernel=3, padding="valid", alpha=0.1),
        LayerSpec("conv", channels=embed_dim, kernel=1, alpha=0.1),
        LayerSpec("gap"),
        LayerSpec("dense", channels=num_classes),
    )
    spec = ArchitectureSpec("mnist_net", (1, 12, 12), layers, embed_dim, num_classes, gap_size=4)
    spec.validate()
    return spec


def tiny_model(seed: int = 1, embed_dim: int = 4, dtype: str = "float64") -> Model:
    spec = tiny_architecture(embed_dim)
    resolved = np.dtype(dtype)
    params = init_parameters(spec, seeded_stream(seed, RandomStreams.INIT), resolved)
    return Model(spec, params, init_bn_states(spec, resolved), resolved)


def tiny_dataset(count: int, seed: int, split: str = "train") -> Dataset:
    """Synthetic 12x12 digits scaled to [0, 1]."""
    images, labels = synthetic_digits(count, seed, size=12)
    return Dataset(images / 255.0, labels.astype(np.int64), split, "mnist", 10, scheme="unit_range")  # type: ignore[arg-type]


def write_mnist_fixture(directory: Path, train: int, test: int, seed: int = 0, compress: bool = False) -> Path:
    """Write train and t10k IDX files of synthetic digits into ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    suffix = ".gz" if compress else ""
    for split, count, prefix in (("train", train, "train"), ("test", test, "t10k")):
        images, labels = synthetic_digits(count, seed + (split == "test"))
        write_mnist_idx(
            images,
            labels,
            directory / f"{prefix}-images-idx3-ubyte{suffix}",
            directory / f"{prefix}-labels-idx1-ubyte{suffix}",
            compress=compress,
        )
    return directory


def write_cifar10_fixture(directory: Path, per_batch: int, seed: int = 0) -> Path:
    """Five tiny data batches and a test batch in ``cifar-10-batches-bin``."""
    root = directory / "cifar-10-batches-bin"
    root.mkdir(parents=True, exist_ok=True)
    for k, name in enumerate([*(f"data_batch_{i}.bin" for i in range(1, 6)), "test_batch.bin"]):
        images, labels = synthetic_digits(per_batch, seed + k, size=32, channels=3)
        write_cifar_bin(images, labels, root / name)
    return directory
