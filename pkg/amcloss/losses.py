"""
Hypersphere geometry and the three training objectives.

* ``ce``: cross-entropy on the class logits only.
* ``eucd``: cross-entropy plus a Euclidean contrastive term on the raw deep
  features, ``||x_i - x_j||^2`` for neighbours and
  ``max(0, m_e - ||x_i - x_j||)^2`` otherwise.
* ``amc``: cross-entropy plus the angular margin contrastive term on unit
  features, ``theta^2`` for neighbours and ``max(0, m_g - theta)^2``
  otherwise, with ``theta = arccos <z_i, z_j>`` the geodesic distance.

Neighbours are decided from the predicted labels of the current mini-batch,
and each mini-batch is split in two halves that are paired element-wise, so a
step costs O(n p / 2) instead of O(n^2 p).
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import LossDefaults, Numerics
from .errors import ConfigError, ContractViolationError, DegenerateFeatureError, LabelRangeError, ShapeError
from .tensor import Function, Operand, Parameter, Tensor, add, scale, take_rows, total
from .types import ArrayLike, LossModeType

LOSS_MODES = ("ce", "eucd", "amc")

FeatureInput = Union[Operand, ArrayLike]


@dataclass(frozen=True)
class LossConfig:
    """
    Args:
        lam: weight of the pair term, λ >= 0.
        margin_g: angular margin m_g in radians, (0, π].
        margin_e: Euclidean margin m_e >= 0.
        mode: one of ``ce``, ``eucd`` or ``amc``.
    """

    lam: float = LossDefaults.LAMBDA
    margin_g: float = LossDefaults.MARGIN_GEODESIC
    margin_e: float = LossDefaults.MARGIN_EUCLIDEAN
    mode: LossModeType = "amc"

    def __post_init__(self) -> None:
        if self.mode not in LOSS_MODES:
            raise ConfigError(f"loss: expected one of {LOSS_MODES}, got {self.mode!r}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda: must be >= 0, got {self.lam}")
        if not 0 < self.margin_g <= math.pi:
            raise ConfigError(f"margin_g: must lie in (0, pi], got {self.margin_g}")
        if not self.margin_e >= 0:
            raise ConfigError(f"margin_e: must be >= 0, got {self.margin_e}")

    @property
    def uses_pairs(self) -> bool:
        """True if the pair term can change the loss."""
        return self.mode != "ce" and self.lam > 0


@dataclass(frozen=True)
class PairBatch:
    """
    Element-wise pairs ``(first[k], second[k])`` of one mini-batch and their
    neighbour indicator ``similar[k]``.
    """

    first: np.ndarray
    second: np.ndarray
    similar: np.ndarray

    def __post_init__(self) -> None:
        if not len(self.first) == len(self.second) == len(self.similar):
            raise ShapeError("PairBatch: first, second and similar must have equal length")

    @classmethod
    def empty(cls) -> "PairBatch":
        nothing = np.zeros(0, dtype=np.intp)
        return cls(nothing, nothing, nothing.astype(np.int8))

    @property
    def pairs(self) -> List[Tuple[int, int, int]]:
        return [(int(i), int(j), int(s)) for i, j, s in zip(self.first, self.second, self.similar)]

    def __len__(self) -> int:
        return len(self.first)


def _as_operand(x: FeatureInput) -> Operand:
    if isinstance(x, (Tensor, Parameter)):
        return x
    return Tensor(x)


def _similarity_array(similar: Union[int, Sequence[int], np.ndarray], size: Tuple[int, ...]) -> np.ndarray:
    s = np.broadcast_to(np.asarray(similar), size)
    if not np.isin(s, (0, 1)).all():
        raise ContractViolationError("S_ij must be 0 or 1")
    return s


class Normalize(Function):
    name = "normalize"

    def forward(self, x: np.ndarray) -> np.ndarray:
        norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        if (norms <= Numerics.MIN_FEATURE_NORM).any():
            raise DegenerateFeatureError("Cannot project a (near) zero feature onto the unit sphere")
        self.norms = norms
        self.z = x / norms
        return self.z

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        z = self.z
        # (I - z z^T) / ||x||
        return ((grad - z * (grad * z).sum(axis=-1, keepdims=True)) / self.norms,)


class Geodesic(Function):
    name = "geodesic"

    def forward(self, z_i: np.ndarray, z_j: np.ndarray) -> np.ndarray:
        if z_i.shape != z_j.shape:
            raise ShapeError(f"geodesic: shapes {z_i.shape} and {z_j.shape} differ")
        for z in (z_i, z_j):
            if (np.abs(np.sqrt((z * z).sum(axis=-1)) - 1.0) > Numerics.UNIT_NORM_TOLERANCE).any():
                raise ContractViolationError("geodesic: inputs must be unit vectors")
        eps = Numerics.ARCCOS_CLAMP
        inner = (z_i * z_j).sum(axis=-1)
        clamped = np.clip(inner, -1.0 + eps, 1.0 - eps)
        # d/du arccos(u) at the clamped inner product, bounded by 1/sqrt(2 eps)
        self.slope = -1.0 / np.sqrt(1.0 - clamped * clamped)
        self.z_i, self.z_j = z_i, z_j
        return np.arccos(clamped)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        g = (grad * self.slope)[..., None]
        return g * self.z_j, g * self.z_i


class MarginHinge(Function):
    """``S d^2 + (1 - S) max(0, m - d)^2`` applied to a distance."""

    name = "margin_hinge"

    def __init__(self, similar: np.ndarray, margin: float) -> None:
        self.similar = similar
        self.margin = margin

    def forward(self, distance: np.ndarray) -> np.ndarray:
        self.distance = distance
        self.gap = np.maximum(0.0, self.margin - distance)
        return np.where(self.similar == 1, distance * distance, self.gap * self.gap)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        return (grad * np.where(self.similar == 1, 2.0 * self.distance, -2.0 * self.gap),)


class EuclideanContrastive(Function):
    name = "eucd_contrastive"

    def __init__(self, similar: np.ndarray, margin: float) -> None:
        self.similar = similar
        self.margin = margin

    def forward(self, x_i: np.ndarray, x_j: np.ndarray) -> np.ndarray:
        if x_i.shape != x_j.shape:
            raise ShapeError(f"eucd_contrastive: shapes {x_i.shape} and {x_j.shape} differ")
        self.diff = x_i - x_j
        squared = (self.diff * self.diff).sum(axis=-1)
        self.distance = np.sqrt(squared)
        self.gap = np.maximum(0.0, self.margin - self.distance)
        return np.where(self.similar == 1, squared, self.gap * self.gap)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        safe = np.where(self.distance > 0, self.distance, 1.0)
        # the hinge is flat at zero distance, so its slope there is taken as 0
        pull = np.where(self.distance > 0, -2.0 * self.gap / safe, 0.0)
        coefficient = np.where(self.similar == 1, 2.0, pull)
        g = (grad * coefficient)[..., None] * self.diff
        return g, -g


class CrossEntropy(Function):
    name = "cross_entropy"

    def __init__(self, labels: np.ndarray) -> None:
        self.labels = labels

    def forward(self, logits: np.ndarray) -> np.ndarray:
        if logits.ndim != 2 or logits.shape[0] != len(self.labels):
            raise ShapeError(f"cross_entropy: logits {logits.shape} do not match {len(self.labels)} labels")
        n, classes = logits.shape
        if n == 0:
            raise ShapeError("cross_entropy: empty batch")
        if ((self.labels < 0) | (self.labels >= classes)).any():
            raise LabelRangeError(f"cross_entropy: labels must lie in [0, {classes})")
        peak = logits.max(axis=1, keepdims=True)
        shifted = logits - peak
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        self.log_probs = shifted - log_norm[:, None]
        return np.asarray(-self.log_probs[np.arange(n), self.labels].mean())

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        n = len(self.labels)
        out = np.exp(self.log_probs)
        out[np.arange(n), self.labels] -= 1.0
        return (out * (grad / n),)


def normalize(x: FeatureInput) -> Tensor:
    """
    Project features onto the unit sphere, ``z = x / ||x||`` (row-wise).

    Gradients flow through the projection.

    Raises:
        DegenerateFeatureError: if a norm is <= 1e-12.
    """
    return Normalize.apply(_as_operand(x))


def geodesic(z_i: FeatureInput, z_j: FeatureInput) -> Tensor:
    """
    Geodesic distance ``arccos <z_i, z_j>`` in [0, π], row-wise.

    The inner product is clamped to [-1 + 1e-7, 1 - 1e-7] before the arccos.

    Raises:
        ContractViolationError: if an input is off unit norm by more than 1e-4.
    """
    return Geodesic.apply(_as_operand(z_i), _as_operand(z_j))


def cross_entropy(logits: Operand, labels: Union[Sequence[int], np.ndarray]) -> Tensor:
    """
    Mean negative log-likelihood of the true classes, via log-sum-exp.

    Raises:
        LabelRangeError: if a label is outside [0, C).
    """
    return CrossEntropy.apply(logits, labels=np.asarray(labels, dtype=np.intp))


def eucd_contrastive(
    x_i: FeatureInput, x_j: FeatureInput, similar: Union[int, Sequence[int], np.ndarray], margin_e: float
) -> Tensor:
    """
    Euclidean contrastive loss of each pair (one value per row).

    Args:
        x_i: features of the first elements.
        x_j: features of the second elements, same shape.
        similar: S_ij, 1 for neighbours and 0 otherwise.
        margin_e: the Euclidean margin.
    """
    x_i, x_j = _as_operand(x_i), _as_operand(x_j)
    s = _similarity_array(similar, x_i.shape[:-1])
    return EuclideanContrastive.apply(x_i, x_j, similar=s, margin=margin_e)


def amc_loss(z_i: FeatureInput, z_j: FeatureInput, similar: Union[int, Sequence[int], np.ndarray], margin_g: float) -> Tensor:
    """
    Angular margin contrastive loss of each pair of unit features.

    ``theta^2`` for neighbours, ``max(0, m_g - theta)^2`` otherwise, where
    theta is the (clamped) geodesic distance.

    Raises:
        ConfigError: if margin_g is outside (0, π].
    """
    if not 0 < margin_g <= math.pi:
        raise ConfigError(f"margin_g: must lie in (0, pi], got {margin_g}")
    theta = geodesic(z_i, z_j)
    return MarginHinge.apply(theta, similar=_similarity_array(similar, theta.shape), margin=margin_g)


def similarity_from_predictions(probs: FeatureInput, pairs: Tuple[Sequence[int], Sequence[int]]) -> PairBatch:
    """
    Neighbour indicator from predicted labels: S_ij = 1 iff both rows have the
    same argmax. Ties resolve to the lowest class index.

    Args:
        probs: the (N, C) network outputs of the mini-batch.
        pairs: the index lists (B1, B2) from :func:`split_pairs`.
    """
    values = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    predicted = values.argmax(axis=1)
    first = np.asarray(pairs[0], dtype=np.intp)
    second = np.asarray(pairs[1], dtype=np.intp)
    return PairBatch(first, second, (predicted[first] == predicted[second]).astype(np.int8))


def split_pairs(batch_indices: Sequence[int], rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Shuffle a mini-batch and split it into halves B1 and B2.

    The k-th element of B1 is paired with the k-th element of B2. An odd
    batch leaves its last shuffled element unpaired; fewer than two samples
    give no pairs.
    """
    indices = np.asarray(batch_indices, dtype=np.intp)
    if len(indices) < 2:
        nothing = np.zeros(0, dtype=np.intp)
        return nothing, nothing
    shuffled = rng.permutation(indices)
    half = len(shuffled) // 2
    return shuffled[:half], shuffled[half:2 * half]


def pair_losses(features: Tensor, batch: PairBatch, config: LossConfig) -> Optional[Tensor]:
    """
    Per-pair contrastive terms of a mini-batch: the angular loss on unit
    features for ``amc``, the Euclidean loss on raw features for ``eucd``.
    Returns None when there is nothing to add.
    """
    if not config.uses_pairs or len(batch) == 0:
        return None
    if config.mode == "amc":
        z = normalize(features)
        return amc_loss(take_rows(z, batch.first), take_rows(z, batch.second), batch.similar, config.margin_g)
    return eucd_contrastive(
        take_rows(features, batch.first), take_rows(features, batch.second), batch.similar, config.margin_e
    )


def combined_loss(
    ce: Tensor,
    pair_terms: Optional[Tensor],
    w_t: float,
    lam: float,
    batch_size: int,
    mode: LossModeType = "amc",
) -> Tensor:
    """
    ``L_C + w(t) λ (1/|B|) Σ L_pair``.

    |B| is the full mini-batch size, not the number of pairs. Mode ``ce``,
    λ = 0 and an empty pair set return ``ce`` itself.
    """
    if not 0.0 <= w_t <= 1.0:
        raise ConfigError(f"w_t: must lie in [0, 1], got {w_t}")
    if lam < 0:
        raise ConfigError(f"lambda: must be >= 0, got {lam}")
    if mode == "ce" or lam == 0 or pair_terms is None or pair_terms.data.size == 0:
        return ce
    return add(ce, scale(total(pair_terms), w_t * lam / batch_size))


def all_pairs_amc_loss(features: ArrayLike, predicted: Sequence[int], margin_g: float) -> float:
    """
    Sum of the angular loss over every unordered pair of a batch.

    This is the O(n^2 p) quantity the split-half pairing approximates. It is a
    reference for tests and diagnostics, not a training objective.
    """
    x = np.asarray(features, dtype=np.float64)
    z = x / np.linalg.norm(x, axis=1, keepdims=True)
    labels = np.asarray(predicted)
    eps = Numerics.ARCCOS_CLAMP
    total_loss = 0.0
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            theta = math.acos(min(max(float(z[i] @ z[j]), -1.0 + eps), 1.0 - eps))
            if labels[i] == labels[j]:
                total_loss += theta * theta
            else:
                total_loss += max(0.0, margin_g - theta) ** 2
    return total_loss
