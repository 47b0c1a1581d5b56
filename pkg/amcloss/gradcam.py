"""
Grad-CAM activation maps over the convolution that feeds the global average
pool, and their export as overlays.

The weight of channel ``k`` is the spatial mean of the gradient of the class
logit with respect to activation ``A_k``; the map is
``ReLU(sum_k weight_k A_k)``, bilinearly upsampled (half-pixel centers, edge
clamped) to the input size and divided by its maximum.

Overlays blend the input image (min-max scaled to [0, 1], gray images
repeated over RGB) half and half with the colormap ``v -> (v, 0, 1 - v)``,
i.e. blue for 0 and red for 1, and round ``x * 255`` to the nearest byte.
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy import ndimage

from ._utils import provenance, write_sidecar
from .errors import LabelRangeError, ShapeError
from .models import Model
from .tensor import Tape, backward, pick

logger = logging.getLogger(__name__)

StrPath = Union[str, Path]

OVERLAY_ALPHA = 0.5


@dataclass(frozen=True)
class Heatmap:
    """
    Args:
        values: (H, W) map in [0, 1]; its maximum is 1 unless it is all zero.
        source_layer: name of the traced activation the map was computed on.
        class_index: the explained class.
    """

    values: np.ndarray
    source_layer: str
    class_index: int

    @property
    def shape(self) -> tuple:
        return self.values.shape


def upsample_bilinear(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a 2-D map with half-pixel centers."""
    factors = (height / values.shape[0], width / values.shape[1])
    return ndimage.zoom(values, factors, order=1, mode="nearest", grid_mode=True)


def gradcam(model: Model, image: np.ndarray, target_class: Optional[int] = None) -> Heatmap:
    """
    Activation map of one image.

    Args:
        model: the network; it is run in eval mode and not modified.
        image: a (C, H, W) image, normalized like the training data.
        target_class: the class to explain, the predicted class by default.

    Raises:
        LabelRangeError: if ``target_class`` is not a class of the model.
        ShapeError: if the image does not fit the model.
    """
    array = np.asarray(image)
    if array.ndim != 3:
        raise ShapeError(f"gradcam: expected one (C, H, W) image, got {array.shape}")
    tape = Tape(dtype=model.dtype)
    trace = model.trace(tape.constant(array[None]), mode="eval", tape=tape)
    layer = model.final_conv_name
    activation, logits = trace[layer], trace["logits"]
    num_classes = model.spec.num_classes
    if target_class is None:
        target_class = int(logits.numpy()[0].argmax())
    elif not 0 <= target_class < num_classes:
        raise LabelRangeError(f"target_class: must lie in [0, {num_classes}), got {target_class}")
    backward(tape, pick(logits, (0, target_class)), accumulate=False)
    grads = tape.grad(activation)[0]
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activation.numpy()[0], axes=1), 0.0)
    values = np.maximum(upsample_bilinear(cam, array.shape[1], array.shape[2]), 0.0)
    peak = values.max()
    if peak > 0:
        values = np.minimum(values / peak, 1.0)
    return Heatmap(values=values, source_layer=layer, class_index=target_class)


def top_decile_mass(heatmap: Heatmap) -> float:
    """
    Share of the total map mass held by the brightest 10% of the pixels.

    A tightly bounded map scores close to 1, a uniform one 0.1. An all-zero
    map gives 0.
    """
    flat = np.sort(heatmap.values.ravel())[::-1]
    total = math.fsum(flat)
    if total == 0:
        return 0.0
    count = max(1, math.ceil(0.1 * flat.size))
    return math.fsum(flat[:count]) / total


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB: 0 is blue, 1 is red."""
    v = np.clip(values, 0.0, 1.0)
    return np.stack([v, np.zeros_like(v), 1.0 - v], axis=-1)


def display_image(image: np.ndarray) -> np.ndarray:
    """A (C, H, W) image as (H, W, 3) floats in [0, 1]."""
    array = np.asarray(image, dtype=np.float64)
    if array.ndim != 3 or array.shape[0] not in (1, 3):
        raise ShapeError(f"expected a (1|3, H, W) image, got {array.shape}")
    low, high = array.min(), array.max()
    scaled = (array - low) / (high - low) if high > low else np.zeros_like(array)
    rgb = np.repeat(scaled, 3, axis=0) if array.shape[0] == 1 else scaled
    return rgb.transpose(1, 2, 0)


def overlay_pixels(heatmap: Heatmap, image: np.ndarray) -> np.ndarray:
    """The (H, W, 3) uint8 blend of image and colored heatmap."""
    base = display_image(image)
    if base.shape[:2] != heatmap.shape:
        raise ShapeError(f"heatmap {heatmap.shape} and image {base.shape[:2]} are not aligned")
    blend = (1.0 - OVERLAY_ALPHA) * base + OVERLAY_ALPHA * colormap(heatmap.values)
    return np.floor(blend * 255.0 + 0.5).astype(np.uint8)


def export_overlay(
    heatmap: Heatmap, image: np.ndarray, path: StrPath, config: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write the overlay of ``heatmap`` on ``image`` as a PNG.

    The run provenance is embedded as a PNG text chunk. Needs Pillow
    (``pip install amcloss[image]``).
    """
    from ._image_helpers import write_png

    meta = provenance(config or {})
    meta["heatmap"] = {"source_layer": heatmap.source_layer, "class_index": heatmap.class_index}
    target = write_png(overlay_pixels(heatmap, image), path, meta)
    logger.debug("Wrote overlay %s", target)
    return target


def write_heatmap_csv(heatmap: Heatmap, path: StrPath, config: Optional[Dict[str, Any]] = None) -> Path:
    """Dump the raw map, one CSV row per image row."""
    target = Path(path)
    with target.open("w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        for row in heatmap.values:
            writer.writerow([repr(float(v)) for v in row])
    if config is not None:
        write_sidecar(target, config)
    return target


def export_heatmap(heatmap: Heatmap, path: StrPath, config: Optional[Dict[str, Any]] = None) -> Path:
    """Write the colored heatmap alone as a PNG. Needs Pillow."""
    from ._image_helpers import write_png

    meta = provenance(config or {})
    meta["heatmap"] = {"source_layer": heatmap.source_layer, "class_index": heatmap.class_index}
    pixels = np.floor(colormap(heatmap.values) * 255.0 + 0.5).astype(np.uint8)
    return write_png(pixels, path, meta)
