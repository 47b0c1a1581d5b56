"""Code in here is only used by amcloss.gradcam.export_overlay."""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

try:
    from PIL import Image
    from PIL.PngImagePlugin import PngInfo
except ImportError:
    raise ImportError("pillow is required to write overlay images. It can be installed via 'pip install amcloss[image]'")

PROVENANCE_KEY = "amcloss"


def write_png(pixels: np.ndarray, path: Union[str, Path], provenance: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write an (H, W, 3) uint8 array as an RGB PNG.

    The provenance record is stored as JSON in a ``tEXt`` chunk named
    ``amcloss``.
    """
    info = PngInfo()
    if provenance is not None:
        info.add_text(PROVENANCE_KEY, json.dumps(provenance, sort_keys=True))
    target = Path(path)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(target, format="PNG", pnginfo=info)
    return target


def read_provenance(path: Union[str, Path]) -> Optional[Dict[str, Any]]:
    with Image.open(path) as img:
        text = img.text.get(PROVENANCE_KEY)  # type: ignore[attr-defined]
    return None if text is None else json.loads(text)
