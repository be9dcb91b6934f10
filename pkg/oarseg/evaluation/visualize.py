"""
PNG overlays of reference and predicted labels.
"""

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

# Fixed class colours: label 1 green, 2 red, 3 cyan, 4 yellow
CLASS_COLORS: List[Tuple[int, int, int]] = [
    (0, 0, 0),
    (0, 255, 0),
    (255, 0, 0),
    (0, 255, 255),
    (255, 255, 0),
]
OVERLAY_ALPHA = 0.45
TITLE_HEIGHT = 14


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """[H,W] float slice to uint8 using its 1st-99th percentile window."""
    lo, hi = np.percentile(image, [1.0, 99.0])
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint8)
    return (np.clip((image - lo) / (hi - lo), 0.0, 1.0) * 255.0).astype(np.uint8)


def colorize(labels: np.ndarray) -> np.ndarray:
    """[H,W] labels to an RGB array; labels beyond the palette cycle through it."""
    palette = np.array(CLASS_COLORS, dtype=np.uint8)
    index = np.where(labels > 0, (labels - 1) % (len(palette) - 1) + 1, 0)
    return palette[index]


def overlay(image: np.ndarray, labels: np.ndarray, alpha: float = OVERLAY_ALPHA) -> Image.Image:
    """Grayscale slice with coloured labels blended on top."""
    gray = Image.fromarray(to_grayscale(image)).convert("RGB")
    color = Image.fromarray(colorize(labels), "RGB")
    blended = Image.blend(gray, color, alpha)
    where = Image.fromarray(((labels > 0) * 255).astype(np.uint8), "L")
    return Image.composite(blended, gray, where)


def select_slice(ref: np.ndarray) -> int:
    """Axial slice with the most labelled voxels (lowest index on ties)."""
    counts = (ref > 0).reshape(ref.shape[0], -1).sum(axis=1)
    return int(np.argmax(counts))


def render_panel(
    image: np.ndarray,
    ref: np.ndarray,
    preds: Dict[str, np.ndarray],
    title: Optional[str] = None,
) -> Image.Image:
    """Image | reference | one tile per model, side by side with captions."""
    tiles = [("image", Image.fromarray(to_grayscale(image)).convert("RGB")), ("reference", overlay(image, ref))]
    tiles += [(name, overlay(image, labels)) for name, labels in preds.items()]
    h, w = image.shape
    panel = Image.new("RGB", (w * len(tiles), h + TITLE_HEIGHT), (0, 0, 0))
    draw = ImageDraw.Draw(panel)
    for i, (caption, tile) in enumerate(tiles):
        panel.paste(tile, (i * w, TITLE_HEIGHT))
        draw.text((i * w + 2, 1), caption if i or not title else title, fill=(255, 255, 255))
    return panel


def save_case_overlay(
    out_dir: Path,
    case_id: str,
    image: np.ndarray,
    ref: np.ndarray,
    preds: Dict[str, np.ndarray],
    z: Optional[int] = None,
) -> Path:
    """Write the panel of one case's most informative slice (or slice ``z``)."""
    z = select_slice(ref) if z is None else z
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{case_id}_z{z:03d}.png"
    panel = render_panel(image[z], ref[z], {name: labels[z] for name, labels in preds.items()}, title=case_id)
    panel.save(path)
    return path
