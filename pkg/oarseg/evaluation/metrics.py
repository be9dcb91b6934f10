"""
Per-class overlap and surface-distance metrics.
"""

import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from oarseg.utils.errors import DimensionError

HD_PERCENTILE = 95.0


def _check_aligned(op: str, pred: np.ndarray, ref: np.ndarray) -> None:
    if pred.shape != ref.shape:
        raise DimensionError(op, ref.shape, pred.shape)


def dice(pred: np.ndarray, ref: np.ndarray, c: int) -> Optional[float]:
    """2|P n R| / (|P| + |R|) for the voxels labelled ``c``.

    Returns None when the reference has no voxel of class ``c`` (both empty
    included); an empty prediction against a non-empty reference scores 0.
    """
    _check_aligned("dice", pred, ref)
    p = pred == c
    r = ref == c
    r_count = int(r.sum())
    if r_count == 0:
        return None
    p_count = int(p.sum())
    return 2.0 * int(np.logical_and(p, r).sum()) / (p_count + r_count)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with a face neighbour outside it; the grid border counts as outside."""
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    return mask & ~ndimage.binary_erosion(mask, structure=structure, border_value=0)


def grid_diagonal(shape: Sequence[int], spacing: Sequence[float]) -> float:
    return float(math.sqrt(sum((n * s) ** 2 for n, s in zip(shape, spacing))))


def hd95(pred: np.ndarray, ref: np.ndarray, c: int, spacing: Sequence[float]) -> Optional[float]:
    """95th-percentile symmetric boundary distance in mm.

    Directed distances from each boundary to the other are taken with linear
    percentile interpolation; the result is the larger of the two. Both masks
    empty gives None, exactly one empty gives the grid diagonal.
    """
    _check_aligned("hd95", pred, ref)
    if len(spacing) != pred.ndim:
        raise DimensionError("hd95", f"{pred.ndim} spacing values", len(spacing))
    p = pred == c
    r = ref == c
    p_any, r_any = bool(p.any()), bool(r.any())
    if not p_any and not r_any:
        return None
    if p_any != r_any:
        return grid_diagonal(pred.shape, spacing)

    p_edge, r_edge = boundary(p), boundary(r)
    to_ref = ndimage.distance_transform_edt(~r_edge, sampling=spacing)
    to_pred = ndimage.distance_transform_edt(~p_edge, sampling=spacing)
    forward = np.percentile(to_ref[p_edge], HD_PERCENTILE)
    reverse = np.percentile(to_pred[r_edge], HD_PERCENTILE)
    return float(max(forward, reverse))


def case_metrics(
    pred: np.ndarray,
    ref: np.ndarray,
    class_names: Sequence[str],
    spacing: Sequence[float],
) -> List[Dict]:
    """One row per foreground class: class, dice, hd95_mm (NaN when absent)."""
    rows = []
    for label, name in enumerate(class_names, start=1):
        d = dice(pred, ref, label)
        h = hd95(pred, ref, label, spacing)
        rows.append({
            "class": name,
            "dice": float("nan") if d is None else d,
            "hd95_mm": float("nan") if h is None else h,
        })
    return rows
