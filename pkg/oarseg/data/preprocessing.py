"""
Preprocessing chain applied before training and inference:
crop to the nonzero region, resample to the dataset's median spacing, z-score.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from oarseg.data.case import PatientCase
from oarseg.utils.errors import ValidationError

logger = logging.getLogger(__name__)

ZSCORE_EPS = 1e-8
SPLINE_ORDER = 3


def crop_nonzero(case: PatientCase) -> PatientCase:
    """Tight bounding box of voxels that are nonzero in any channel.

    The box start is accumulated into ``meta["crop_offset"]`` and the
    pre-crop grid recorded in ``meta["original_shape"]``.

    Raises:
        ValidationError: If the image is entirely zero
    """
    nonzero = np.any(case.image != 0, axis=0)
    if not nonzero.any():
        raise ValidationError(f"Case {case.id}: image is entirely zero", "VAL_001")
    coords = np.argwhere(nonzero)
    start = coords.min(axis=0)
    stop = coords.max(axis=0) + 1
    box = tuple(slice(int(a), int(b)) for a, b in zip(start, stop))

    meta = dict(case.meta)
    previous = meta.get("crop_offset", [0, 0, 0])
    meta["crop_offset"] = [int(p + s) for p, s in zip(previous, start)]
    meta.setdefault("original_shape", list(case.shape))
    return case.replace(image=case.image[(slice(None),) + box].copy(), mask=case.mask[box].copy(), meta=meta)


def target_extent(shape: Sequence[int], spacing: Sequence[float], target: Sequence[float]) -> Tuple[int, int, int]:
    return tuple(int(round(n * s / t)) for n, s, t in zip(shape, spacing, target))


def resample(case: PatientCase, target_spacing: Sequence[float]) -> PatientCase:
    """Resample to ``target_spacing``: cubic B-spline for the image, nearest neighbour for the mask.

    Raises:
        ValidationError: If the target is not positive or yields an empty axis
    """
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or min(target) <= 0:
        raise ValidationError(f"Target spacing must be 3 positive values, got {target}", "VAL_003")
    new_shape = target_extent(case.shape, case.spacing, target)
    if min(new_shape) < 1:
        raise ValidationError(
            f"Case {case.id}: resampling {case.shape} at {case.spacing} to {target} gives extent {new_shape}",
            "VAL_003",
        )
    meta = dict(case.meta)
    meta.setdefault("source_spacing", list(case.spacing))
    if new_shape == case.shape:
        return case.replace(spacing=target, meta=meta)

    factors = [n / o for n, o in zip(new_shape, case.shape)]
    image = np.stack([
        ndimage.zoom(channel.astype(np.float64), factors, order=SPLINE_ORDER, mode="mirror")
        for channel in case.image
    ])
    mask = ndimage.zoom(case.mask, factors, order=0, mode="nearest")
    return case.replace(image=image.astype(np.float32), mask=mask, spacing=target, meta=meta)


def median_spacing(cases: Sequence[PatientCase]) -> Tuple[float, float, float]:
    """Per-axis median spacing; an even count takes the lower median.

    Raises:
        ValidationError: If no cases are given
    """
    if not cases:
        raise ValidationError("median_spacing needs at least one case", "VAL_001")
    spacings = np.sort(np.array([case.spacing for case in cases], dtype=np.float64), axis=0)
    return tuple(float(v) for v in spacings[(len(cases) - 1) // 2])


def zscore(case: PatientCase) -> PatientCase:
    """(x - mean) / max(std, 1e-8) per channel over all voxels of the case."""
    image = case.image.astype(np.float64)
    flat = image.reshape(image.shape[0], -1)
    mean = flat.mean(axis=1)
    std = np.maximum(flat.std(axis=1), ZSCORE_EPS)
    out = (image - mean[:, None, None, None]) / std[:, None, None, None]
    return case.replace(image=out.astype(np.float32))


def preprocess_case(case: PatientCase, target_spacing: Sequence[float]) -> PatientCase:
    """crop_nonzero -> resample -> zscore"""
    return zscore(resample(crop_nonzero(case), target_spacing))


def preprocess_dataset(
    cases: Sequence[PatientCase],
    target_spacing: Optional[Sequence[float]] = None,
) -> Tuple[List[PatientCase], Tuple[float, float, float]]:
    """Preprocess a cohort; the target defaults to the median spacing of the cropped cases.

    Returns:
        (preprocessed cases, target spacing used)
    """
    cropped = [crop_nonzero(case) for case in cases]
    target = tuple(target_spacing) if target_spacing is not None else median_spacing(cropped)
    logger.debug(f"Resampling {len(cropped)} cases to spacing {target}")
    return [zscore(resample(case, target)) for case in cropped], target
