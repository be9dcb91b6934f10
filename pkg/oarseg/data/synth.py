"""
Synthetic phantom generator.

Two rosters are available: ``pelvis`` (single-channel CT-like volumes with a
bladder blob and three tubular bowel/rectum/sigmoid structures that touch
each other) and ``brain`` (four-channel MR-like volumes with three nested
tumour sub-regions).
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from oarseg.data.case import PatientCase
from oarseg.utils.errors import ValidationError
from oarseg.utils.logging import Logger

ROSTERS: Dict[str, List[str]] = {
    "pelvis": ["bladder", "bowel", "rectum", "sigmoid"],
    "brain": ["edema", "non_enhancing", "enhancing"],
}
ROSTER_CHANNELS = {"pelvis": 1, "brain": 4}

MIN_EXTENT = (4, 32, 32)
SPACING_RANGE = (1.0, 3.0)
MIN_CLASS_FRACTION = 1e-3

# Mean offsets of each brain region from healthy tissue, per channel (T1, T1-Gd, T2, FLAIR)
BRAIN_CONTRAST = np.array([
    [-15.0, -10.0, 40.0, 55.0],   # edema
    [-30.0, -25.0, 60.0, 20.0],   # non-enhancing core
    [-5.0, 70.0, 25.0, 30.0],     # enhancing
])


def _grid(extent: Tuple[int, int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.ogrid[:extent[0], :extent[1], :extent[2]]


def _ellipsoid(extent, center, radii) -> np.ndarray:
    zz, yy, xx = _grid(extent)
    return (
        ((zz - center[0]) / radii[0]) ** 2
        + ((yy - center[1]) / radii[1]) ** 2
        + ((xx - center[2]) / radii[2]) ** 2
    ) <= 1.0


def _tube(extent, points: np.ndarray, radius: float) -> np.ndarray:
    """Voxels within ``radius`` of a polyline given as dense [n,3] samples."""
    centerline = np.zeros(extent, dtype=bool)
    idx = np.round(points).astype(int)
    for axis, size in enumerate(extent):
        idx[:, axis] = np.clip(idx[:, axis], 0, size - 1)
    centerline[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return ndimage.distance_transform_edt(~centerline) <= radius


def _segment(start, end, samples: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples)[:, None]
    return np.asarray(start, dtype=float) * (1 - t) + np.asarray(end, dtype=float) * t


def _pelvis_labels(extent, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    d, h, w = extent
    body = np.broadcast_to(
        _ellipsoid((1, h, w), (0, h / 2, w / 2), (1.0, 0.42 * h, 0.45 * w)), extent
    )
    samples = 4 * max(extent)

    bladder_c = (d * rng.uniform(0.35, 0.65), h * rng.uniform(0.38, 0.46), w * rng.uniform(0.45, 0.55))
    bladder_r = (max(d * rng.uniform(0.25, 0.35), 1.5), h * rng.uniform(0.12, 0.16), w * rng.uniform(0.14, 0.19))
    bladder = _ellipsoid(extent, bladder_c, bladder_r)

    # Rectum runs through every slice just behind the bladder wall
    rect_r = h * rng.uniform(0.06, 0.08)
    rect_y = bladder_c[1] + bladder_r[1] + rect_r
    drift = w * rng.uniform(-0.04, 0.04)
    rect_pts = _segment((0, rect_y, w / 2 - drift), (d - 1, rect_y, w / 2 + drift), samples)
    rectum = _tube(extent, rect_pts, rect_r)

    # Sigmoid leaves the rectum and sweeps laterally through the upper slices
    side = rng.choice([-1.0, 1.0])
    t = np.linspace(0.0, 1.0, samples)
    z0 = d * rng.uniform(0.3, 0.5)
    sig_pts = np.stack([
        z0 + t * (d - 1 - z0),
        rect_y - t * h * rng.uniform(0.08, 0.14),
        w / 2 + drift + side * np.sin(np.pi * t) * w * rng.uniform(0.15, 0.22),
    ], axis=1)
    sigmoid = _tube(extent, sig_pts, h * rng.uniform(0.045, 0.06))

    # Bowel: branches radiating from a hub above the bladder
    hub = (d * rng.uniform(0.5, 0.8), h * rng.uniform(0.2, 0.28), w * rng.uniform(0.4, 0.6))
    bowel = np.zeros(extent, dtype=bool)
    for _ in range(3):
        end = (rng.uniform(0, d - 1), h * rng.uniform(0.12, 0.35), w * rng.uniform(0.15, 0.85))
        bowel |= _tube(extent, _segment(hub, end, samples), h * rng.uniform(0.04, 0.06))

    labels = np.zeros(extent, dtype=np.uint8)
    # First structure wins where two overlap
    for label, structure in ((1, bladder), (3, rectum), (4, sigmoid), (2, bowel)):
        labels[(labels == 0) & structure & body] = label
    return labels, np.ascontiguousarray(body)


def _brain_labels(extent, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    d, h, w = extent
    head = _ellipsoid(extent, (d / 2, h / 2, w / 2), (max(0.6 * d, 2.0), 0.42 * h, 0.36 * w))
    center = (d * rng.uniform(0.35, 0.65), h * rng.uniform(0.35, 0.65), w * rng.uniform(0.38, 0.62))
    edema_r = np.array([max(d * rng.uniform(0.3, 0.45), 1.5), h * rng.uniform(0.14, 0.2), w * rng.uniform(0.12, 0.17)])
    core_r = edema_r * rng.uniform(0.5, 0.65)
    necrotic_r = core_r * rng.uniform(0.45, 0.65)

    edema = _ellipsoid(extent, center, edema_r)
    core = _ellipsoid(extent, center, core_r)
    necrotic = _ellipsoid(extent, center, necrotic_r)

    labels = np.zeros(extent, dtype=np.uint8)
    labels[edema] = 1
    labels[core] = 3
    labels[necrotic] = 2
    labels[~head] = 0
    return labels, head


def _render(labels: np.ndarray, body: np.ndarray, channels: int, contrast: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Tissue intensity plus per-label offsets plus Gaussian noise; exactly zero outside the body."""
    image = np.zeros((channels,) + labels.shape, dtype=np.float64)
    for ch in range(channels):
        tissue = 100.0 + rng.normal(0.0, 5.0)
        lut = np.concatenate([[tissue], tissue + contrast[:, ch]])
        sigma = rng.uniform(5.0, 12.0)
        image[ch] = lut[labels] + rng.normal(0.0, sigma, size=labels.shape)
    image = np.where(body[None], np.maximum(image, 1.0), 0.0)
    return image.astype(np.float32)


def synth_case(
    case_id: str,
    classes: int,
    extent: Tuple[int, int, int],
    rng: np.random.Generator,
    roster: str = "pelvis",
) -> PatientCase:
    """One phantom; labels above ``classes`` are folded into healthy tissue."""
    if roster == "pelvis":
        labels, body = _pelvis_labels(extent, rng)
        contrast = rng.uniform(20.0, 60.0, size=(4, 1)) * rng.choice([-1.0, 1.0], size=(4, 1))
    else:
        labels, body = _brain_labels(extent, rng)
        contrast = BRAIN_CONTRAST + rng.uniform(-8.0, 8.0, size=BRAIN_CONTRAST.shape)
    labels[labels > classes] = 0
    image = _render(labels, body, ROSTER_CHANNELS[roster], contrast, rng)
    spacing = tuple(rng.uniform(*SPACING_RANGE, size=3))
    return PatientCase(
        id=case_id,
        image=image,
        spacing=spacing,
        mask=labels,
        class_names=ROSTERS[roster][:classes],
        meta={"roster": roster},
    )


def synth_generate(
    n_patients: int,
    classes: int,
    extent: Tuple[int, int, int] = (16, 96, 96),
    seed: int = 0,
    roster: str = "pelvis",
    logger: Optional[Logger] = None,
) -> List[PatientCase]:
    """Generate ``n_patients`` phantoms deterministically from ``seed``.

    Case i depends only on (seed, i), so a larger cohort extends a smaller one.

    Raises:
        ValidationError: On an unknown roster, an unsupported class count or an
            extent too small to place every structure
    """
    if roster not in ROSTERS:
        raise ValidationError(f"Unknown roster: {roster}", "VAL_003")
    if not 2 <= classes <= len(ROSTERS[roster]):
        raise ValidationError(
            f"Roster {roster} supports 2..{len(ROSTERS[roster])} classes, got {classes}", "VAL_003"
        )
    if n_patients < 1:
        raise ValidationError(f"n_patients must be positive, got {n_patients}", "VAL_003")
    extent = tuple(int(e) for e in extent)
    if len(extent) != 3 or any(e < m for e, m in zip(extent, MIN_EXTENT)):
        raise ValidationError(
            f"Extent {extent} too small to place all structures (minimum {MIN_EXTENT})", "VAL_003"
        )

    children = np.random.SeedSequence(seed).spawn(n_patients)
    cases = [
        synth_case(f"case_{i:03d}", classes, extent, np.random.default_rng(child), roster)
        for i, child in enumerate(children)
    ]
    if logger is not None:
        logger.info(f"Generated {n_patients} {roster} phantoms, {classes} classes, extent {extent}")
    return cases


def class_histogram(cases: Sequence[PatientCase]) -> pd.DataFrame:
    """Voxel fraction of every class per case, plus a ``present`` flag at 0.1%."""
    rows = []
    for case in cases:
        counts = np.bincount(case.mask.ravel(), minlength=case.num_classes)
        for label, name in enumerate(case.class_names, start=1):
            fraction = counts[label] / case.mask.size
            rows.append({
                "case": case.id,
                "class": name,
                "fraction": float(fraction),
                "present": bool(fraction >= MIN_CLASS_FRACTION),
            })
    return pd.DataFrame(rows, columns=["case", "class", "fraction", "present"])
