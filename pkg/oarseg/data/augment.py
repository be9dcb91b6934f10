"""
Spatial augmentation of 2D slices: rotation, isotropic scaling, horizontal flip.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from oarseg.utils.errors import ValidationError


@dataclass
class AugmentPolicy:
    """Which transforms are enabled and their ranges.

    Attributes:
        rotate: Rotation uniform in [-rotation_degrees, +rotation_degrees]
        scale: Isotropic scale uniform in scale_range
        flip: Horizontal flip
        probability: Chance that each enabled transform is applied
    """
    rotate: bool = True
    scale: bool = True
    flip: bool = False
    rotation_degrees: float = 15.0
    scale_range: Tuple[float, float] = (0.85, 1.15)
    probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError(f"Augmentation probability must be in [0, 1], got {self.probability}", "VAL_003")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValidationError(f"Invalid scale range: {self.scale_range}", "VAL_003")

    @classmethod
    def from_config(cls, data_section: dict) -> "AugmentPolicy":
        return cls(
            rotate=data_section.get("rotate", True),
            scale=data_section.get("scale", True),
            flip=data_section.get("flip", False),
            rotation_degrees=data_section.get("rotation_degrees", 15.0),
            scale_range=tuple(data_section.get("scale_range", (0.85, 1.15))),
            probability=data_section.get("transform_probability", 0.5),
        )


def rotate_scale(
    image: np.ndarray,
    mask: np.ndarray,
    degrees: float = 0.0,
    scale: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Rotate counter-clockwise by ``degrees`` and zoom by ``scale`` about the slice center.

    Images ([H,W] or [M,H,W]) are interpolated bilinearly, masks by nearest
    neighbour; samples from outside the slice are zero / background.
    """
    h, w = mask.shape
    theta = math.radians(degrees)
    matrix = np.array([[math.cos(theta), math.sin(theta)], [-math.sin(theta), math.cos(theta)]]) / scale
    matrix[np.abs(matrix) < 1e-12] = 0.0
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center - matrix @ center

    def warp(plane: np.ndarray, order: int) -> np.ndarray:
        return ndimage.affine_transform(plane, matrix, offset=offset, order=order, mode="constant", cval=0.0)

    if image.ndim == 3:
        out_image = np.stack([warp(channel, 1) for channel in image])
    else:
        out_image = warp(image, 1)
    return out_image.astype(image.dtype), warp(mask, 0).astype(mask.dtype)


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    policy: AugmentPolicy,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply the policy's transforms, each with probability ``policy.probability``.

    The generator is consumed identically whichever transforms fire, so a
    seeded generator always reproduces the same result.
    """
    draws = rng.random(3)
    degrees = rng.uniform(-policy.rotation_degrees, policy.rotation_degrees)
    factor = rng.uniform(*policy.scale_range)

    do_rotate = policy.rotate and draws[0] < policy.probability
    do_scale = policy.scale and draws[1] < policy.probability
    do_flip = policy.flip and draws[2] < policy.probability

    if do_rotate or do_scale:
        image, mask = rotate_scale(
            image, mask,
            degrees=degrees if do_rotate else 0.0,
            scale=factor if do_scale else 1.0,
        )
    else:
        image, mask = image.copy(), mask.copy()
    if do_flip:
        image, mask = flip_horizontal(image), flip_horizontal(mask)
    return image, mask


def flip_horizontal(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(array[..., ::-1])


def no_augmentation() -> AugmentPolicy:
    return AugmentPolicy(rotate=False, scale=False, flip=False)


def policy_summary(policy: Optional[AugmentPolicy]) -> dict:
    """Plain-dict view recorded in run manifests."""
    if policy is None:
        return {"rotate": False, "scale": False, "flip": False}
    return {
        "rotate": policy.rotate,
        "scale": policy.scale,
        "flip": policy.flip,
        "rotation_degrees": policy.rotation_degrees,
        "scale_range": list(policy.scale_range),
        "probability": policy.probability,
    }
