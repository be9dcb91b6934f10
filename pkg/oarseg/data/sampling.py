"""
Training patch sampling and the batch loader.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from oarseg.data.augment import AugmentPolicy, augment
from oarseg.data.case import PatientCase
from oarseg.utils.errors import ValidationError


def pad_to(image: np.ndarray, mask: np.ndarray, patch: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray, Tuple[int, int]]:
    """Symmetric zero padding of a [M,H,W] slice (background for the mask) up to ``patch``.

    Returns:
        (image, mask, (pad_top, pad_left))
    """
    h, w = mask.shape
    ph, pw = max(patch[0] - h, 0), max(patch[1] - w, 0)
    top, left = ph // 2, pw // 2
    if ph or pw:
        widths = ((top, ph - top), (left, pw - left))
        image = np.pad(image, ((0, 0),) + widths)
        mask = np.pad(mask, widths)
    return image, mask, (top, left)


def foreground_voxels(case: PatientCase) -> np.ndarray:
    """[n,3] (z, y, x) coordinates of labelled voxels."""
    return np.argwhere(case.mask > 0)


def sample_patch(
    case: PatientCase,
    patch: Tuple[int, int],
    rng: np.random.Generator,
    fg_fraction: float = 1.0 / 3.0,
    foreground: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Crop one training patch from an axial slice.

    With probability ``fg_fraction`` the crop is centred on a foreground
    voxel drawn uniformly from the whole case (which fixes the slice);
    otherwise the slice and the crop origin are uniform.

    Args:
        case: Preprocessed case
        patch: (ph, pw)
        rng: Random generator
        fg_fraction: Probability of forcing foreground
        foreground: Cached ``foreground_voxels(case)``

    Returns:
        (image [M,ph,pw], mask [ph,pw])
    """
    if not 0.0 <= fg_fraction <= 1.0:
        raise ValidationError(f"fg_fraction must be in [0, 1], got {fg_fraction}", "VAL_003")
    if foreground is None:
        foreground = foreground_voxels(case)
    force = rng.random() < fg_fraction and len(foreground) > 0

    if force:
        z, cy, cx = foreground[rng.integers(len(foreground))]
    else:
        z = rng.integers(case.shape[0])
    image, mask, (top, left) = pad_to(case.image[:, z], case.mask[z], patch)
    h, w = mask.shape
    if force:
        y0 = int(np.clip(cy + top - patch[0] // 2, 0, h - patch[0]))
        x0 = int(np.clip(cx + left - patch[1] // 2, 0, w - patch[1]))
    else:
        y0 = int(rng.integers(h - patch[0] + 1))
        x0 = int(rng.integers(w - patch[1] + 1))
    window = (slice(y0, y0 + patch[0]), slice(x0, x0 + patch[1]))
    return image[(slice(None),) + window].copy(), mask[window].copy()


class PatchLoader:
    """Seeded batches of augmented patches.

    Sample ``i`` of epoch ``e`` is drawn from its own generator seeded by
    (seed, e, i), so results do not depend on worker scheduling; batches are
    yielded in sequence-number order.
    """

    def __init__(
        self,
        cases: Sequence[PatientCase],
        patch: Tuple[int, int],
        batch: int,
        fg_fraction: float = 1.0 / 3.0,
        policy: Optional[AugmentPolicy] = None,
        seed: int = 0,
        workers: int = 1,
    ):
        if not cases:
            raise ValidationError("PatchLoader needs at least one case", "VAL_001")
        if batch < 1:
            raise ValidationError(f"batch must be >= 1, got {batch}", "VAL_003")
        self.cases = list(cases)
        self.patch = tuple(patch)
        self.batch = batch
        self.fg_fraction = fg_fraction
        self.policy = policy
        self.seed = seed
        self.workers = max(1, workers)
        self._foreground: Dict[str, np.ndarray] = {case.id: foreground_voxels(case) for case in self.cases}

    @property
    def num_slices(self) -> int:
        return sum(case.shape[0] for case in self.cases)

    def sample(self, epoch: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, epoch, index])
        case = self.cases[rng.integers(len(self.cases))]
        image, mask = sample_patch(case, self.patch, rng, self.fg_fraction, self._foreground[case.id])
        if self.policy is not None:
            image, mask = augment(image, mask, self.policy, rng)
        return image, mask

    def batches(self, epoch: int, steps: int) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        """Yield ``steps`` batches as (sequence number, images [B,M,ph,pw], labels [B,ph,pw])."""
        def build(step: int) -> Tuple[int, np.ndarray, np.ndarray]:
            samples: List[Tuple[np.ndarray, np.ndarray]] = [
                self.sample(epoch, step * self.batch + j) for j in range(self.batch)
            ]
            images = np.stack([s[0] for s in samples]).astype(np.float32)
            masks = np.stack([s[1] for s in samples]).astype(np.int64)
            return step, images, masks

        if self.workers == 1:
            for step in range(steps):
                yield build(step)
            return
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            # map preserves submission order
            yield from pool.map(build, range(steps))
