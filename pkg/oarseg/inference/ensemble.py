"""
Probability-averaging ensembles and subset enumeration.
"""

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from oarseg.inference.sliding_window import ProbabilityVolume
from oarseg.utils.errors import FileAccessError, ValidationError

ENSEMBLE_FILE = "ensemble.json"


@dataclass
class EnsembleSpec:
    """Member checkpoint references and their (unnormalized) weights."""
    members: List[str]
    weights: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValidationError("An ensemble needs at least one member", "VAL_001")
        if not self.weights:
            self.weights = [1.0] * len(self.members)
        if len(self.weights) != len(self.members):
            raise ValidationError(
                f"{len(self.weights)} weights for {len(self.members)} members", "VAL_004"
            )
        if min(self.weights) <= 0:
            raise ValidationError(f"Ensemble weights must be positive, got {self.weights}", "VAL_003")

    @property
    def label(self) -> str:
        return "+".join(Path(m).name for m in self.members)

    def normalized_weights(self) -> List[float]:
        total = float(sum(self.weights))
        return [w / total for w in self.weights]

    def save(self, out_dir: Path) -> Path:
        path = Path(out_dir) / ENSEMBLE_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({"members": self.members, "weights": self.normalized_weights()}, f, indent=2)
        return path

    @classmethod
    def load(cls, path: Path) -> "EnsembleSpec":
        path = Path(path)
        if path.is_dir():
            path = path / ENSEMBLE_FILE
        if not path.exists():
            raise FileAccessError(f"Ensemble manifest not found: {path}", "FILE_001")
        with open(path) as f:
            payload = json.load(f)
        return cls(members=list(payload["members"]), weights=list(payload.get("weights", [])))


def ensemble_average(
    volumes: Sequence[ProbabilityVolume],
    weights: Optional[Sequence[float]] = None,
) -> ProbabilityVolume:
    """Per-voxel convex combination of member probabilities.

    Equal weights reduce to a plain mean, so n copies of one volume return it
    unchanged.

    Raises:
        ValidationError: On misaligned grids, differing class rosters or bad weights
    """
    if not volumes:
        raise ValidationError("ensemble_average needs at least one volume", "VAL_001")
    first = volumes[0]
    for vol in volumes[1:]:
        if vol.probs.shape != first.probs.shape:
            raise ValidationError(
                f"Grid mismatch for {vol.case_id}: {vol.probs.shape} vs {first.probs.shape}", "VAL_004"
            )
        if vol.class_names != first.class_names:
            raise ValidationError(f"Class roster mismatch for {vol.case_id}", "VAL_003")
    if weights is None or len(set(weights)) == 1:
        weights = [1.0] * len(volumes)
    if len(weights) != len(volumes) or min(weights) <= 0:
        raise ValidationError(f"Invalid ensemble weights {list(weights)} for {len(volumes)} members", "VAL_003")

    total = np.zeros(first.probs.shape, dtype=np.float64)
    for w, vol in zip(weights, volumes):
        total += float(w) * vol.probs.astype(np.float64)
    total /= float(sum(weights))
    return ProbabilityVolume(first.case_id, total, first.class_names, dict(first.meta))


def enumerate_subsets(models: Sequence[str], min_size: int = 2) -> List[EnsembleSpec]:
    """Every subset of at least ``min_size`` members, by size then lexicographically."""
    if min_size < 1:
        raise ValidationError(f"min_size must be >= 1, got {min_size}", "VAL_003")
    subsets = []
    for size in range(min_size, len(models) + 1):
        for combo in itertools.combinations(models, size):
            subsets.append(EnsembleSpec(members=list(combo)))
    return subsets


def hard_labels(vol: ProbabilityVolume) -> np.ndarray:
    """Per-voxel argmax [D,H,W]; ties go to the lowest class index."""
    return np.argmax(vol.probs, axis=0).astype(np.uint8)
