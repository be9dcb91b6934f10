"""
Cross-validation folds over patient ids.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from oarseg.utils.errors import FileAccessError, ValidationError

FOLDS_FILE = "folds.json"


@dataclass
class FoldSplit:
    """Patient id to fold index in [0, k)."""
    k: int
    assignments: Dict[str, int]
    seed: int

    def __post_init__(self):
        bad = {i: f for i, f in self.assignments.items() if not 0 <= f < self.k}
        if bad:
            raise ValidationError(f"Fold indices outside [0, {self.k}): {list(bad.items())[:5]}", "VAL_003")

    def _check_fold(self, fold: int) -> None:
        if not 0 <= fold < self.k:
            raise ValidationError(f"Fold {fold} outside [0, {self.k})", "VAL_003")

    def val_ids(self, fold: int) -> List[str]:
        self._check_fold(fold)
        return sorted(i for i, f in self.assignments.items() if f == fold)

    def train_ids(self, fold: int) -> List[str]:
        self._check_fold(fold)
        return sorted(i for i, f in self.assignments.items() if f != fold)

    def fold_of(self, case_id: str) -> int:
        if case_id not in self.assignments:
            raise ValidationError(f"Case {case_id} is not part of the split", "VAL_003")
        return self.assignments[case_id]

    def sizes(self) -> List[int]:
        counts = np.bincount(list(self.assignments.values()), minlength=self.k)
        return [int(c) for c in counts]

    def to_dict(self) -> Dict:
        return {"k": self.k, "seed": self.seed, "assignments": dict(sorted(self.assignments.items()))}

    @classmethod
    def from_dict(cls, payload: Dict) -> "FoldSplit":
        return cls(k=int(payload["k"]), assignments={k: int(v) for k, v in payload["assignments"].items()},
                   seed=int(payload.get("seed", 0)))

    def save(self, path: Path) -> Path:
        path = Path(path)
        if path.is_dir():
            path = path / FOLDS_FILE
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def load(cls, path: Path) -> "FoldSplit":
        path = Path(path)
        if path.is_dir():
            path = path / FOLDS_FILE
        if not path.exists():
            raise FileAccessError(f"Fold split not found: {path}", "FILE_001")
        with open(path) as f:
            return cls.from_dict(json.load(f))


def make_folds(ids: Sequence[str], k: int, seed: int = 0) -> FoldSplit:
    """Seeded shuffle of the sorted ids, then round-robin fold assignment.

    Raises:
        ValidationError: If k < 2, k exceeds the id count or ids repeat
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}", "VAL_003")
    ids = sorted(ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("Duplicate ids in fold construction", "VAL_003")
    if k > len(ids):
        raise ValidationError(f"k={k} exceeds the number of ids ({len(ids)})", "VAL_003")
    order = np.random.default_rng(seed).permutation(len(ids))
    assignments = {ids[idx]: pos % k for pos, idx in enumerate(order)}
    return FoldSplit(k=k, assignments=assignments, seed=seed)
