"""
Prediction sets: cross-validated probability volumes of one model or ensemble.

Layout of a prediction directory::

    predictions.json          model name, classes, spacing, case -> fold
    <case_id>/probs.json
    <case_id>/probs.raw
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from oarseg.data.case import PatientCase
from oarseg.data.preprocessing import preprocess_case
from oarseg.inference.sliding_window import ProbabilityVolume, predict_volume
from oarseg.models.checkpoint import HEADER_NAME, load_checkpoint, read_header
from oarseg.utils.errors import FileAccessError, ValidationError
from oarseg.utils.logging import Logger
from oarseg.utils.progress import ProgressTracker

PREDICTIONS_INDEX = "predictions.json"


def resolve_checkpoints(path: Path) -> List[Path]:
    """A checkpoint directory, or a training run holding ``fold_*/final`` checkpoints.

    Raises:
        FileAccessError: If no checkpoint is found under ``path``
    """
    path = Path(path)
    if (path / HEADER_NAME).exists():
        return [path]
    found = sorted(p.parent for p in path.glob(f"fold_*/final/{HEADER_NAME}"))
    if not found:
        raise FileAccessError(f"No checkpoint found under {path}", "FILE_001")
    return found


def member_name(path: Path) -> str:
    """Model name recorded in the first checkpoint of a member."""
    return read_header(resolve_checkpoints(path)[0]).get("name", Path(path).name)


@dataclass
class PredictionSet:
    """Index of a prediction directory."""
    root: Path
    model: str
    class_names: List[str]
    spacing: List[float]
    folds: Dict[str, int] = field(default_factory=dict)
    members: List[str] = field(default_factory=list)

    def add(self, vol: ProbabilityVolume, fold: int) -> None:
        vol.save(Path(self.root) / vol.case_id)
        self.folds[vol.case_id] = int(fold)

    def volume(self, case_id: str) -> ProbabilityVolume:
        if case_id not in self.folds:
            raise ValidationError(f"No prediction for case {case_id} in {self.root}", "VAL_002")
        return ProbabilityVolume.load(Path(self.root) / case_id)

    def items(self) -> Iterator[Tuple[str, int, ProbabilityVolume]]:
        for case_id in sorted(self.folds):
            yield case_id, self.folds[case_id], self.volume(case_id)

    def save(self) -> Path:
        path = Path(self.root) / PREDICTIONS_INDEX
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump({
                "model": self.model,
                "classes": self.class_names,
                "spacing": self.spacing,
                "members": self.members,
                "cases": dict(sorted(self.folds.items())),
            }, f, indent=2)
        return path

    @classmethod
    def load(cls, root: Path) -> "PredictionSet":
        path = Path(root) / PREDICTIONS_INDEX
        if not path.exists():
            raise FileAccessError(f"Prediction index not found: {path}", "FILE_001")
        with open(path) as f:
            index = json.load(f)
        return cls(
            root=Path(root),
            model=index["model"],
            class_names=index["classes"],
            spacing=index["spacing"],
            folds={k: int(v) for k, v in index["cases"].items()},
            members=index.get("members", []),
        )


def predict_member(
    member: Path,
    cases: Sequence[PatientCase],
    fold_only: bool = True,
    overlap: float = 0.5,
    batch: int = 4,
    workers: int = 1,
    logger: Optional[Logger] = None,
    progress: Optional[ProgressTracker] = None,
) -> Tuple[str, List[float], Dict[str, Tuple[int, ProbabilityVolume]]]:
    """Predict every case with the checkpoint that held it out.

    With ``fold_only`` each checkpoint predicts only its validation ids;
    otherwise every case is predicted by every checkpoint and the last wins,
    which is only meaningful for a single checkpoint.

    Returns:
        (model name, preprocessing spacing, case id -> (fold, volume))
    """
    logger = logger or Logger()
    progress = progress or ProgressTracker()
    by_id = {case.id: case for case in cases}
    results: Dict[str, Tuple[int, ProbabilityVolume]] = {}
    name, spacing = None, None
    for ckpt in resolve_checkpoints(member):
        model, header = load_checkpoint(ckpt, logger)
        name = name or header.get("name", model.spec.name)
        target = header.get("target_spacing")
        if target is None:
            raise ValidationError(f"Checkpoint {ckpt} records no target spacing", "VAL_002")
        if spacing is not None and list(target) != list(spacing):
            raise ValidationError(f"Checkpoints of {member} disagree on the target spacing", "VAL_003")
        spacing = list(target)
        patch = tuple(header.get("train_config", {}).get("patch", (model.spec.img_size,) * 2))
        fold = int(header.get("fold", 0))
        ids = header.get("val_ids", []) if fold_only else sorted(by_id)
        ids = [i for i in ids if i in by_id]
        task = progress.start_task(f"infer-{name}-fold{fold}", len(ids))
        for case_id in ids:
            case = preprocess_case(by_id[case_id], spacing)
            vol = predict_volume(model, case, patch, overlap, batch, workers, logger)
            vol.meta["spacing"] = spacing
            results[case_id] = (fold, vol)
            progress.advance(task)
        progress.complete_task(task)
    if not results:
        raise ValidationError(f"Member {member} predicted no cases", "VAL_001")
    return name, spacing, results


def write_predictions(
    out_dir: Path,
    model: str,
    class_names: List[str],
    spacing: List[float],
    volumes: Dict[str, Tuple[int, ProbabilityVolume]],
    members: Optional[List[str]] = None,
) -> PredictionSet:
    pset = PredictionSet(Path(out_dir), model, list(class_names), list(spacing), members=list(members or []))
    for case_id in sorted(volumes):
        fold, vol = volumes[case_id]
        pset.add(vol, fold)
    pset.save()
    return pset
