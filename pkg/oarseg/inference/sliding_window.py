"""
Sliding-window slice inference and probability volume storage.
"""

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from oarseg.data.case import PatientCase
from oarseg.data.sampling import pad_to
from oarseg.utils.errors import FileAccessError, ValidationError
from oarseg.utils.logging import Logger

PROBS_HEADER = "probs.json"
PROBS_FILE = "probs.raw"
SIMPLEX_TOLERANCE = 1e-5


def axis_origins(extent: int, patch: int, overlap: float) -> List[int]:
    """Window starts along one axis; the last window is flush with the border."""
    if not 0.0 <= overlap < 1.0:
        raise ValidationError(f"overlap must be in [0, 1), got {overlap}", "VAL_003")
    if extent <= patch:
        return [0]
    stride = max(1, math.ceil(patch * (1.0 - overlap)))
    origins = list(range(0, extent - patch + 1, stride))
    if origins[-1] != extent - patch:
        origins.append(extent - patch)
    return origins


def window_layout(
    extent: Union[int, Tuple[int, int]],
    patch: Union[int, Tuple[int, int]],
    overlap: float = 0.5,
) -> List[Tuple[int, ...]]:
    """Origins of every window covering ``extent``.

    An integer extent gives 1D origins (as 1-tuples); a pair gives the
    row-major product of both axes.
    """
    if isinstance(extent, int):
        return [(o,) for o in axis_origins(extent, int(patch), overlap)]
    patch = (patch, patch) if isinstance(patch, int) else tuple(patch)
    per_axis = [axis_origins(e, p, overlap) for e, p in zip(extent, patch)]
    return list(itertools.product(*per_axis))


@dataclass
class ProbabilityVolume:
    """Class probabilities [C,D,H,W] on a preprocessed case grid."""
    case_id: str
    probs: np.ndarray
    class_names: List[str]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 4:
            raise ValidationError(f"Probabilities must be [C,D,H,W], got {self.probs.shape}", "VAL_004")
        if self.probs.shape[0] != len(self.class_names) + 1:
            raise ValidationError(
                f"{self.probs.shape[0]} probability channels for {len(self.class_names)} classes + background",
                "VAL_004",
            )

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.probs.shape[1:])

    def simplex_error(self) -> float:
        """Largest deviation of a per-voxel class sum from 1."""
        return float(np.abs(self.probs.astype(np.float64).sum(axis=0) - 1.0).max())

    def save(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = {
            "id": self.case_id,
            "shape": list(self.probs.shape),
            "classes": self.class_names,
            "dtype": "f32le",
            "meta": self.meta,
        }
        with open(out_dir / PROBS_HEADER, "w") as f:
            json.dump(header, f, indent=2)
        np.ascontiguousarray(self.probs, dtype="<f4").tofile(out_dir / PROBS_FILE)
        return out_dir

    @classmethod
    def load(cls, vol_dir: Path) -> "ProbabilityVolume":
        """Read ``probs.json`` + ``probs.raw``.

        Raises:
            FileAccessError: On missing files, unknown dtype or a size mismatch
        """
        vol_dir = Path(vol_dir)
        header_path = vol_dir / PROBS_HEADER
        if not header_path.exists():
            raise FileAccessError(f"Probability header not found: {header_path}", "FILE_001")
        with open(header_path) as f:
            header = json.load(f)
        if header.get("dtype", "f32le") != "f32le":
            raise FileAccessError(f"Unknown probability dtype: {header['dtype']}", "FILE_003")
        shape = tuple(header["shape"])
        payload = vol_dir / PROBS_FILE
        if not payload.exists():
            raise FileAccessError(f"Probability payload not found: {payload}", "FILE_001")
        expected = int(np.prod(shape)) * 4
        if payload.stat().st_size != expected:
            raise FileAccessError(
                f"Size mismatch for {payload}: expected {expected} bytes, got {payload.stat().st_size}", "FILE_002"
            )
        probs = np.fromfile(payload, dtype="<f4").reshape(shape)
        return cls(header["id"], probs, header["classes"], header.get("meta", {}))


def predict_slice(
    model,
    image: np.ndarray,
    patch: Tuple[int, int],
    overlap: float = 0.5,
    batch: int = 4,
) -> np.ndarray:
    """Uniformly blended window probabilities [C,H,W] for one [M,H,W] slice."""
    h, w = image.shape[1:]
    padded, _, (top, left) = pad_to(image, np.zeros((h, w), dtype=np.uint8), patch)
    ph, pw = patch
    origins = window_layout(padded.shape[1:], patch, overlap)

    total = None
    coverage = np.zeros(padded.shape[1:], dtype=np.float64)
    for start in range(0, len(origins), batch):
        chunk = origins[start:start + batch]
        windows = np.stack([padded[:, y:y + ph, x:x + pw] for y, x in chunk])
        probs = model.predict(windows)
        if total is None:
            total = np.zeros((probs.shape[1],) + padded.shape[1:], dtype=np.float64)
        for (y, x), p in zip(chunk, probs):
            total[:, y:y + ph, x:x + pw] += p
            coverage[y:y + ph, x:x + pw] += 1.0
    blended = total / coverage
    return blended[:, top:top + h, left:left + w]


def predict_volume(
    model,
    case: PatientCase,
    patch: Tuple[int, int],
    overlap: float = 0.5,
    batch: int = 4,
    workers: int = 1,
    logger: Optional[Logger] = None,
) -> ProbabilityVolume:
    """Slice-by-slice sliding-window prediction of a preprocessed case.

    Slices may run on several threads; each writes its own output plane.
    """
    model.eval()

    def run(z: int) -> np.ndarray:
        return predict_slice(model, case.image[:, z], patch, overlap, batch)

    depth = case.shape[0]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            planes = list(pool.map(run, range(depth)))
    else:
        planes = [run(z) for z in range(depth)]
    probs = np.stack(planes, axis=1)
    if logger is not None:
        logger.debug(f"Predicted {case.id}: {depth} slices, {probs.shape[0]} classes")
    return ProbabilityVolume(case.id, probs, case.class_names, {"spacing": list(case.spacing)})
