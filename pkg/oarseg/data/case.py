"""
Patient cases and their on-disk directory format.

A case directory holds ``case.json`` (header), ``image.raw`` (little-endian
float32, C-order, channel-major) and ``mask.raw`` (uint8 labels). A dataset
root holds one directory per case plus ``dataset.json``.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from oarseg.utils.errors import FileAccessError, ValidationError
from oarseg.utils.logging import Logger

CASE_HEADER = "case.json"
IMAGE_FILE = "image.raw"
MASK_FILE = "mask.raw"
DATASET_HEADER = "dataset.json"

IMAGE_DTYPES = {"f32le": np.dtype("<f4")}
MASK_DTYPES = {"u8": np.dtype("u1")}


@dataclass
class PatientCase:
    """One patient volume with its label mask.

    Attributes:
        id: Case identifier
        image: Voxel grid [M,D,H,W]; a [D,H,W] grid is stored with M = 1
        spacing: (sz, sy, sx) in mm
        mask: Labels [D,H,W] in 0..len(class_names)
        class_names: Foreground class names; label c is class_names[c-1]
        meta: Free-form metadata (crop offset, original shape, source spacing)
    """
    id: str
    image: np.ndarray
    spacing: Tuple[float, float, float]
    mask: np.ndarray
    class_names: List[str]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        if image.ndim == 3:
            image = image[None]
        if image.ndim != 4:
            raise ValidationError(f"Case {self.id}: image must be [D,H,W] or [M,D,H,W], got {image.shape}", "VAL_004")
        self.image = image
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.class_names = list(self.class_names)
        self.validate()

    def validate(self) -> None:
        """Raise ValidationError unless the case invariants hold."""
        if self.mask.shape != self.image.shape[1:]:
            raise ValidationError(
                f"Case {self.id}: mask {self.mask.shape} does not match image grid {self.image.shape[1:]}", "VAL_004"
            )
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValidationError(f"Case {self.id}: spacing must be 3 positive values, got {self.spacing}", "VAL_003")
        if self.mask.size and int(self.mask.max()) > len(self.class_names):
            raise ValidationError(
                f"Case {self.id}: label {int(self.mask.max())} exceeds class count {len(self.class_names)}", "VAL_005"
            )

    @property
    def channels(self) -> int:
        return self.image.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.mask.shape)

    @property
    def num_classes(self) -> int:
        """Classes including background."""
        return len(self.class_names) + 1

    def replace(self, **changes) -> "PatientCase":
        """Copy with some fields replaced; metadata is copied, not shared."""
        values = {
            "id": self.id,
            "image": self.image,
            "spacing": self.spacing,
            "mask": self.mask,
            "class_names": self.class_names,
            "meta": dict(self.meta),
        }
        values.update(changes)
        return PatientCase(**values)


def write_case(case: PatientCase, case_dir: Path) -> Path:
    """Write ``case`` into ``case_dir`` (created if needed)."""
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "id": case.id,
        "shape": list(case.shape),
        "channels": case.channels,
        "spacing_mm": list(case.spacing),
        "classes": case.class_names,
        "image_dtype": "f32le",
        "mask_dtype": "u8",
    }
    if case.meta:
        header["meta"] = case.meta
    with open(case_dir / CASE_HEADER, "w") as f:
        json.dump(header, f, indent=2)
    np.ascontiguousarray(case.image, dtype=IMAGE_DTYPES["f32le"]).tofile(case_dir / IMAGE_FILE)
    np.ascontiguousarray(case.mask, dtype=MASK_DTYPES["u8"]).tofile(case_dir / MASK_FILE)
    return case_dir


def _read_payload(path: Path, dtype: np.dtype, shape: Tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise FileAccessError(f"File not found: {path}", "FILE_001")
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = path.stat().st_size
    if actual != expected:
        raise FileAccessError(
            f"Size mismatch for {path}: expected {expected} bytes, got {actual}", "FILE_002"
        )
    return np.fromfile(path, dtype=dtype).reshape(shape)


def read_case(case_dir: Path) -> PatientCase:
    """Load a case directory.

    Raises:
        FileAccessError: On a missing file, unknown dtype or header/payload size mismatch
        ValidationError: If the mask holds a label beyond the class count
    """
    case_dir = Path(case_dir)
    header_path = case_dir / CASE_HEADER
    if not header_path.exists():
        raise FileAccessError(f"Case header not found: {header_path}", "FILE_001")
    try:
        with open(header_path) as f:
            header = json.load(f)
        shape = tuple(int(s) for s in header["shape"])
        channels = int(header.get("channels", 1))
        image_dtype = header.get("image_dtype", "f32le")
        mask_dtype = header.get("mask_dtype", "u8")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FileAccessError(f"Malformed case header {header_path}: {e}", "FILE_004")
    if image_dtype not in IMAGE_DTYPES:
        raise FileAccessError(f"Unknown image dtype '{image_dtype}' in {header_path}", "FILE_003")
    if mask_dtype not in MASK_DTYPES:
        raise FileAccessError(f"Unknown mask dtype '{mask_dtype}' in {header_path}", "FILE_003")

    image = _read_payload(case_dir / IMAGE_FILE, IMAGE_DTYPES[image_dtype], (channels,) + shape)
    mask = _read_payload(case_dir / MASK_FILE, MASK_DTYPES[mask_dtype], shape)
    return PatientCase(
        id=header.get("id", case_dir.name),
        image=image,
        spacing=tuple(header["spacing_mm"]),
        mask=mask,
        class_names=header.get("classes", []),
        meta=header.get("meta", {}),
    )


def write_dataset(cases: Sequence[PatientCase], root: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write every case plus the ``dataset.json`` index.

    Raises:
        ValidationError: If cases disagree on class names or ids repeat
    """
    root = Path(root)
    if not cases:
        raise ValidationError("Cannot write an empty dataset", "VAL_001")
    class_names = cases[0].class_names
    ids = [case.id for case in cases]
    if len(set(ids)) != len(ids):
        raise ValidationError("Duplicate case ids in dataset", "VAL_003")
    for case in cases:
        if case.class_names != class_names:
            raise ValidationError(f"Case {case.id} has a different class roster", "VAL_003")
        write_case(case, root / case.id)
    index = {"cases": ids, "classes": class_names, "channels": cases[0].channels}
    if extra:
        index.update(extra)
    with open(root / DATASET_HEADER, "w") as f:
        json.dump(index, f, indent=2)
    return root


def read_dataset_index(root: Path) -> Dict[str, Any]:
    """Load ``dataset.json`` of a dataset root."""
    path = Path(root) / DATASET_HEADER
    if not path.exists():
        raise FileAccessError(f"Dataset index not found: {path}", "FILE_001")
    try:
        with open(path) as f:
            index = json.load(f)
    except json.JSONDecodeError as e:
        raise FileAccessError(f"Malformed dataset index {path}: {e}", "FILE_004")
    if "cases" not in index:
        raise FileAccessError(f"Dataset index {path} lists no cases", "FILE_004")
    return index


def read_dataset(root: Path, ids: Optional[Sequence[str]] = None, logger: Optional[Logger] = None) -> List[PatientCase]:
    """Load the cases of a dataset root, optionally restricted to ``ids``."""
    root = Path(root)
    index = read_dataset_index(root)
    wanted = list(ids) if ids is not None else index["cases"]
    unknown = sorted(set(wanted) - set(index["cases"]))
    if unknown:
        raise ValidationError(f"Cases not in dataset {root}: {unknown[:5]}", "VAL_003")
    cases = [read_case(root / case_id) for case_id in wanted]
    if logger is not None:
        logger.debug(f"Read {len(cases)} cases from {root}")
    return cases
