"""
Checkpoint format: ``model.json`` header plus ``model.bin`` payload.

The payload is every parameter and buffer, little-endian float32, concatenated
in the model's traversal order; the header records name, shape and byte offset
of each entry.
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder
from oarseg.models.factory import build_model
from oarseg.models.spec import ModelSpec
from oarseg.utils.errors import FileAccessError
from oarseg.utils.logging import Logger

HEADER_NAME = "model.json"
PAYLOAD_NAME = "model.bin"
PAYLOAD_DTYPE = np.dtype("<f4")


def save_checkpoint(
    model: EncoderDecoder,
    out_dir: Path,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``model`` into ``out_dir``.

    Args:
        model: Network to save
        out_dir: Checkpoint directory, created if needed
        extra: Additional header fields (e.g. fold, split seed, epoch)

    Returns:
        Checkpoint directory
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    offset = 0
    with open(out_dir / PAYLOAD_NAME, "wb") as f:
        for name, value in model.state_dict().items():
            block = np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE)
            f.write(block.tobytes())
            manifest.append({"name": name, "shape": list(block.shape), "offset": offset})
            offset += block.nbytes
    header = {
        "spec": model.spec.to_dict(),
        "seed": int(getattr(model, "seed", 0)),
        "name": model.spec.name,
        "dtype": "f32le",
        "parameters": manifest,
        "payload_bytes": offset,
    }
    if extra:
        header.update(extra)
    with open(out_dir / HEADER_NAME, "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
    return out_dir


def read_header(ckpt_dir: Path) -> Dict[str, Any]:
    """Load the JSON header of a checkpoint.

    Raises:
        FileAccessError: If the header is missing or malformed
    """
    path = Path(ckpt_dir) / HEADER_NAME
    if not path.exists():
        raise FileAccessError(f"Checkpoint header not found: {path}", "FILE_001")
    try:
        with open(path) as f:
            header = json.load(f)
    except json.JSONDecodeError as e:
        raise FileAccessError(f"Malformed checkpoint header {path}: {e}", "FILE_004")
    for key in ("spec", "parameters"):
        if key not in header:
            raise FileAccessError(f"Checkpoint header {path} missing '{key}'", "FILE_004")
    return header


def load_checkpoint(ckpt_dir: Path, logger: Optional[Logger] = None) -> Tuple[EncoderDecoder, Dict[str, Any]]:
    """Rebuild a model from its checkpoint directory.

    Returns:
        (model in eval mode, header)

    Raises:
        FileAccessError: On a missing payload or a payload/header size mismatch
        ValidationError: If the stored entries do not fit the rebuilt model
    """
    ckpt_dir = Path(ckpt_dir)
    header = read_header(ckpt_dir)
    if header.get("dtype", "f32le") != "f32le":
        raise FileAccessError(f"Unknown checkpoint dtype: {header['dtype']}", "FILE_003")
    payload_path = ckpt_dir / PAYLOAD_NAME
    if not payload_path.exists():
        raise FileAccessError(f"Checkpoint payload not found: {payload_path}", "FILE_001")
    payload = np.fromfile(payload_path, dtype=np.uint8)
    expected = sum(
        int(np.prod(entry["shape"], dtype=np.int64)) * PAYLOAD_DTYPE.itemsize for entry in header["parameters"]
    )
    if payload.size != expected:
        raise FileAccessError(
            f"Checkpoint payload size mismatch: expected {expected} bytes, got {payload.size}", "FILE_002"
        )

    state = {}
    for entry in header["parameters"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        raw = payload[start:start + count * PAYLOAD_DTYPE.itemsize]
        state[entry["name"]] = raw.view(PAYLOAD_DTYPE).reshape(entry["shape"])

    spec = ModelSpec.from_dict(header["spec"])
    model = build_model(spec, seed=header.get("seed", 0), logger=logger)
    model.load_state_dict(state)
    model.eval()
    if logger is not None:
        logger.info(f"Loaded checkpoint {ckpt_dir} ({spec.name}, {len(state)} entries)")
    return model, header
