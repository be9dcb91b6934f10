"""
Segmentation architectures, checkpoints and parameter reports.
"""

from oarseg.models.checkpoint import load_checkpoint, read_header, save_checkpoint
from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.factory import MODELS, build_model, supported_architectures
from oarseg.models.params import PUBLISHED_COUNTS, comparison_report, count_params, param_breakdown
from oarseg.models.spec import ARCHITECTURES, SCALE_PRESETS, ModelSpec

__all__ = [
    "ARCHITECTURES",
    "EncoderDecoder",
    "MODELS",
    "ModelSpec",
    "PUBLISHED_COUNTS",
    "SCALE_PRESETS",
    "SharedDecoder",
    "build_model",
    "comparison_report",
    "count_params",
    "load_checkpoint",
    "param_breakdown",
    "read_header",
    "save_checkpoint",
    "supported_architectures",
]
