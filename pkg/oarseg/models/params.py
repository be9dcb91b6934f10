"""
Parameter counting and the published-count comparison report.
"""

from collections import OrderedDict
from typing import Dict, Iterable, Optional

import pandas as pd

from oarseg.models.factory import build_model
from oarseg.models.spec import ARCHITECTURES, ModelSpec
from oarseg.nn.module import Module

# Published totals for the paper-scale models (1 input channel, 5 classes)
PUBLISHED_COUNTS: Dict[str, int] = {
    "unet": 10_188_773,
    "cunet": 14_605_301,
    "unetr": 87_118_837,
    "swin_unetr": 25_122_917,
    "msunetr": 7_979_765,
    "decepticonv": 27_782_549,
    "swinconvnet": 27_106_037,
}

DISCREPANCY_NOTES: Dict[str, str] = {
    "unet": "bias-free convolutions before batch norm; channel plan 48-96-192-384, bottleneck 768/384",
    "cunet": "one residual block per skip connection; ASPP branches carry biases, no normalization",
    "unetr": "heads = embed/32; transposed convolutions only in the skip upsamplers, shared bilinear decoder",
    "swin_unetr": "no relative position bias; stride-2 convolutional patch embedding; residual skip blocks; shared bilinear decoder",
    "msunetr": "learned absolute position embeddings on the full img_size grid of every level",
    "decepticonv": "conv encoder bottleneck is a residual block; SE + residual block per fused level",
    "swinconvnet": "two Swin blocks per level; SE + residual fuse block per level",
}


def count_params(model: Module) -> int:
    """Scalar parameters, including normalization gains/offsets and position embeddings.

    Running statistics are buffers and are not counted.
    """
    return model.num_parameters()


def param_breakdown(model: Module) -> "OrderedDict[str, int]":
    """Parameter count per top-level child module."""
    breakdown: "OrderedDict[str, int]" = OrderedDict()
    for name, child in model._modules.items():
        breakdown[name] = child.num_parameters()
    own = sum(p.size for p in model._parameters.values())
    if own:
        breakdown["<own>"] = own
    return breakdown


def comparison_report(
    archs: Optional[Iterable[str]] = None,
    scale_preset: str = "paper",
    in_channels: int = 1,
    num_classes: int = 5,
) -> pd.DataFrame:
    """Measured parameter counts against the published table.

    Returns:
        One row per architecture: measured, published, delta, delta_pct, note
    """
    rows = []
    for arch in archs or ARCHITECTURES:
        spec = ModelSpec.from_preset(arch, scale_preset, in_channels=in_channels, num_classes=num_classes)
        model = build_model(spec, seed=0)
        measured = count_params(model)
        del model
        published = PUBLISHED_COUNTS[arch] if scale_preset == "paper" else None
        rows.append({
            "arch": arch,
            "measured": measured,
            "published": published,
            "delta": measured - published if published is not None else None,
            "delta_pct": 100.0 * (measured - published) / published if published is not None else None,
            "note": DISCREPANCY_NOTES[arch],
        })
    return pd.DataFrame(rows, columns=["arch", "measured", "published", "delta", "delta_pct", "note"])
