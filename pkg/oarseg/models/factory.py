"""
Model factory: architecture identifier to network class.
"""

from typing import Dict, List, Optional, Type

import numpy as np

from oarseg.models.cunet import CUnet
from oarseg.models.decepticonv import DeceptiConv
from oarseg.models.decoder import EncoderDecoder
from oarseg.models.msunetr import MSUneTr
from oarseg.models.spec import ModelSpec
from oarseg.models.swin_unetr import SwinUNETR
from oarseg.models.swinconvnet import SwinConvNet
from oarseg.models.unet import UNet
from oarseg.models.unetr import UNETR
from oarseg.utils.errors import ValidationError
from oarseg.utils.logging import Logger

# Architecture identifier to network class
MODELS: Dict[str, Type[EncoderDecoder]] = {
    "unet": UNet,
    "cunet": CUnet,
    "unetr": UNETR,
    "swin_unetr": SwinUNETR,
    "msunetr": MSUneTr,
    "decepticonv": DeceptiConv,
    "swinconvnet": SwinConvNet,
}


def build_model(spec: ModelSpec, seed: int = 0, logger: Optional[Logger] = None) -> EncoderDecoder:
    """Construct and initialize the network described by ``spec``.

    Args:
        spec: Architecture and scale
        seed: Initialization seed; equal seeds give byte-identical parameters
        logger: Logger instance

    Returns:
        Model in training mode

    Raises:
        ValidationError: If the architecture is unknown
    """
    if spec.arch not in MODELS:
        raise ValidationError(f"No model available for architecture: {spec.arch}", "VAL_003")
    model = MODELS[spec.arch](spec, np.random.default_rng(seed))
    model.seed = seed
    model.assign_names(spec.name)
    if logger is not None:
        logger.debug(f"Built {spec.name} ({spec.arch}, {spec.scale_preset}) with {model.num_parameters():,} parameters")
    return model


def supported_architectures() -> List[str]:
    return list(MODELS.keys())
