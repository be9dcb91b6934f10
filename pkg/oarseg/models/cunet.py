"""
CUnet: residual U-Net with convolutional skip blocks and an ASPP bottleneck.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import ASPP, residual_block
from oarseg.nn.module import ModuleList
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor


class CUnet(EncoderDecoder):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        channels = spec.channels()
        self.encoder = ModuleList()
        in_channels = spec.in_channels
        for c in channels:
            self.encoder.append(residual_block(in_channels, c, rng))
            in_channels = c
        self.skip_blocks = ModuleList([residual_block(c, c, rng) for c in channels])
        self.bottleneck = ASPP(channels[-1], channels[-1], rng)
        self.decoder = SharedDecoder(channels, channels[-1], spec.num_classes, rng)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        skips = []
        for block, skip_block in zip(self.encoder, self.skip_blocks):
            x = block(x)
            skips.append(skip_block(x))
            x = F.max_pool2d(x, 2)
        return skips, self.bottleneck(x)
