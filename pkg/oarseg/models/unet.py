"""
U-Net with GeLU activations and bilinear upsampling.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import BlockConfig, ResidualBlock, residual_block
from oarseg.nn.module import ModuleList
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor


class UNet(EncoderDecoder):
    """Plain double-convolution encoder; the bottleneck widens to twice the top channels."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        channels = spec.channels()
        self.encoder = ModuleList()
        in_channels = spec.in_channels
        for c in channels:
            self.encoder.append(residual_block(in_channels, c, rng, residual=False))
            in_channels = c
        top = channels[-1]
        self.bottleneck = ResidualBlock(
            BlockConfig(top, top, residual=False, mid_channels=2 * top), rng
        )
        self.decoder = SharedDecoder(channels, top, spec.num_classes, rng, residual=False)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        return skips, self.bottleneck(x)
