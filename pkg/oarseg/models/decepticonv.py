"""
DeceptiConv: residual convolutional encoder fused with a Vision Performer
pyramid at every level.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.msunetr import performer_pyramid, performer_widths
from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import SEBlock, residual_block
from oarseg.nn.module import ModuleList
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor


class DeceptiConv(EncoderDecoder):
    """Per level: concat(conv features, Performer features) -> SE -> residual block (2c -> c)."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        channels = spec.channels()
        widths = performer_widths(spec)
        self.encoder = ModuleList()
        in_channels = spec.in_channels
        for c in channels:
            self.encoder.append(residual_block(in_channels, c, rng))
            in_channels = c
        self.bottleneck = residual_block(channels[-1], channels[-1], rng)
        self.performers = performer_pyramid(spec, rng)
        self.excitations = ModuleList([SEBlock(2 * w, spec.se_reduction, rng) for w in widths])
        self.skip_blocks = ModuleList([residual_block(2 * w, w, rng) for w in widths])
        self.decoder = SharedDecoder(channels, channels[-1], spec.num_classes, rng)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        conv_features = []
        h = x
        for block in self.encoder:
            h = block(h)
            conv_features.append(h)
            h = F.max_pool2d(h, 2)
        conv_features.append(self.bottleneck(h))

        fused = []
        for conv, performer, se, block in zip(conv_features, self.performers, self.excitations, self.skip_blocks):
            fused.append(block(se(F.concat([conv, performer(x)], axis=1))))
        return fused[:-1], fused[-1]
