"""
MSUneTr: one single-layer Vision Performer per decoder level.

Level j sees the raw image through patches of 2**j pixels, so its tokens form
a map at the resolution of decoder level j; the level at 2**levels feeds the
bottleneck.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import VisionPerformer, residual_block
from oarseg.nn.module import ModuleList
from oarseg.tensor.tensor import Tensor


def performer_widths(spec: ModelSpec) -> List[int]:
    """Embedding width per Performer level: c_j, and c_(L-1) for the bottleneck level."""
    channels = spec.channels()
    return channels + [channels[-1]]


def performer_pyramid(spec: ModelSpec, rng: np.random.Generator) -> ModuleList:
    """Vision Performers with patch sizes 1, 2, ..., 2**levels."""
    return ModuleList([
        VisionPerformer(
            spec.in_channels,
            2 ** j,
            width,
            spec.img_size,
            spec.performer_features,
            spec.seed + j,
            rng,
        )
        for j, width in enumerate(performer_widths(spec))
    ])


class MSUneTr(EncoderDecoder):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        widths = performer_widths(spec)
        self.performers = performer_pyramid(spec, rng)
        self.skip_blocks = ModuleList([residual_block(w, w, rng) for w in widths])
        channels = spec.channels()
        self.decoder = SharedDecoder(channels, channels[-1], spec.num_classes, rng)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        features = [block(performer(x)) for performer, block in zip(self.performers, self.skip_blocks)]
        return features[:-1], features[-1]
