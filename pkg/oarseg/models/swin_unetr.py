"""
Swin UNETR: hierarchical shifted-window encoder with patch merging.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import PatchMerging, SwinStage, residual_block
from oarseg.nn.module import Conv2d, ModuleList
from oarseg.tensor.tensor import Tensor


def to_channels_first(x: Tensor) -> Tensor:
    return x.transpose(0, 3, 1, 2)


class SwinUNETR(EncoderDecoder):
    """Stage s runs at 1/2**(s+1) resolution with c_s channels; the last stage is the bottleneck."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        channels = spec.channels()
        self.embed = Conv2d(spec.in_channels, channels[0], 2, rng, stride=2, padding="valid")
        self.stages = ModuleList([SwinStage(c, spec.swin_depth, spec.window, rng) for c in channels])
        self.merges = ModuleList([PatchMerging(c, rng) for c in channels[:-1]])
        self.stem = residual_block(spec.in_channels, channels[0], rng)
        self.skip_blocks = ModuleList([
            residual_block(channels[j - 1], channels[j], rng) for j in range(1, spec.levels)
        ])
        self.bottleneck = residual_block(channels[-1], channels[-1], rng)
        self.decoder = SharedDecoder(channels, channels[-1], spec.num_classes, rng)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        h = self.embed(x).transpose(0, 2, 3, 1)
        hidden = []
        for s, stage in enumerate(self.stages):
            h = stage(h)
            hidden.append(h)
            if s < len(self.merges):
                h = self.merges[s](h)
        skips = [self.stem(x)] + [
            block(to_channels_first(h)) for block, h in zip(self.skip_blocks, hidden[:-1])
        ]
        return skips, self.bottleneck(to_channels_first(hidden[-1]))
