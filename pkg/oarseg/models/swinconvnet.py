"""
SwinConvNet: convolution and shifted-window branches side by side, with
learned 2x2 stride-2 downsampling between levels.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import SEBlock, SwinStage, residual_block
from oarseg.nn.module import Conv2d, Module, ModuleList
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor


class HybridLevel(Module):
    """conv branch || Swin branch -> concat -> SE -> residual block (2c -> c)."""

    def __init__(self, channels: int, spec: ModelSpec, rng: np.random.Generator):
        super().__init__()
        self.conv = residual_block(channels, channels, rng)
        self.swin = SwinStage(channels, spec.swin_depth, spec.window, rng)
        self.se = SEBlock(2 * channels, spec.se_reduction, rng)
        self.fuse = residual_block(2 * channels, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        attended = self.swin(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        return self.fuse(self.se(F.concat([self.conv(x), attended], axis=1)))


class SwinConvNet(EncoderDecoder):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        channels = spec.channels()
        widths = channels + [channels[-1]]
        self.stem = residual_block(spec.in_channels, channels[0], rng)
        self.stages = ModuleList([HybridLevel(w, spec, rng) for w in widths])
        self.downsample = ModuleList([
            Conv2d(widths[j], widths[j + 1], 2, rng, stride=2, padding="valid")
            for j in range(len(channels))
        ])
        self.decoder = SharedDecoder(channels, channels[-1], spec.num_classes, rng)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        x = self.stem(x)
        skips = []
        for stage, down in zip(self.stages, self.downsample):
            x = stage(x)
            skips.append(x)
            x = down(x)
        return skips, self.stages[-1](x)
