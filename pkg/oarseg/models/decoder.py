"""
Shared decoder and the encoder-decoder base class every architecture extends.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.spec import ModelSpec
from oarseg.nn.blocks import BlockConfig, ResidualBlock
from oarseg.nn.module import Conv2d, Module, ModuleList
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor, no_grad
from oarseg.utils.errors import DimensionError


class SharedDecoder(Module):
    """Bilinear 2x upsample, concatenate the skip, convolution block; once per level, top to bottom.

    Level j (from levels-1 down to 0) receives the map from below, doubles its
    resolution, concatenates skip j and reduces to c_(j-1) channels (c_0 at the
    top). A 1x1 convolution maps c_0 to class logits.

    Args:
        channels: Encoder channel plan c_0..c_(L-1)
        bottleneck_channels: Channels arriving from the bottleneck
        num_classes: Output classes
        rng: Initialization generator
        residual: Residual decoder blocks (plain double convolutions otherwise)
    """

    def __init__(
        self,
        channels: List[int],
        bottleneck_channels: int,
        num_classes: int,
        rng: np.random.Generator,
        residual: bool = True,
    ):
        super().__init__()
        levels = len(channels)
        self.blocks = ModuleList()
        below = bottleneck_channels
        for j in reversed(range(levels)):
            out = channels[j - 1] if j > 0 else channels[0]
            self.blocks.append(ResidualBlock(BlockConfig(below + channels[j], out, residual=residual), rng))
            below = out
        self.head = Conv2d(channels[0], num_classes, 1, rng)

    def forward(self, bottleneck: Tensor, skips: List[Tensor]) -> Tensor:
        x = bottleneck
        for i, skip in enumerate(reversed(skips)):
            x = F.bilinear_upsample(x, 2)
            x = self.blocks[i](F.concat([x, skip], axis=1))
        return self.head(x)


class EncoderDecoder(Module):
    """Base segmentation network: architecture-specific encoder, shared decoder.

    Subclasses build ``self.decoder`` and implement ``encode`` returning the
    skip maps (full resolution first) and the bottleneck map.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        """Class logits for inputs whose extents are multiples of ``spec.divisor``."""
        skips, bottleneck = self.encode(x)
        return self.decoder(bottleneck, skips)

    def forward_probs(self, image: Tensor) -> Tensor:
        """Per-pixel class probabilities [N, num_classes, H, W].

        Inputs are zero-padded at the bottom/right to a multiple of
        ``spec.divisor`` and the output is cropped back.

        Raises:
            DimensionError: If the image is not [N, in_channels, H, W] or smaller than the divisor
            NumericError: If an activation becomes non-finite (annotated with the layer)
        """
        if image.ndim != 4 or image.shape[1] != self.spec.in_channels:
            raise DimensionError("forward_probs", f"[N,{self.spec.in_channels},H,W]", image.shape)
        h, w = image.shape[2:]
        div = self.spec.divisor
        if h < div or w < div:
            raise DimensionError("forward_probs", f"extents >= {div}", (h, w))
        pad_h, pad_w = (-h) % div, (-w) % div
        x = F.pad2d(image, (0, pad_h, 0, pad_w))
        probs = F.softmax(self(x), axis=1)
        if pad_h or pad_w:
            probs = probs[:, :, :h, :w]
        return probs

    def predict(self, image: np.ndarray) -> np.ndarray:
        """Eval-time probabilities for a numpy batch, without recording a graph."""
        with no_grad():
            return self.forward_probs(Tensor(image)).data
