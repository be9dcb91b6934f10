"""
UNETR: a plain exact-attention transformer over 2**levels patches, with
intermediate layers brought back to the decoder resolutions by transposed
convolutions.
"""

from typing import List, Tuple

import numpy as np

from oarseg.models.decoder import EncoderDecoder, SharedDecoder
from oarseg.models.spec import ModelSpec
from oarseg.nn.attention import AttentionConfig, default_heads
from oarseg.nn.blocks import PatchEmbed, TransformerBlock, residual_block, tokens_to_map
from oarseg.nn.module import ConvTranspose2d, Module, ModuleList
from oarseg.tensor.tensor import Tensor
from oarseg.utils.errors import ValidationError


class TokenUpsampler(Module):
    """``steps`` rounds of 2x transposed convolution followed by a residual block."""

    def __init__(self, in_channels: int, out_channels: int, steps: int, rng: np.random.Generator):
        super().__init__()
        self.ups = ModuleList()
        self.blocks = ModuleList()
        for s in range(steps):
            self.ups.append(ConvTranspose2d(in_channels if s == 0 else out_channels, out_channels, 2, rng))
            self.blocks.append(residual_block(out_channels, out_channels, rng))

    def forward(self, x: Tensor) -> Tensor:
        for up, block in zip(self.ups, self.blocks):
            x = block(up(x))
        return x


def tap_layers(depth: int, levels: int) -> List[int]:
    """1-based transformer layers whose outputs feed the decoder: (k * depth) // levels."""
    return [(k * depth) // levels for k in range(1, levels + 1)]


class UNETR(EncoderDecoder):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        super().__init__(spec)
        if spec.unetr_depth < spec.levels:
            raise ValidationError(
                f"unetr_depth {spec.unetr_depth} must be >= levels {spec.levels}", "VAL_003"
            )
        channels = spec.channels()
        embed = spec.unetr_embed
        self.taps = tap_layers(spec.unetr_depth, spec.levels)
        self.embed = PatchEmbed(spec.in_channels, spec.unetr_patch, embed, spec.img_size, rng)
        cfg = AttentionConfig(embed, default_heads(embed), "exact")
        self.layers = ModuleList([TransformerBlock(cfg, rng) for _ in range(spec.unetr_depth)])
        self.stem = residual_block(spec.in_channels, channels[0], rng)
        self.skip_ups = ModuleList([
            TokenUpsampler(embed, channels[k], spec.levels - k, rng) for k in range(1, spec.levels)
        ])
        self.bottleneck = residual_block(embed, channels[-1], rng)
        self.decoder = SharedDecoder(channels, channels[-1], spec.num_classes, rng)

    def encode(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        grid = self.embed.grid(x)
        tokens = self.embed(x)
        hidden = []
        for i, layer in enumerate(self.layers, start=1):
            tokens = layer(tokens)
            if i in self.taps:
                hidden.append(tokens_to_map(tokens, grid))
        skips = [self.stem(x)] + [up(h) for up, h in zip(self.skip_ups, hidden[:-1])]
        return skips, self.bottleneck(hidden[-1])
