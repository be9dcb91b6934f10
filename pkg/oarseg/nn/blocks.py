"""
Reusable network blocks: convolution blocks, ASPP, squeeze-excitation,
patch embedding and transformer-style blocks.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from oarseg.nn.attention import AttentionConfig, MultiHeadAttention, default_heads
from oarseg.nn.module import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, ModuleList, Parameter
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor, get_dtype
from oarseg.utils.errors import DimensionError, ValidationError

POS_EMBED_STD = 0.02


@dataclass
class BlockConfig:
    """Convolution block shape; ``mid_channels`` defaults to ``out_channels``."""
    in_channels: int
    out_channels: int
    kernel: int = 3
    residual: bool = True
    mid_channels: Optional[int] = None

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError(
                f"Channels must be positive: {self.in_channels}->{self.out_channels}", "VAL_003"
            )
        if self.kernel % 2 == 0:
            raise ValidationError(f"Kernel must be odd, got {self.kernel}", "VAL_003")


class ResidualBlock(Module):
    """conv-norm-GeLU-conv-norm (+ shortcut) then GeLU.

    With ``residual=False`` the shortcut is dropped and the block is the plain
    double convolution of a U-Net.
    """

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        mid = cfg.mid_channels or cfg.out_channels
        self.conv1 = Conv2d(cfg.in_channels, mid, cfg.kernel, rng, bias=False)
        self.norm1 = BatchNorm2d(mid)
        self.conv2 = Conv2d(mid, cfg.out_channels, cfg.kernel, rng, bias=False)
        self.norm2 = BatchNorm2d(cfg.out_channels)
        self.shortcut = None
        if cfg.residual and cfg.in_channels != cfg.out_channels:
            self.shortcut = Conv2d(cfg.in_channels, cfg.out_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = F.gelu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        if self.cfg.residual:
            y = y + (self.shortcut(x) if self.shortcut is not None else x)
        return F.gelu(y)


def residual_block(in_channels: int, out_channels: int, rng: np.random.Generator, residual: bool = True) -> ResidualBlock:
    return ResidualBlock(BlockConfig(in_channels, out_channels, residual=residual), rng)


class ASPP(Module):
    """Four dilated 3x3 branches (rates 1-4), concatenated and fused by a 1x1 convolution."""

    RATES = (1, 2, 3, 4)

    def __init__(self, in_channels: int, branch_channels: int, rng: np.random.Generator):
        super().__init__()
        self.branches = ModuleList([
            Conv2d(in_channels, branch_channels, 3, rng, dilation=rate) for rate in self.RATES
        ])
        self.fuse = Conv2d(len(self.RATES) * branch_channels, branch_channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = F.concat([branch(x) for branch in self.branches], axis=1)
        return self.fuse(F.gelu(y))


class SEBlock(Module):
    """Squeeze-and-excitation: channel gates from a pooled bottleneck."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        if channels % reduction:
            raise ValidationError(f"SE channels {channels} not divisible by reduction {reduction}", "VAL_003")
        self.squeeze = Linear(channels, channels // reduction, rng)
        self.excite = Linear(channels // reduction, channels, rng)

    def gates(self, x: Tensor) -> Tensor:
        """[N,C] gates in (0, 1)."""
        return F.sigmoid(self.excite(F.gelu(self.squeeze(F.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        return x * self.gates(x).reshape(n, c, 1, 1)


# ----------------------------------------------------------------------
# Tokens


def patchify(x: Tensor, patch: int) -> Tensor:
    """[B,C,H,W] -> [B, (H/p)(W/p), C*p*p], row-major over patches."""
    b, c, h, w = x.shape
    if h % patch or w % patch:
        raise DimensionError("patch_embed", f"extents divisible by {patch}", (h, w))
    gh, gw = h // patch, w // patch
    x = x.reshape(b, c, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh * gw, c * patch * patch)


def tokens_to_map(tokens: Tensor, grid: Tuple[int, int]) -> Tensor:
    """[B,T,E] -> [B,E,gh,gw]"""
    b, _, e = tokens.shape
    return tokens.transpose(0, 2, 1).reshape(b, e, grid[0], grid[1])


class PatchEmbed(Module):
    """Non-overlapping patches, linear projection, learned absolute position embedding.

    The position embedding lives on the grid of ``img_size``; other grids get a
    bilinearly resized copy.
    """

    def __init__(self, in_channels: int, patch: int, embed_dim: int, img_size: int, rng: np.random.Generator):
        super().__init__()
        if img_size % patch:
            raise ValidationError(f"img_size {img_size} not divisible by patch {patch}", "VAL_003")
        self.patch = patch
        self.embed_dim = embed_dim
        self.proj = Linear(in_channels * patch * patch, embed_dim, rng)
        grid = img_size // patch
        self.pos = Parameter(rng.standard_normal((1, embed_dim, grid, grid), dtype=get_dtype()) * POS_EMBED_STD)

    def grid(self, x: Tensor) -> Tuple[int, int]:
        return x.shape[2] // self.patch, x.shape[3] // self.patch

    def forward(self, x: Tensor) -> Tensor:
        gh, gw = self.grid(x)
        tokens = self.proj(patchify(x, self.patch))
        pos = F.resize_bilinear(self.pos, (gh, gw))
        return tokens + pos.reshape(1, self.embed_dim, gh * gw).transpose(0, 2, 1)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm attention and feed-forward (expansion 4), both residual.

    Works on [B,T,C] tokens, or [B,H,W,C] maps for window attention.
    """

    MLP_RATIO = 4

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.norm1 = LayerNorm(cfg.embed_dim)
        self.attn = MultiHeadAttention(cfg, rng)
        self.norm2 = LayerNorm(cfg.embed_dim)
        self.mlp = MLP(cfg.embed_dim, self.MLP_RATIO * cfg.embed_dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class SwinBlock(TransformerBlock):
    """Window-attention transformer block on [B,H,W,C] maps.

    Maps no larger than the window are attended globally without a shift.
    """

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        side = min(x.shape[1], x.shape[2])
        if side <= cfg.window:
            cfg = dataclasses.replace(cfg, window=side, shift=0)
        x = x + self.attn(self.norm1(x), cfg)
        return x + self.mlp(self.norm2(x))


class SwinStage(Module):
    """Consecutive Swin blocks alternating shift 0 and window/2."""

    def __init__(self, dim: int, depth: int, window: int, rng: np.random.Generator, heads: Optional[int] = None):
        super().__init__()
        heads = heads or default_heads(dim)
        self.blocks = ModuleList([
            SwinBlock(AttentionConfig(dim, heads, "window", window=window,
                                      shift=0 if i % 2 == 0 else window // 2), rng)
            for i in range(depth)
        ])

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class PatchMerging(Module):
    """2x2 neighbourhood concat, LayerNorm, linear 4C -> 2C on [B,H,W,C]."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(4 * dim)
        self.reduce = Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[1:3]
        if h % 2 or w % 2:
            x = F.pad2d(x.transpose(0, 3, 1, 2), (0, h % 2, 0, w % 2)).transpose(0, 2, 3, 1)
        parts = [x[:, 0::2, 0::2, :], x[:, 1::2, 0::2, :], x[:, 0::2, 1::2, :], x[:, 1::2, 1::2, :]]
        return self.reduce(self.norm(F.concat(parts, axis=-1)))


class VisionPerformer(Module):
    """Patch embedding followed by one Performer transformer block, returned as a feature map."""

    def __init__(
        self,
        in_channels: int,
        patch: int,
        embed_dim: int,
        img_size: int,
        random_features: int,
        seed: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.embed = PatchEmbed(in_channels, patch, embed_dim, img_size, rng)
        cfg = AttentionConfig(embed_dim, default_heads(embed_dim), "performer",
                              random_features=random_features, seed=seed)
        self.block = TransformerBlock(cfg, rng)

    def forward(self, x: Tensor) -> Tensor:
        grid = self.embed.grid(x)
        return tokens_to_map(self.block(self.embed(x)), grid)
