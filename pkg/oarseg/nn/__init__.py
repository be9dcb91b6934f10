"""
Network layers and blocks built on the tensor engine.
"""

from oarseg.nn.attention import (
    AttentionConfig,
    MultiHeadAttention,
    attention_exact,
    attention_performer,
    window_attention,
)
from oarseg.nn.blocks import (
    ASPP,
    BlockConfig,
    PatchEmbed,
    ResidualBlock,
    SEBlock,
    SwinStage,
    TransformerBlock,
    VisionPerformer,
    residual_block,
)
from oarseg.nn.module import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    LayerNorm,
    Linear,
    Module,
    ModuleList,
    Parameter,
)
