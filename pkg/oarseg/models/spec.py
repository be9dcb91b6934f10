"""
Architecture specification.
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

from oarseg.utils.errors import ValidationError

ARCHITECTURES = ("unet", "cunet", "unetr", "swin_unetr", "msunetr", "decepticonv", "swinconvnet")

# Scale presets: every hyperparameter a spec derives when not given explicitly
SCALE_PRESETS: Dict[str, Dict[str, Any]] = {
    "paper": {
        "width_base": 48,
        "levels": 4,
        "img_size": 320,
        "unetr_embed": 768,
        "unetr_depth": 12,
    },
    "desk": {
        "width_base": 16,
        "levels": 3,
        "img_size": 64,
        "unetr_embed": 96,
        "unetr_depth": 6,
    },
}


@dataclass
class ModelSpec:
    """Architecture identifier plus the hyperparameters that fix its parameter set.

    Attributes:
        arch: One of ``ARCHITECTURES``
        in_channels: Image channels (1 for CT, 4 for multi-sequence MRI)
        num_classes: Background plus organs
        width_base: Channels of the first level; level j has width_base * 2**j
        levels: Encoder downsamplings
        scale_preset: ``paper`` or ``desk``
        img_size: Grid on which learned position embeddings are defined
        performer_features: Random features per Performer head
        window: Window side of shifted-window attention
        se_reduction: Squeeze-excitation bottleneck ratio
        unetr_embed: Transformer width of UNETR
        unetr_depth: Transformer layers of UNETR
        swin_depth: Swin blocks per stage
        seed: Seed for the Performer feature draws
        name: Free-form label; repeated trainings of one architecture differ by name
    """
    arch: str
    in_channels: int = 1
    num_classes: int = 5
    width_base: int = 48
    levels: int = 4
    scale_preset: str = "paper"
    img_size: int = 320
    performer_features: int = 256
    window: int = 4
    se_reduction: int = 8
    unetr_embed: int = 768
    unetr_depth: int = 12
    swin_depth: int = 2
    seed: int = 0
    name: Optional[str] = None

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValidationError(f"Unknown architecture: {self.arch}", "VAL_003")
        if self.scale_preset not in SCALE_PRESETS:
            raise ValidationError(f"Unknown scale preset: {self.scale_preset}", "VAL_003")
        if self.width_base < 8:
            raise ValidationError(f"width_base must be >= 8, got {self.width_base}", "VAL_003")
        if self.levels < 2:
            raise ValidationError(f"levels must be >= 2, got {self.levels}", "VAL_003")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}", "VAL_003")
        if self.in_channels < 1:
            raise ValidationError(f"in_channels must be >= 1, got {self.in_channels}", "VAL_003")
        if self.img_size % self.divisor:
            raise ValidationError(
                f"img_size {self.img_size} not divisible by {self.divisor}", "VAL_003"
            )
        if self.name is None:
            self.name = self.arch

    @classmethod
    def from_preset(cls, arch: str, scale_preset: str = "paper", **overrides) -> "ModelSpec":
        """Spec with every scale-dependent field taken from ``SCALE_PRESETS``."""
        if scale_preset not in SCALE_PRESETS:
            raise ValidationError(f"Unknown scale preset: {scale_preset}", "VAL_003")
        values = dict(SCALE_PRESETS[scale_preset])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(arch=arch, scale_preset=scale_preset, **values)

    @property
    def divisor(self) -> int:
        """Input extents are padded to a multiple of this."""
        return 2 ** self.levels

    @property
    def unetr_patch(self) -> int:
        return 2 ** self.levels

    def channels(self) -> List[int]:
        """Encoder channel plan, one entry per level."""
        return [self.width_base * 2 ** j for j in range(self.levels)]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ModelSpec":
        known = {k: v for k, v in payload.items() if k in cls.__dataclass_fields__}
        missing = [k for k in ("arch",) if k not in known]
        if missing:
            raise ValidationError(f"Model spec missing fields: {missing}", "VAL_002")
        return cls(**known)
