"""
Attention kernels: exact softmax, Performer (positive orthogonal random
features) and shifted-window attention, plus the matching modules.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from oarseg.nn.module import Linear, Module
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor, get_dtype
from oarseg.utils.errors import DimensionError, NumericError, ValidationError

VARIANTS = ("exact", "performer", "window")

# Additive score for token pairs that must not attend to each other
MASK_VALUE = -1e9

# Added to every random feature; keeps the normalizer positive
FEATURE_STABILIZER = 1e-6


def default_heads(embed_dim: int, head_width: int = 32) -> int:
    """embed_dim / 32 heads (at least 1), reduced until it divides embed_dim."""
    heads = max(1, embed_dim // head_width)
    while embed_dim % heads:
        heads -= 1
    return heads


@dataclass
class AttentionConfig:
    """Attention hyperparameters.

    Attributes:
        embed_dim: Token width
        heads: Number of heads, must divide embed_dim
        variant: ``exact``, ``performer`` or ``window``
        window: Tile side in tokens (window variant only)
        shift: Cyclic shift applied before tiling (window variant only)
        random_features: Feature count m (performer variant only)
        seed: Seed of the random features
    """
    embed_dim: int
    heads: int
    variant: str = "exact"
    window: Optional[int] = None
    shift: Optional[int] = None
    random_features: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"Unknown attention variant: {self.variant}", "VAL_003")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValidationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}", "VAL_003"
            )
        if (self.window is not None) != (self.variant == "window"):
            raise ValidationError("window is required iff variant=window", "VAL_003")
        if self.variant == "window":
            if self.window < 1:
                raise ValidationError(f"window must be >= 1, got {self.window}", "VAL_003")
            shift = self.shift or 0
            if not 0 <= shift < self.window:
                raise ValidationError(f"shift must be in [0, window), got {shift}", "VAL_003")
        if self.variant == "performer":
            if self.random_features is None or self.random_features < 1:
                raise ValidationError("performer needs random_features >= 1", "VAL_003")
        elif self.random_features is not None:
            raise ValidationError("random_features only applies to the performer variant", "VAL_003")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


def _check_qkv(op: str, q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim != 4 or k.ndim != 4 or v.ndim != 4:
        raise DimensionError(op, "[B,heads,T,d] operands", (q.shape, k.shape, v.shape))
    if q.shape != k.shape or k.shape[:3] != v.shape[:3]:
        raise DimensionError(op, q.shape, (k.shape, v.shape))


def attention_exact(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over [B,heads,T,d].

    Args:
        mask: Optional additive scores broadcastable to [B,heads,T,T]
    """
    _check_qkv("attention_exact", q, k, v)
    scores = F.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + Tensor(mask)
    return F.matmul(F.softmax(scores, axis=-1), v)


# ----------------------------------------------------------------------
# Performer


def orthogonal_features(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """[m, d] Gaussian rows, orthogonal within each block of d, with chi-distributed norms."""
    blocks = []
    for _ in range(math.ceil(m / d)):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        blocks.append(q.T)
    matrix = np.vstack(blocks)[:m]
    norms = np.linalg.norm(rng.standard_normal((m, d)), axis=1)
    return norms[:, None] * matrix


def _softmax_features(x: Tensor, projection: Tensor, is_query: bool) -> Tensor:
    """Positive random features phi(x) = exp(w x - |x|^2/2 - stab) / sqrt(m)."""
    d = x.shape[-1]
    m = projection.shape[0]
    scaled = x * (d ** -0.25)
    dash = F.matmul(scaled, projection.T)  # [B,h,T,m]
    half_norm = (scaled * scaled).sum(axis=-1, keepdims=True) * 0.5
    # Stabilizers are constants; they cancel between numerator and normalizer
    if is_query:
        stab = dash.data.max(axis=-1, keepdims=True)
    else:
        stab = dash.data.max(axis=(-2, -1), keepdims=True)
    return ((dash - half_norm - Tensor(stab)).exp() + FEATURE_STABILIZER) * (1.0 / math.sqrt(m))


def attention_performer(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    random_features: int = 256,
    seed: int = 0,
    projection: Optional[np.ndarray] = None,
) -> Tensor:
    """Linear-cost estimate of softmax attention over [B,heads,T,d].

    Never materializes a T x T matrix. The estimate is written as the value
    mean plus weighted deviations from it, so a single token returns ``v``
    unchanged.

    Args:
        random_features: Feature count m
        seed: Seed for drawing the feature matrix when ``projection`` is None
        projection: Explicit [m, d] feature matrix

    Raises:
        NumericError: If the normalizer underflows or is not finite
    """
    _check_qkv("attention_performer", q, k, v)
    if random_features < 1:
        raise ValidationError("random_features must be >= 1", "VAL_003")
    if projection is None:
        projection = orthogonal_features(random_features, q.shape[-1], np.random.default_rng(seed))
    w = Tensor(projection.astype(get_dtype()))

    phi_q = _softmax_features(q, w, is_query=True)
    phi_k = _softmax_features(k, w, is_query=False)
    v_mean = v.mean(axis=-2, keepdims=True)
    kv = F.matmul(phi_k.swapaxes(-1, -2), v - v_mean)  # [B,h,m,d]
    numerator = F.matmul(phi_q, kv)
    normalizer = F.matmul(phi_q, phi_k.sum(axis=-2, keepdims=True).swapaxes(-1, -2))  # [B,h,T,1]
    if not np.all(normalizer.data > 0):
        raise NumericError("Performer normalizer underflow", "NUM_002", op="attention_performer")
    return v_mean + numerator / normalizer


# ----------------------------------------------------------------------
# Windows


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B,T,C] -> [B,heads,T,C/heads]"""
    b, t, c = x.shape
    return x.reshape(b, t, heads, c // heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    """[B,heads,T,d] -> [B,T,heads*d]"""
    b, h, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)


def shifted_window_mask(height: int, width: int, window: int, shift: int) -> np.ndarray:
    """[nW, T, T] additive mask separating regions that a cyclic shift made adjacent."""
    regions = np.zeros((height, width), dtype=np.int64)
    label = 0
    bounds = ((0, -window), (-window, -shift), (-shift, None))
    for hs in bounds:
        for ws in bounds:
            regions[slice(*hs), slice(*ws)] = label
            label += 1
    tiles = regions.reshape(height // window, window, width // window, window)
    tiles = tiles.transpose(0, 2, 1, 3).reshape(-1, window * window)
    same = tiles[:, :, None] == tiles[:, None, :]
    return np.where(same, 0.0, MASK_VALUE)


def window_attention(
    x: Tensor,
    cfg: AttentionConfig,
    project: Optional[Callable[[Tensor], Tuple[Tensor, Tensor, Tensor]]] = None,
) -> Tensor:
    """Exact attention restricted to window x window tiles of a [B,H,W,C] map.

    The map is zero-padded to a multiple of the window. With ``shift`` > 0 it
    is cyclically shifted by (-shift, -shift) before tiling and shifted back
    afterwards; token pairs that only became neighbours through the shift are
    masked out.

    Args:
        x: Token map
        cfg: Window configuration (variant ``window``)
        project: Maps window tokens [B',T,C] to (q, k, v) of shape [B',heads,T,d];
            identity projections split into heads when omitted

    Raises:
        DimensionError: If the window exceeds the padded map
    """
    if cfg.variant != "window":
        raise ValidationError("window_attention needs a window config", "VAL_003")
    if x.ndim != 4:
        raise DimensionError("window_attention", "[B,H,W,C]", x.shape)
    b, h, w, c = x.shape
    win, shift = cfg.window, cfg.shift or 0
    pad_h, pad_w = (-h) % win, (-w) % win
    hp, wp = h + pad_h, w + pad_w
    if win > hp or win > wp:
        raise DimensionError("window_attention", f"window <= {(hp, wp)}", win)

    if pad_h or pad_w:
        x = F.pad2d(x.transpose(0, 3, 1, 2), (0, pad_h, 0, pad_w)).transpose(0, 2, 3, 1)
    if shift:
        x = F.roll(x, (-shift, -shift), axis=(1, 2))

    nh, nw = hp // win, wp // win
    tokens = x.reshape(b, nh, win, nw, win, c).transpose(0, 1, 3, 2, 4, 5).reshape(b * nh * nw, win * win, c)
    if project is None:
        heads = cfg.heads
        q = k = v = split_heads(tokens, heads)
    else:
        q, k, v = project(tokens)

    mask = None
    if shift:
        mask = np.tile(shifted_window_mask(hp, wp, win, shift), (b, 1, 1))[:, None]
    out = merge_heads(attention_exact(q, k, v, mask))
    c_out = out.shape[-1]
    out = out.reshape(b, nh, nw, win, win, c_out).transpose(0, 1, 3, 2, 4, 5).reshape(b, hp, wp, c_out)

    if shift:
        out = F.roll(out, (shift, shift), axis=(1, 2))
    if pad_h or pad_w:
        out = out[:, :h, :w, :]
    return out


# ----------------------------------------------------------------------
# Modules


class MultiHeadAttention(Module):
    """QKV projection, one of the attention kernels, output projection.

    Operates on [B,T,C] tokens, or on [B,H,W,C] maps for the window variant.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.qkv = Linear(cfg.embed_dim, 3 * cfg.embed_dim, rng)
        self.proj = Linear(cfg.embed_dim, cfg.embed_dim, rng)
        self._draws = 0
        self._frozen: Optional[np.ndarray] = None

    def _project(self, tokens: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        b, t, c = tokens.shape
        heads = self.cfg.heads
        qkv = self.qkv(tokens).reshape(b, t, 3, heads, c // heads).transpose(2, 0, 3, 1, 4)
        return qkv[0], qkv[1], qkv[2]

    def feature_matrix(self) -> np.ndarray:
        """Performer features: frozen by seed in eval mode, redrawn per call in training."""
        m, d = self.cfg.random_features, self.cfg.head_dim
        if not self.training:
            if self._frozen is None:
                self._frozen = orthogonal_features(m, d, np.random.default_rng(self.cfg.seed))
            return self._frozen
        rng = np.random.default_rng([self.cfg.seed, self._draws])
        self._draws += 1
        return orthogonal_features(m, d, rng)

    def forward(self, x: Tensor, cfg: Optional[AttentionConfig] = None) -> Tensor:
        """Attend over ``x``; ``cfg`` overrides the window geometry for this call."""
        if self.cfg.variant == "window":
            return self.proj(window_attention(x, cfg or self.cfg, self._project))
        q, k, v = self._project(x)
        if self.cfg.variant == "performer":
            out = attention_performer(
                q, k, v, self.cfg.random_features, self.cfg.seed, projection=self.feature_matrix()
            )
        else:
            out = attention_exact(q, k, v)
        return self.proj(merge_heads(out))
