"""
Differentiable operations on ``Tensor``.

All kernels are plain numpy; every function returns a new tensor recorded in
the graph through ``Tensor.from_op``.
"""

import math
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from oarseg.tensor.tensor import Tensor, as_tensor, get_dtype, unbroadcast
from oarseg.utils.errors import DimensionError, ValidationError, check_shape

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ----------------------------------------------------------------------
# convolution


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: str = "same",
) -> Tensor:
    """2D cross-correlation of ``x`` [N,Cin,H,W] with ``weight`` [Cout,Cin,kh,kw].

    Args:
        x: Input batch
        weight: Kernel
        bias: Optional per-output-channel offset
        stride: Step between output samples
        dilation: Spacing between kernel taps
        padding: ``same`` (zero padding, requires odd kernels) or ``valid``

    Returns:
        Tensor [N,Cout,H',W'] with H' = (H + 2p - dilation*(kh-1) - 1) // stride + 1

    Raises:
        DimensionError: On channel mismatch
        ValidationError: On invalid stride, dilation or padding
    """
    check_shape("conv2d", x.shape, 4)
    check_shape("conv2d", weight.shape, 4)
    n, c_in, h, w = x.shape
    c_out, k_in, kh, kw = weight.shape
    if c_in != k_in:
        raise DimensionError("conv2d", f"Cin={k_in}", f"Cin={c_in}")
    if stride < 1 or dilation < 1:
        raise ValidationError(f"conv2d needs stride, dilation >= 1 (got {stride}, {dilation})", "VAL_003")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValidationError("conv2d same padding needs odd kernels", "VAL_003")
        ph, pw = dilation * (kh - 1) // 2, dilation * (kw - 1) // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValidationError(f"Unknown padding: {padding}", "VAL_003")

    h_out = (h + 2 * ph - dilation * (kh - 1) - 1) // stride + 1
    w_out = (w + 2 * pw - dilation * (kw - 1) - 1) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError("conv2d", "positive output extent", (h_out, w_out))

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    taps = [(i * dilation, j * dilation) for i in range(kh) for j in range(kw)]

    def tap_slice(di: int, dj: int):
        return (
            slice(None),
            slice(None),
            slice(di, di + stride * (h_out - 1) + 1, stride),
            slice(dj, dj + stride * (w_out - 1) + 1, stride),
        )

    # im2col: [N, Cin*kh*kw, H'*W'] with channel-major, tap-minor rows to match the kernel layout
    cols = np.stack([xp[tap_slice(di, dj)] for di, dj in taps], axis=2)
    cols = cols.reshape(n, c_in * kh * kw, h_out * w_out)
    w_mat = weight.data.reshape(c_out, c_in * kh * kw)
    out = np.matmul(w_mat, cols).reshape(n, c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray):
        g_flat = g.reshape(n, c_out, h_out * w_out)
        g_weight = np.tensordot(g_flat, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        g_x = None
        if x.requires_grad:
            g_cols = np.matmul(w_mat.T, g_flat).reshape(n, c_in, kh * kw, h_out, w_out)
            g_xp = np.zeros_like(xp)
            for t, (di, dj) in enumerate(taps):
                g_xp[tap_slice(di, dj)] += g_cols[:, :, t]
            g_x = g_xp[:, :, ph:ph + h, pw:pw + w]
        if bias is None:
            return g_x, g_weight
        return g_x, g_weight, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Transposed convolution with kernel size equal to stride.

    ``weight`` is [Cin, Cout, k, k]; each input pixel expands into a k x k tile.
    """
    check_shape("conv_transpose2d", x.shape, 4)
    n, c_in, h, w = x.shape
    k_in, c_out, k, k2 = weight.shape
    if c_in != k_in:
        raise DimensionError("conv_transpose2d", f"Cin={k_in}", f"Cin={c_in}")
    if k != k2:
        raise ValidationError("conv_transpose2d needs square kernels", "VAL_003")

    y = np.tensordot(x.data, weight.data, axes=([1], [0]))  # [N,H,W,Cout,k,k]
    out = y.transpose(0, 3, 1, 4, 2, 5).reshape(n, c_out, h * k, w * k)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray):
        g_tiles = g.reshape(n, c_out, h, k, w, k).transpose(0, 2, 4, 1, 3, 5)  # [N,H,W,Cout,k,k]
        g_x = np.tensordot(g_tiles, weight.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        g_w = np.tensordot(x.data, g_tiles, axes=([0, 2, 3], [0, 1, 2]))
        if bias is None:
            return g_x, g_w
        return g_x, g_w, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, backward, "conv_transpose2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first maximum."""
    check_shape("max_pool2d", x.shape, 4)
    n, c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError("max_pool2d", f"extents divisible by {size}", (h, w))
    ho, wo = h // size, w // size
    windows = x.data.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, ho, wo, size * size)
    idx = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        g_win = np.zeros((n, c, ho, wo, size * size), dtype=g.dtype)
        np.put_along_axis(g_win, idx, g[..., None], axis=-1)
        g_win = g_win.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        return (g_win.reshape(n, c, h, w),)

    return Tensor.from_op(out, (x,), backward, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,C]"""
    return x.mean(axis=(2, 3))


# ----------------------------------------------------------------------
# resampling


@lru_cache(maxsize=128)
def _interp_matrix_cached(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    mat = mat.astype(dtype_name)
    mat.setflags(write=False)
    return mat


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-center linear interpolation weights, shape [n_out, n_in]."""
    return _interp_matrix_cached(n_in, n_out, np.dtype(get_dtype()).name)


def resize_bilinear(x: Tensor, size: Tuple[int, int]) -> Tensor:
    """Bilinear resize of the last two axes to ``size`` (align_corners=False)."""
    if x.ndim < 2:
        raise DimensionError("resize_bilinear", ">=2-D", x.shape)
    h, w = x.shape[-2:]
    out_h, out_w = size
    if (out_h, out_w) == (h, w):
        return x
    rows = interp_matrix(h, out_h)
    cols = interp_matrix(w, out_w)
    out = np.matmul(np.matmul(rows, x.data), cols.T)

    def backward(g: np.ndarray):
        return (np.matmul(np.matmul(rows.T, g), cols),)

    return Tensor.from_op(out, (x,), backward, "resize_bilinear")


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Upsample [N,C,H,W] by an integer factor with bilinear interpolation."""
    check_shape("bilinear_upsample", x.shape, 4)
    if factor < 2:
        raise ValidationError(f"Upsampling factor must be >= 2, got {factor}", "VAL_003")
    h, w = x.shape[-2:]
    return resize_bilinear(x, (h * factor, w * factor))


# ----------------------------------------------------------------------
# activations


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g: np.ndarray):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor.from_op(out, (x,), backward, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    data = x.data
    out = np.empty_like(data)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    e = np.exp(data[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g: np.ndarray):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (x,), backward, "sigmoid")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward, "softmax")


# ----------------------------------------------------------------------
# normalization

_NORM_AXES = {
    "batch": lambda ndim: (0,) + tuple(range(2, ndim)),
    "instance": lambda ndim: tuple(range(2, ndim)),
    "layer": lambda ndim: (ndim - 1,),
}


def _param_axis(mode: str, ndim: int) -> int:
    return ndim - 1 if mode == "layer" else 1


def norm_moments(x: np.ndarray, mode: str) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and population variance over the reduction axes of ``mode``."""
    axes = _NORM_AXES[mode](x.ndim)
    return x.mean(axis=axes, keepdims=True), x.var(axis=axes, keepdims=True)


def normalize(
    x: Tensor,
    mode: str,
    gain: Tensor,
    offset: Tensor,
    eps: float = 1e-5,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Tensor:
    """Standardize ``x`` over the axes of ``mode`` and apply a per-feature affine.

    Args:
        x: Input; [N,C,...] for ``batch``/``instance``, [..., F] for ``layer``
        mode: ``batch``, ``layer`` or ``instance``
        gain: Scale per normalized feature (C or F)
        offset: Shift per normalized feature
        eps: Variance floor, must be positive
        stats: Fixed (mean, var) per feature; no gradient flows through them

    Raises:
        ValidationError: If ``eps`` <= 0 or the mode is unknown
        DimensionError: If gain/offset do not match the feature extent
    """
    if eps <= 0:
        raise ValidationError(f"normalize needs eps > 0, got {eps}", "VAL_003")
    if mode not in _NORM_AXES:
        raise ValidationError(f"Unknown normalization mode: {mode}", "VAL_003")
    min_ndim = 1 if mode == "layer" else 2
    if x.ndim < min_ndim or (mode == "instance" and x.ndim < 3):
        raise DimensionError("normalize", f"input for {mode} mode", x.shape)

    axes = _NORM_AXES[mode](x.ndim)
    p_axis = _param_axis(mode, x.ndim)
    features = x.shape[p_axis]
    for name, t in (("gain", gain), ("offset", offset)):
        if t.shape != (features,):
            raise DimensionError("normalize", f"{name} shape {(features,)}", t.shape)

    param_shape = [1] * x.ndim
    param_shape[p_axis] = features
    gain_b = gain.data.reshape(param_shape)
    offset_b = offset.data.reshape(param_shape)
    other_axes = tuple(a for a in range(x.ndim) if a != p_axis)

    if stats is None:
        mean, var = norm_moments(x.data, mode)
    else:
        mean = np.asarray(stats[0], dtype=x.data.dtype).reshape(param_shape)
        var = np.asarray(stats[1], dtype=x.data.dtype).reshape(param_shape)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * rstd
    out = xhat * gain_b + offset_b

    def backward(g: np.ndarray):
        g_gain = (g * xhat).sum(axis=other_axes)
        g_offset = g.sum(axis=other_axes)
        dxhat = g * gain_b
        if stats is None:
            g_x = rstd * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            g_x = dxhat * rstd
        return g_x, g_gain, g_offset

    return Tensor.from_op(out, (x, gain, offset), backward, "normalize")


# ----------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul", ">=2-D operands", (a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", f"inner extent {a.shape[-1]}", b.shape[-2])
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError("matmul", "broadcastable batch extents", (a.shape, b.shape))

    def backward(g: np.ndarray):
        g_a = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        g_b = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return g_a, g_b

    return Tensor.from_op(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight.T + bias, with ``weight`` stored as [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError("linear", f"in_features={weight.shape[1]}", x.shape[-1])
    out = matmul(x, weight.T) if x.ndim >= 2 else matmul(x.reshape(1, -1), weight.T).reshape(-1)
    return out + bias if bias is not None else out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def pad2d(x: Tensor, pad: Tuple[int, int, int, int]) -> Tensor:
    """Zero-pad the last two axes by (top, bottom, left, right)."""
    top, bottom, left, right = pad
    if not any(pad):
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    h, w = x.shape[-2:]

    def backward(g: np.ndarray):
        return (g[..., top:top + h, left:left + w],)

    return Tensor.from_op(np.pad(x.data, width), (x,), backward, "pad2d")


def roll(x: Tensor, shift: Union[int, Tuple[int, ...]], axis: Union[int, Tuple[int, ...]]) -> Tensor:
    """Cyclic shift (numpy ``roll`` semantics)."""
    neg = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift

    def backward(g: np.ndarray):
        return (np.roll(g, neg, axis=axis),)

    return Tensor.from_op(np.roll(x.data, shift, axis=axis), (x,), backward, "roll")

