"""
Tests for attention kernels, layers and blocks.
"""

import math
import time

import numpy as np
import pytest

from oarseg.nn.attention import (
    AttentionConfig,
    MultiHeadAttention,
    attention_exact,
    attention_performer,
    default_heads,
    orthogonal_features,
    window_attention,
)
from oarseg.nn.blocks import ASPP, PatchEmbed, SEBlock, residual_block
from oarseg.nn.module import Linear, is_no_decay
from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor, no_grad
from oarseg.utils.errors import ValidationError
from oarseg.verify import run_suite


def _exact_oracle(q, k, v):
    """Scalar triple loop over [T,d] arrays."""
    t, d = q.shape
    out = np.zeros_like(v)
    for i in range(t):
        scores = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(t)]
        top = max(scores)
        weights = [math.exp(s - top) for s in scores]
        total = sum(weights)
        for j in range(t):
            out[i] += weights[j] / total * v[j]
    return out


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# Test exact attention
def test_attention_exact_examples(float64, rng):
    """Test single-token, uniform and oracle cases."""
    v = rng.standard_normal((1, 1, 1, 8))
    out = attention_exact(Tensor(rng.standard_normal((1, 1, 1, 8))), Tensor(rng.standard_normal((1, 1, 1, 8))), Tensor(v))
    np.testing.assert_array_equal(out.data, v)

    v = rng.standard_normal((1, 1, 4, 3))
    out = attention_exact(Tensor(np.zeros((1, 1, 4, 3))), Tensor(rng.standard_normal((1, 1, 4, 3))), Tensor(v))
    np.testing.assert_allclose(out.data[0, 0], np.tile(v[0, 0].mean(axis=0), (4, 1)), atol=1e-12)

    q, k, v = (rng.standard_normal((4, 8)) for _ in range(3))
    out = attention_exact(Tensor(q[None, None]), Tensor(k[None, None]), Tensor(v[None, None]))
    np.testing.assert_allclose(out.data[0, 0], _exact_oracle(q, k, v), atol=1e-10)

def test_attention_exact_convex(float64, rng):
    """Output rows stay inside the per-dimension envelope of v."""
    v = rng.standard_normal((2, 2, 6, 4))
    out = attention_exact(Tensor(rng.standard_normal((2, 2, 6, 4))), Tensor(rng.standard_normal((2, 2, 6, 4))), Tensor(v)).data
    assert np.all(out <= v.max(axis=2, keepdims=True) + 1e-12)
    assert np.all(out >= v.min(axis=2, keepdims=True) - 1e-12)

# Test Performer attention
def test_performer_single_token(float64, rng):
    """One token returns v bit for bit for any feature count."""
    v = rng.standard_normal((1, 2, 1, 8))
    for m in (1, 16, 256):
        out = attention_performer(Tensor(rng.standard_normal((1, 2, 1, 8))), Tensor(rng.standard_normal((1, 2, 1, 8))), Tensor(v), m, seed=m)
        np.testing.assert_array_equal(out.data, v)

def _performer_error(seed: int, m: int) -> float:
    data = np.random.default_rng(1000 + seed)
    q = _unit_rows(data.standard_normal((1, 1, 16, 8)))
    k = _unit_rows(data.standard_normal((1, 1, 16, 8)))
    v = data.standard_normal((1, 1, 16, 8))
    exact = attention_exact(Tensor(q), Tensor(k), Tensor(v)).data
    approx = attention_performer(Tensor(q), Tensor(k), Tensor(v), m, seed=seed).data
    return float(np.linalg.norm(approx - exact) / np.linalg.norm(exact))

def test_performer_fidelity(float64):
    """Median relative error below 10% at m=256, shrinking with more features."""
    errors = {m: np.median([_performer_error(seed, m) for seed in range(20)]) for m in (32, 256, 512)}
    assert errors[256] < 0.1
    assert errors[512] <= errors[32]

def test_orthogonal_features(rng):
    """Rows within a block of d are mutually orthogonal."""
    w = orthogonal_features(8, 8, rng)
    gram = w @ w.T
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-10)
    assert orthogonal_features(20, 8, rng).shape == (20, 8)

@pytest.mark.slow
def test_performer_scaling(float64, rng):
    """Per-token performer cost stays within 1.5x as T doubles; exact attention at least triples."""
    def best_time(fn, repeats=3):
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            times.append(time.perf_counter() - start)
        return min(times)

    d, m = 32, 64
    projection = orthogonal_features(m, d, rng)
    timings = {}
    with no_grad():
        for t in (1024, 2048, 4096):
            q, k, v = (Tensor(rng.standard_normal((1, 1, t, d)) * 0.3) for _ in range(3))
            timings[("performer", t)] = best_time(lambda: attention_performer(q, k, v, projection=projection))
            if t <= 2048:
                timings[("exact", t)] = best_time(lambda: attention_exact(q, k, v))
    assert timings[("performer", 4096)] / 4096 <= 1.5 * timings[("performer", 2048)] / 2048
    assert timings[("performer", 2048)] / timings[("performer", 1024)] <= timings[("exact", 2048)] / timings[("exact", 1024)]
    assert timings[("exact", 2048)] >= 3.0 * timings[("exact", 1024)]

# Test window attention
def test_window_single_window_is_global(float64, rng):
    """A window covering the whole map equals exact attention."""
    x = rng.standard_normal((1, 4, 4, 6))
    out = window_attention(Tensor(x), AttentionConfig(6, 1, "window", window=4, shift=0)).data
    flat = x.reshape(1, 1, 16, 6)
    ref = attention_exact(Tensor(flat), Tensor(flat), Tensor(flat)).data.reshape(1, 4, 4, 6)
    np.testing.assert_allclose(out, ref, atol=1e-10)

def test_window_locality_and_shift(float64, rng):
    """Unshifted tiles are independent; a shift couples them."""
    cfg = AttentionConfig(4, 1, "window", window=2, shift=0)
    x = rng.standard_normal((1, 4, 4, 4))
    base = window_attention(Tensor(x), cfg).data
    bumped = x.copy()
    bumped[0, 0, 0] += 1.0
    out = window_attention(Tensor(bumped), cfg).data
    np.testing.assert_allclose(out[0, 2:, 2:], base[0, 2:, 2:], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[0, :2, 2:], base[0, :2, 2:], rtol=0, atol=1e-12)

    shifted = window_attention(Tensor(x), AttentionConfig(4, 1, "window", window=2, shift=1)).data
    assert not np.allclose(shifted, base)

def test_window_padding(float64, rng):
    """Maps that are not a multiple of the window keep their extent."""
    out = window_attention(Tensor(rng.standard_normal((2, 5, 3, 4))), AttentionConfig(4, 2, "window", window=2, shift=1))
    assert out.shape == (2, 5, 3, 4)

def test_attention_config_validation():
    """Test configuration errors."""
    assert default_heads(96) == 3
    assert default_heads(16) == 1
    with pytest.raises(ValidationError):
        AttentionConfig(10, 3)
    with pytest.raises(ValidationError):
        AttentionConfig(8, 1, "window")
    with pytest.raises(ValidationError):
        AttentionConfig(8, 1, "window", window=2, shift=2)
    with pytest.raises(ValidationError):
        AttentionConfig(8, 1, "performer")
    with pytest.raises(ValidationError):
        AttentionConfig(8, 1, "sparse")

def test_performer_feature_redraw(float64, rng):
    """Features are redrawn per call in training and frozen in eval mode."""
    mha = MultiHeadAttention(AttentionConfig(8, 2, "performer", random_features=16, seed=5), rng)
    x = Tensor(rng.standard_normal((1, 6, 8)))
    with no_grad():
        assert not np.allclose(mha(x).data, mha(x).data)
        mha.eval()
        np.testing.assert_array_equal(mha(x).data, mha(x).data)

# Test blocks
def test_patch_embed(float64, rng):
    """Test sequence lengths and linearity."""
    embed = PatchEmbed(2, 2, 6, 8, rng)
    assert embed(Tensor(rng.standard_normal((1, 2, 8, 8)))).shape == (1, 16, 6)
    assert PatchEmbed(1, 4, 6, 4, rng)(Tensor(np.ones((1, 1, 4, 4)))).shape == (1, 1, 6)

    embed.pos.data = np.zeros_like(embed.pos.data)
    embed.proj.bias.data = np.zeros_like(embed.proj.bias.data)
    np.testing.assert_array_equal(embed(Tensor(np.zeros((1, 2, 8, 8)))).data, 0.0)

    # Other grids get a resized copy of the position embedding
    assert embed(Tensor(rng.standard_normal((1, 2, 12, 4)))).shape == (1, 12, 6)

def test_se_block(float64, rng):
    """Test forced gates and the per-channel oracle."""
    se = SEBlock(8, 4, rng)
    x = rng.standard_normal((2, 8, 3, 3))

    se.excite.weight.data = np.zeros_like(se.excite.weight.data)
    se.excite.bias.data = np.full(8, 40.0)
    np.testing.assert_array_equal(se(Tensor(x)).data, x)
    se.excite.bias.data = np.full(8, -100.0)
    np.testing.assert_allclose(se(Tensor(x)).data, 0.0, atol=1e-30)

    se = SEBlock(8, 4, rng)
    w1, b1 = se.squeeze.weight.data, se.squeeze.bias.data
    w2, b2 = se.excite.weight.data + 0.1, se.excite.bias.data + 0.2
    se.excite.weight.data, se.excite.bias.data = w2, b2
    expected = np.zeros_like(x)
    for n in range(2):
        pooled = [x[n, c].mean() for c in range(8)]
        hidden = []
        for j in range(2):
            z = sum(w1[j, c] * pooled[c] for c in range(8)) + b1[j]
            hidden.append(0.5 * z * (1.0 + math.erf(z / math.sqrt(2.0))))
        for c in range(8):
            z = sum(w2[c, j] * hidden[j] for j in range(2)) + b2[c]
            expected[n, c] = x[n, c] / (1.0 + math.exp(-z))
    np.testing.assert_allclose(se(Tensor(x)).data, expected, atol=1e-10)

    with pytest.raises(ValidationError):
        SEBlock(6, 4, rng)

def test_aspp(float64, rng):
    """Test zero response, channel contract and parameter arithmetic."""
    aspp = ASPP(3, 5, rng)
    np.testing.assert_array_equal(aspp(Tensor(np.zeros((1, 3, 6, 6)))).data, 0.0)
    assert aspp(Tensor(rng.standard_normal((2, 3, 6, 6)))).shape == (2, 5, 6, 6)
    assert ASPP(384, 384, rng).num_parameters() == 5_898_624

def test_residual_block(float64, rng):
    """Zero convolutions leave only the shortcut."""
    block = residual_block(4, 4, rng)
    for conv in (block.conv1, block.conv2):
        conv.weight.data = np.zeros_like(conv.weight.data)
    x = rng.standard_normal((2, 4, 5, 5))
    np.testing.assert_allclose(block(Tensor(x)).data, F.gelu(Tensor(x)).data, atol=1e-12)

    wide = residual_block(48, 96, rng)
    assert wide(Tensor(rng.standard_normal((1, 48, 16, 16)))).shape == (1, 96, 16, 16)

# Test modules
def test_state_dict_roundtrip(float64, rng):
    """Test parameter and buffer transfer between modules."""
    a, b = residual_block(2, 3, rng), residual_block(2, 3, rng)
    a(Tensor(rng.standard_normal((2, 2, 4, 4))))
    b.load_state_dict(a.state_dict())
    a.eval()
    b.eval()
    x = Tensor(rng.standard_normal((1, 2, 4, 4)))
    np.testing.assert_array_equal(a(x).data, b(x).data)

    state = a.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(ValidationError):
        b.load_state_dict(state)

def test_no_decay_names(rng):
    """Biases and normalization affine terms skip weight decay."""
    assert is_no_decay("encoder.0.norm1.gain")
    assert is_no_decay("head.bias")
    assert not is_no_decay("head.weight")
    assert [n for n, _ in Linear(2, 2, rng).named_parameters()] == ["weight", "bias"]

# Test gradient suite
def test_gradient_suite_subset():
    """Representative checks of the verification suite pass."""
    names = ["conv2d_dilated", "softmax", "window_attention_shifted", "SEBlock", "ResidualBlock"]
    reports = run_suite(names=names)
    assert sorted(r.name for r in reports) == sorted(names)
    assert all(r.passed for r in reports), [str(r) for r in reports if not r.passed]

def test_gradient_suite_full():
    """Every operation and block passes at 1e-4 in 64-bit."""
    reports = run_suite()
    assert len(reports) > 40
    assert all(r.passed for r in reports), [str(r) for r in reports if not r.passed]
