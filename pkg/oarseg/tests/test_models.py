"""
Tests for the segmentation architectures, checkpoints and parameter reports.
"""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from oarseg.models import (
    ARCHITECTURES,
    ModelSpec,
    build_model,
    comparison_report,
    count_params,
    load_checkpoint,
    param_breakdown,
    read_header,
    save_checkpoint,
)
from oarseg.nn.module import Conv2d, ConvTranspose2d
from oarseg.tensor.tensor import Tensor, no_grad
from oarseg.utils.errors import DimensionError, FileAccessError, NumericError, ValidationError


def _desk(arch, **overrides):
    return ModelSpec.from_preset(arch, "desk", **{"in_channels": 1, "num_classes": 4, **overrides})


# Test model specs
def test_spec_validation():
    """Test spec construction and validation."""
    spec = _desk("unet")
    assert spec.channels() == [16, 32, 64]
    assert spec.divisor == 8
    assert spec.name == "unet"
    assert ModelSpec.from_dict(spec.to_dict()) == spec

    with pytest.raises(ValidationError):
        ModelSpec("resnet")
    with pytest.raises(ValidationError):
        _desk("unet", width_base=4)
    with pytest.raises(ValidationError):
        _desk("unet", levels=1)
    with pytest.raises(ValidationError):
        _desk("unet", num_classes=1)
    with pytest.raises(ValidationError):
        ModelSpec.from_preset("unet", "laptop")

# Test forward contract
@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_forward_probs_contract(arch, rng):
    """Every architecture maps images to per-pixel class distributions."""
    model = build_model(_desk(arch), seed=0).eval()
    image = rng.standard_normal((2, 1, 32, 40)).astype(np.float32)
    probs = model.predict(image)
    assert probs.shape == (2, 4, 32, 40)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    np.testing.assert_array_equal(model.predict(image), probs)
    np.testing.assert_allclose(model.predict(image[::-1].copy()), probs[::-1], atol=1e-5)

def test_forward_pads_odd_extents(rng):
    """Extents that are not multiples of the divisor are padded and cropped back."""
    model = build_model(_desk("cunet"), seed=1).eval()
    assert model.predict(rng.standard_normal((1, 1, 35, 43)).astype(np.float32)).shape == (1, 4, 35, 43)

    with pytest.raises(DimensionError):
        model.predict(np.zeros((1, 1, 4, 16), dtype=np.float32))
    with pytest.raises(DimensionError):
        model.predict(np.zeros((1, 2, 16, 16), dtype=np.float32))

def test_numeric_error_names_layer(rng):
    """A non-finite activation is reported with the module path."""
    model = build_model(_desk("unet"), seed=0)
    weight = model.encoder[0].conv1.weight
    weight.data = np.full_like(weight.data, np.nan)
    with pytest.raises(NumericError) as err:
        model.predict(rng.standard_normal((1, 1, 16, 16)).astype(np.float32))
    assert "encoder.0" in err.value.layer

def test_build_determinism():
    """Equal seeds give byte-identical parameters."""
    a = build_model(_desk("msunetr"), seed=7).state_dict()
    b = build_model(_desk("msunetr"), seed=7).state_dict()
    c = build_model(_desk("msunetr"), seed=8).state_dict()
    assert list(a) == list(b)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)

@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_decoder_upsamples_bilinearly(arch):
    """Every architecture shares the parameter-free bilinear decoder path."""
    spec = _desk(arch)
    decoder = build_model(spec, seed=0).decoder
    names = [name for name, _ in decoder.named_parameters()]
    assert names
    assert all(name.split(".")[0] in ("blocks", "head") for name in names)
    assert not any(isinstance(m, ConvTranspose2d) for _, m in decoder.named_modules())
    assert len(decoder.blocks) == spec.levels

@pytest.mark.slow
@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_gradient_reaches_parameters(arch, rng):
    """Desk models at 96x96 pass gradient to nearly every parameter."""
    model = build_model(_desk(arch), seed=0)
    probs = model.forward_probs(Tensor(rng.standard_normal((1, 1, 96, 96))))
    assert probs.shape == (1, 4, 96, 96)
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-5)

    (probs * Tensor(rng.standard_normal(probs.shape))).sum().backward()
    total = dead = 0
    for _, p in model.named_parameters():
        total += p.size
        dead += p.size if p.grad is None else int(np.sum(p.grad == 0))
    assert dead / total < 0.05

# Test parameter counting
def test_count_params():
    """Test counts of single layers, width scaling and mode invariance."""
    assert count_params(Conv2d(1, 1, 3, np.random.default_rng(0))) == 10

    small = count_params(build_model(ModelSpec.from_preset("unet", "paper", width_base=24)))
    model = build_model(ModelSpec.from_preset("unet", "paper"))
    full = count_params(model)
    assert 0.24 < small / full < 0.26
    assert abs(full - 10_188_773) / 10_188_773 <= 0.15

    desk = build_model(_desk("swinconvnet"))
    before = count_params(desk)
    with no_grad():
        desk(Tensor(np.zeros((1, 1, 16, 16))))
    desk.eval()
    assert count_params(desk) == before
    assert sum(param_breakdown(desk).values()) == before

@pytest.mark.slow
def test_comparison_report_paper_scale():
    """The paper-scale report covers every architecture with deltas and notes."""
    report = comparison_report()
    assert list(report["arch"]) == list(ARCHITECTURES)
    assert report["published"].notna().all()
    assert report["note"].str.len().gt(0).all()
    unet = report.set_index("arch").loc["unet"]
    assert abs(unet["delta_pct"]) <= 15.0

def test_comparison_report_desk_scale():
    """Desk reports have no published counts to compare against."""
    report = comparison_report(["unet", "cunet"], "desk")
    assert list(report["arch"]) == ["unet", "cunet"]
    assert report["published"].isna().all()
    assert (report["measured"] > 0).all()

# Test checkpoints
def test_checkpoint_roundtrip(rng):
    """Test save/load reproduces predictions and keeps header extras."""
    model = build_model(_desk("decepticonv", name="dc_a"), seed=2)
    with no_grad():
        model(Tensor(rng.standard_normal((2, 1, 16, 16))))
    model.eval()
    image = rng.standard_normal((1, 1, 24, 24)).astype(np.float32)

    with tempfile.TemporaryDirectory() as temp_dir:
        ckpt = save_checkpoint(model, Path(temp_dir) / "ckpt", extra={"fold": 3, "classes": ["a", "b", "c"]})
        loaded, header = load_checkpoint(ckpt)
        assert header["fold"] == 3
        assert header["name"] == "dc_a"
        assert loaded.spec == model.spec
        assert not loaded.training
        np.testing.assert_allclose(loaded.predict(image), model.predict(image), atol=1e-6)

        entries = read_header(ckpt)["parameters"]
        assert [e["name"] for e in entries] == list(model.state_dict())
        assert entries[0]["offset"] == 0

def test_checkpoint_errors(rng):
    """Test missing, truncated and malformed checkpoints."""
    model = build_model(_desk("unet"), seed=0)
    with tempfile.TemporaryDirectory() as temp_dir:
        root = Path(temp_dir)
        with pytest.raises(FileAccessError) as err:
            load_checkpoint(root / "missing")
        assert err.value.error_code == "FILE_001"

        ckpt = save_checkpoint(model, root / "ckpt")
        payload = (ckpt / "model.bin").read_bytes()
        (ckpt / "model.bin").write_bytes(payload[:-4])
        with pytest.raises(FileAccessError) as err:
            load_checkpoint(ckpt)
        assert err.value.error_code == "FILE_002"

        (ckpt / "model.json").write_text("{not json")
        with pytest.raises(FileAccessError) as err:
            read_header(ckpt)
        assert err.value.error_code == "FILE_004"

        (ckpt / "model.json").write_text(json.dumps({"spec": {"arch": "unet"}}))
        with pytest.raises(FileAccessError):
            read_header(ckpt)
