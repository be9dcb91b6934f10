"""
Tests for sliding-window inference, prediction sets and ensembling.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from oarseg.data.preprocessing import preprocess_case
from oarseg.inference.ensemble import EnsembleSpec, ensemble_average, enumerate_subsets, hard_labels
from oarseg.inference.predictions import (
    PredictionSet,
    member_name,
    predict_member,
    resolve_checkpoints,
    write_predictions,
)
from oarseg.inference.sliding_window import ProbabilityVolume, predict_slice, predict_volume, window_layout
from oarseg.models import ModelSpec, build_model, save_checkpoint
from oarseg.utils.errors import FileAccessError, ValidationError


class ConstantModel:
    """Returns the same class distribution for every pixel."""

    def __init__(self, dist):
        self.dist = np.asarray(dist, dtype=np.float64)

    def eval(self):
        return self

    def predict(self, windows):
        n, _, h, w = windows.shape
        return np.broadcast_to(self.dist[None, :, None, None], (n, len(self.dist), h, w)).copy()


class RecordingModel:
    """Random distributions, remembered in call order."""

    def __init__(self, classes, seed=0):
        self.classes = classes
        self.rng = np.random.default_rng(seed)
        self.outputs = []

    def eval(self):
        return self

    def predict(self, windows):
        n, _, h, w = windows.shape
        raw = self.rng.uniform(0.1, 1.0, (n, self.classes, h, w))
        out = raw / raw.sum(axis=1, keepdims=True)
        self.outputs.extend(out)
        return out


def _small_model(seed=0):
    spec = ModelSpec.from_preset("unet", "desk", in_channels=1, num_classes=3, width_base=8, levels=2, name="tiny")
    return build_model(spec, seed=seed).eval()


def _volume(probs, case_id="c0", classes=("a",)):
    return ProbabilityVolume(case_id, np.asarray(probs), list(classes))


# Test window layout
def test_window_layout_examples():
    """Test single, clamped and padded layouts."""
    assert window_layout(320, 320) == [(0,)]
    assert window_layout(480, 320, 0.5) == [(0,), (160,)]
    assert window_layout(500, 320, 0.5) == [(0,), (160,), (180,)]
    assert window_layout(100, 320) == [(0,)]
    assert window_layout((480, 320), 320) == [(0, 0), (160, 0)]
    with pytest.raises(ValidationError):
        window_layout(480, 320, 1.0)

def test_window_layout_covers_everything():
    """Every pixel of every extent is covered."""
    for patch in (128, 320):
        for extent in range(1, 601):
            covered = np.zeros(max(extent, patch), dtype=bool)
            for (origin,) in window_layout(extent, patch, 0.5):
                covered[origin:origin + patch] = True
            assert covered[:extent].all(), (extent, patch)

# Test sliding-window prediction
def test_predict_slice_constant():
    """A constant model is reproduced at every overlap."""
    dist = [0.2, 0.5, 0.3]
    image = np.zeros((1, 50, 37), dtype=np.float32)
    for overlap in (0.0, 0.5, 0.75):
        out = predict_slice(ConstantModel(dist), image, (16, 16), overlap)
        assert out.shape == (3, 50, 37)
        np.testing.assert_allclose(out, np.asarray(dist)[:, None, None], atol=1e-12)

def test_predict_slice_accumulation_oracle():
    """Overlaps hold the mean of every contributing window."""
    model = RecordingModel(2, seed=4)
    out = predict_slice(model, np.zeros((1, 24, 40), dtype=np.float32), (16, 16), 0.5, batch=3)

    total = np.zeros((2, 24, 40))
    count = np.zeros((24, 40))
    for (y, x), probs in zip(window_layout((24, 40), (16, 16), 0.5), model.outputs):
        total[:, y:y + 16, x:x + 16] += probs
        count[y:y + 16, x:x + 16] += 1
    np.testing.assert_allclose(out, total / count, atol=1e-10)

def test_predict_slice_single_window(rng):
    """A patch-sized slice equals one forward pass."""
    model = _small_model()
    image = rng.standard_normal((1, 16, 16)).astype(np.float32)
    np.testing.assert_allclose(predict_slice(model, image, (16, 16)), model.predict(image[None])[0], atol=1e-7)

def test_predict_volume_threads(phantoms):
    """Slice threads do not change the result and the simplex holds."""
    case = preprocess_case(phantoms[0], (1.5, 1.5, 1.5))
    model = _small_model()
    serial = predict_volume(model, case, (16, 16), 0.5)
    threaded = predict_volume(model, case, (16, 16), 0.5, workers=3)
    np.testing.assert_array_equal(serial.probs, threaded.probs)
    assert serial.shape == case.shape
    assert serial.simplex_error() < 1e-5
    assert serial.class_names == case.class_names

# Test probability volumes
def test_probability_volume_io(rng):
    """Test persistence and payload validation."""
    probs = rng.dirichlet(np.ones(3), (2, 4, 5)).transpose(3, 0, 1, 2)
    vol = _volume(probs, classes=("a", "b"))
    with tempfile.TemporaryDirectory() as temp_dir:
        out = vol.save(Path(temp_dir) / "c0")
        loaded = ProbabilityVolume.load(out)
        assert loaded.probs.tobytes() == vol.probs.tobytes()
        assert loaded.class_names == ["a", "b"]

        (out / "probs.raw").write_bytes((out / "probs.raw").read_bytes()[:-4])
        with pytest.raises(FileAccessError) as err:
            ProbabilityVolume.load(out)
        assert err.value.error_code == "FILE_002"
        with pytest.raises(FileAccessError):
            ProbabilityVolume.load(Path(temp_dir) / "missing")

    with pytest.raises(ValidationError):
        _volume(probs, classes=("a",))
    with pytest.raises(ValidationError):
        _volume(probs[0], classes=("a", "b"))

def test_prediction_set_roundtrip(rng):
    """Test the prediction index and per-case volumes."""
    volumes = {
        f"c{i}": (i % 2, _volume(rng.dirichlet(np.ones(2), (1, 3, 3)).transpose(3, 0, 1, 2), f"c{i}"))
        for i in range(3)
    }
    with tempfile.TemporaryDirectory() as temp_dir:
        pset = write_predictions(Path(temp_dir), "unet", ["a"], [1.0, 1.0, 1.0], volumes, members=["unet"])
        loaded = PredictionSet.load(Path(temp_dir))
        assert loaded.folds == {"c0": 0, "c1": 1, "c2": 0}
        assert loaded.members == ["unet"]
        assert [case_id for case_id, _, _ in loaded.items()] == ["c0", "c1", "c2"]
        np.testing.assert_array_equal(loaded.volume("c1").probs, pset.volume("c1").probs)
        with pytest.raises(ValidationError):
            loaded.volume("c9")
        with pytest.raises(FileAccessError):
            PredictionSet.load(Path(temp_dir) / "c0")

def test_predict_member(phantoms):
    """Each fold checkpoint predicts only the cases it held out."""
    spacing = [1.5, 1.5, 1.5]
    ids = [c.id for c in phantoms]
    with tempfile.TemporaryDirectory() as temp_dir:
        run = Path(temp_dir) / "run"
        for fold, val_ids in enumerate((ids[:2], ids[2:])):
            save_checkpoint(_small_model(seed=fold), run / f"fold_{fold}" / "final", {
                "name": "tiny", "fold": fold, "val_ids": val_ids,
                "target_spacing": spacing, "train_config": {"patch": [16, 16]},
            })
        assert len(resolve_checkpoints(run)) == 2
        assert member_name(run) == "tiny"

        name, used, results = predict_member(run, phantoms)
        assert name == "tiny"
        assert used == spacing
        assert sorted(results) == ids
        assert {case_id: fold for case_id, (fold, _) in results.items()} == {
            ids[0]: 0, ids[1]: 0, ids[2]: 1, ids[3]: 1
        }
        with pytest.raises(FileAccessError):
            resolve_checkpoints(Path(temp_dir))

# Test ensembling
def test_ensemble_examples(rng):
    """Test fixed points, equal weights and explicit weights."""
    probs = rng.dirichlet(np.ones(3), (2, 3, 3)).transpose(3, 0, 1, 2)
    vol = _volume(probs, classes=("a", "b"))
    same = ensemble_average([vol, vol, vol])
    np.testing.assert_array_equal(same.probs, vol.probs)
    np.testing.assert_array_equal(hard_labels(same), hard_labels(vol))
    np.testing.assert_array_equal(ensemble_average([vol]).probs, vol.probs)

    a = _volume(np.array([1.0, 0.0]).reshape(2, 1, 1, 1))
    b = _volume(np.array([0.0, 1.0]).reshape(2, 1, 1, 1))
    np.testing.assert_allclose(ensemble_average([a, b]).probs.ravel(), [0.5, 0.5])
    np.testing.assert_allclose(ensemble_average([a, b], [0.25, 0.75]).probs.ravel(), [0.25, 0.75])
    np.testing.assert_allclose(ensemble_average([b, a]).probs, ensemble_average([a, b]).probs)

def test_ensemble_errors(rng):
    """Test misaligned members and invalid weights."""
    a = _volume(np.full((2, 1, 2, 2), 0.5))
    with pytest.raises(ValidationError):
        ensemble_average([a, _volume(np.full((2, 1, 2, 3), 0.5))])
    with pytest.raises(ValidationError):
        ensemble_average([a, _volume(np.full((2, 1, 2, 2), 0.5), classes=("z",))])
    with pytest.raises(ValidationError):
        ensemble_average([a, a], [1.0, -1.0])
    with pytest.raises(ValidationError):
        ensemble_average([])

def test_enumerate_subsets():
    """Test subset counts and ordering."""
    assert len(enumerate_subsets([f"m{i}" for i in range(7)], 2)) == 120
    assert [s.members for s in enumerate_subsets(["A", "B", "C"], 2)] == [
        ["A", "B"], ["A", "C"], ["B", "C"], ["A", "B", "C"]
    ]
    assert len(enumerate_subsets(["A", "B", "C", "D"], 1)) == 15
    with pytest.raises(ValidationError):
        enumerate_subsets(["A"], 0)

def test_ensemble_spec(tmp_path):
    """Test labels, weight normalization and persistence."""
    spec = EnsembleSpec(["runs/unet", "runs/msunetr"], [1.0, 3.0])
    assert spec.label == "unet+msunetr"
    assert spec.normalized_weights() == [0.25, 0.75]
    loaded = EnsembleSpec.load(spec.save(tmp_path))
    assert loaded.members == spec.members
    assert loaded.weights == [0.25, 0.75]
    with pytest.raises(ValidationError):
        EnsembleSpec(["a", "b"], [1.0])
    with pytest.raises(ValidationError):
        EnsembleSpec([])

def test_hard_labels(rng):
    """Test one-hot voxels, ties and an argmax oracle."""
    tie = _volume(np.array([0.5, 0.5]).reshape(2, 1, 1, 1))
    assert hard_labels(tie)[0, 0, 0] == 0
    probs = rng.dirichlet(np.ones(4), (2, 3, 3)).transpose(3, 0, 1, 2)
    labels = hard_labels(_volume(probs, classes=("a", "b", "c")))
    for z, y, x in np.ndindex(2, 3, 3):
        column = list(probs[:, z, y, x].astype(np.float32))
        assert labels[z, y, x] == column.index(max(column))
