"""
Tests for case IO, phantoms, preprocessing, augmentation, sampling and folds.
"""

import json

import numpy as np
import pytest

from oarseg.data.augment import AugmentPolicy, augment, flip_horizontal, no_augmentation, rotate_scale
from oarseg.data.case import PatientCase, read_case, read_dataset, write_case, write_dataset
from oarseg.data.folds import FoldSplit, make_folds
from oarseg.data.preprocessing import crop_nonzero, median_spacing, preprocess_case, resample, zscore
from oarseg.data.sampling import PatchLoader, sample_patch
from oarseg.data.synth import class_histogram, synth_generate
from oarseg.utils.errors import FileAccessError, ValidationError


def _case(image, mask=None, spacing=(1.0, 1.0, 1.0), classes=("organ",), case_id="c0"):
    image = np.asarray(image, dtype=np.float32)
    if mask is None:
        mask = np.zeros(image.shape[-3:], dtype=np.uint8)
    return PatientCase(case_id, image, spacing, mask, list(classes))


# Test case IO
def test_case_roundtrip(tmp_path, phantoms):
    """Test lossless write/read of a case."""
    case = phantoms[0]
    loaded = read_case(write_case(case, tmp_path / case.id))
    assert loaded.id == case.id
    assert loaded.spacing == case.spacing
    assert loaded.class_names == case.class_names
    assert loaded.image.tobytes() == case.image.tobytes()
    assert loaded.mask.tobytes() == case.mask.tobytes()

def test_case_io_errors(tmp_path, phantoms):
    """Test truncated payloads, unknown dtypes and out-of-range labels."""
    case_dir = write_case(phantoms[0], tmp_path / "case")
    expected = phantoms[0].image.nbytes

    raw = (case_dir / "image.raw").read_bytes()
    (case_dir / "image.raw").write_bytes(raw[:-8])
    with pytest.raises(FileAccessError) as err:
        read_case(case_dir)
    assert err.value.error_code == "FILE_002"
    assert str(expected) in str(err.value)
    assert str(expected - 8) in str(err.value)
    (case_dir / "image.raw").write_bytes(raw)

    header = json.loads((case_dir / "case.json").read_text())
    (case_dir / "case.json").write_text(json.dumps(dict(header, mask_dtype="u16")))
    with pytest.raises(FileAccessError) as err:
        read_case(case_dir)
    assert err.value.error_code == "FILE_003"

    (case_dir / "case.json").write_text(json.dumps(dict(header, classes=[])))
    with pytest.raises(ValidationError) as err:
        read_case(case_dir)
    assert err.value.error_code == "VAL_005"

    with pytest.raises(FileAccessError):
        read_case(tmp_path / "missing")

def test_case_validation():
    """Test grid, spacing and label invariants."""
    with pytest.raises(ValidationError):
        _case(np.ones((2, 3, 3)), mask=np.zeros((2, 3, 4)))
    with pytest.raises(ValidationError):
        _case(np.ones((2, 3, 3)), spacing=(1.0, 0.0, 1.0))
    with pytest.raises(ValidationError):
        _case(np.ones((2, 3, 3)), mask=np.full((2, 3, 3), 2))
    assert _case(np.ones((4, 2, 3, 3))).channels == 4

def test_dataset_roundtrip(tmp_path, phantoms):
    """Test dataset index, subsets and unknown ids."""
    root = write_dataset(phantoms, tmp_path / "data")
    assert [c.id for c in read_dataset(root)] == [c.id for c in phantoms]
    assert [c.id for c in read_dataset(root, ids=["case_002"])] == ["case_002"]
    with pytest.raises(ValidationError):
        read_dataset(root, ids=["case_999"])
    with pytest.raises(ValidationError):
        write_dataset([phantoms[0], phantoms[0]], tmp_path / "dup")

# Test phantoms
def test_synth_determinism():
    """Same seed gives identical cases; another seed differs."""
    a = synth_generate(3, 4, extent=(4, 32, 32), seed=11)
    b = synth_generate(3, 4, extent=(4, 32, 32), seed=11)
    c = synth_generate(3, 4, extent=(4, 32, 32), seed=12)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert x.mask.tobytes() == y.mask.tobytes()
        assert x.spacing == y.spacing
    assert any(x.image.tobytes() != z.image.tobytes() for x, z in zip(a, c))

    # A larger cohort extends a smaller one
    longer = synth_generate(4, 4, extent=(4, 32, 32), seed=11)
    assert longer[2].image.tobytes() == a[2].image.tobytes()

def test_synth_classes_present():
    """Every class covers at least 0.1% of voxels in 80% of cases."""
    cases = synth_generate(10, 4, extent=(8, 64, 64), seed=0)
    assert all(1.0 <= s <= 3.0 for case in cases for s in case.spacing)
    assert cases[0].class_names == ["bladder", "bowel", "rectum", "sigmoid"]
    histogram = class_histogram(cases)
    assert len(histogram) == 40
    assert (histogram.groupby("class")["present"].mean() >= 0.8).all()

def test_synth_brain_roster():
    """Test the four-channel roster."""
    cases = synth_generate(2, 3, extent=(4, 32, 32), seed=0, roster="brain")
    assert cases[0].channels == 4
    assert cases[0].class_names == ["edema", "non_enhancing", "enhancing"]
    assert int(cases[0].mask.max()) <= 3

def test_synth_errors():
    """Test roster, class count and extent validation."""
    with pytest.raises(ValidationError):
        synth_generate(2, 4, extent=(2, 32, 32))
    with pytest.raises(ValidationError):
        synth_generate(2, 5)
    with pytest.raises(ValidationError):
        synth_generate(2, 2, roster="thorax")

# Test preprocessing
def test_crop_nonzero():
    """Test the bounding box, the offset and the mask alignment."""
    image = np.zeros((10, 10, 10))
    image[2:5, 2:5, 2:5] = 1.0
    mask = np.zeros((10, 10, 10), dtype=np.uint8)
    mask[3, 3, 3] = 1
    cropped = crop_nonzero(_case(image, mask))
    assert cropped.shape == (3, 3, 3)
    assert cropped.meta["crop_offset"] == [2, 2, 2]
    assert cropped.meta["original_shape"] == [10, 10, 10]
    assert cropped.mask[1, 1, 1] == 1 and cropped.mask.sum() == 1

    full = _case(np.ones((2, 3, 4)))
    assert crop_nonzero(full).shape == (2, 3, 4)
    with pytest.raises(ValidationError):
        crop_nonzero(_case(np.zeros((2, 3, 3))))

def test_resample_examples(rng):
    """Test identity, constant and linear-ramp resampling."""
    case = _case(rng.standard_normal((3, 8, 8)), rng.integers(0, 2, (3, 8, 8)), spacing=(2.0, 1.0, 1.0))
    same = resample(case, (2.0, 1.0, 1.0))
    np.testing.assert_allclose(same.image, case.image, atol=1e-6)
    assert same.mask.tobytes() == case.mask.tobytes()

    constant = resample(_case(np.full((3, 8, 8), 7.0), spacing=(2.0, 1.0, 1.0)), (1.5, 0.7, 1.3))
    assert constant.shape == (4, 11, 6)
    np.testing.assert_allclose(constant.image, 7.0, atol=1e-6)

    ramp = np.broadcast_to(0.1 * np.arange(32.0), (2, 4, 32))
    up = resample(_case(ramp), (1.0, 1.0, 0.5))
    assert up.shape == (2, 4, 64)
    expected = 0.1 * np.arange(64) * 31.0 / 63.0
    np.testing.assert_allclose(up.image[0, 0, 0, 16:48], expected[16:48], atol=1e-4)

    with pytest.raises(ValidationError):
        resample(case, (0.0, 1.0, 1.0))
    with pytest.raises(ValidationError):
        resample(case, (100.0, 1.0, 1.0))

def test_resample_never_adds_labels(phantoms):
    """Nearest-neighbour masks keep or shrink the label set."""
    for case in phantoms:
        out = resample(case, (1.7, 0.9, 1.1))
        assert set(np.unique(out.mask)) <= set(np.unique(case.mask))

def test_median_spacing(rng):
    """Test the lower-median rule against a sort oracle."""
    def with_spacing(values):
        return [_case(np.ones((1, 2, 2)), spacing=(s, s, s)) for s in values]

    assert median_spacing(with_spacing([1.0, 2.0, 3.0])) == (2.0, 2.0, 2.0)
    assert median_spacing(with_spacing([4.0, 1.0, 3.0, 2.0])) == (2.0, 2.0, 2.0)

    spacings = rng.uniform(0.5, 3.0, size=(11, 3))
    cases = [_case(np.ones((1, 2, 2)), spacing=tuple(s)) for s in spacings]
    assert median_spacing(cases) == tuple(np.sort(spacings, axis=0)[5])
    with pytest.raises(ValidationError):
        median_spacing([])

def test_zscore(rng):
    """Test constant images, the defining moments and per-channel normalization."""
    np.testing.assert_array_equal(zscore(_case(np.full((2, 3, 3), 5.0))).image, 0.0)

    image = np.stack([rng.normal(10.0, 3.0, (2, 5, 5)), rng.normal(-4.0, 0.5, (2, 5, 5))])
    out = zscore(_case(image)).image.astype(np.float64)
    for ch in range(2):
        expected = (image[ch] - image[ch].mean()) / image[ch].std()
        np.testing.assert_allclose(out[ch], expected, atol=1e-5)
        assert abs(out[ch].mean()) < 1e-6
        assert abs(out[ch].std() - 1.0) < 1e-4

def test_preprocess_idempotent(phantoms):
    """Re-running the chain on its own output changes nothing."""
    target = (1.5, 1.2, 1.2)
    once = preprocess_case(phantoms[1], target)
    twice = preprocess_case(once, target)
    assert twice.shape == once.shape
    np.testing.assert_allclose(twice.image, once.image, atol=1e-5)
    assert twice.mask.tobytes() == once.mask.tobytes()

# Test augmentation
def test_augment_identity_and_flip(rng):
    """Test disabled policies and the flip involution."""
    image = rng.standard_normal((1, 12, 12)).astype(np.float32)
    mask = rng.integers(0, 3, (12, 12)).astype(np.uint8)
    out_image, out_mask = augment(image, mask, no_augmentation(), rng)
    np.testing.assert_array_equal(out_image, image)
    np.testing.assert_array_equal(out_mask, mask)

    off = AugmentPolicy(flip=True, probability=0.0)
    np.testing.assert_array_equal(augment(image, mask, off, rng)[1], mask)
    np.testing.assert_array_equal(flip_horizontal(flip_horizontal(image)), image)

def test_rotation_matches_rot90(rng):
    """A 90 degree rotation is an index permutation."""
    image = rng.standard_normal((2, 9, 9)).astype(np.float32)
    mask = np.zeros((9, 9), dtype=np.uint8)
    mask[1:3, 2:7] = 1
    mask[5, 6] = 2
    out_image, out_mask = rotate_scale(image, mask, degrees=90.0)
    np.testing.assert_array_equal(out_mask, np.rot90(mask))
    np.testing.assert_allclose(out_image, np.rot90(image, axes=(1, 2)), atol=1e-5)

def test_augment_reproducible(rng):
    """Seeded generators reproduce augmentations and never invent labels."""
    image = rng.standard_normal((1, 16, 16)).astype(np.float32)
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[4:10, 5:12] = 2
    policy = AugmentPolicy(flip=True, probability=1.0)
    a = augment(image, mask, policy, np.random.default_rng(5))
    b = augment(image, mask, policy, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert set(np.unique(a[1])) <= {0, 2}

    with pytest.raises(ValidationError):
        AugmentPolicy(probability=1.5)

# Test patch sampling
def test_sample_patch_padding():
    """Slices smaller than the patch are padded symmetrically with background."""
    case = _case(np.ones((2, 10, 12)), np.ones((2, 10, 12)))
    image, mask = sample_patch(case, (16, 16), np.random.default_rng(0), fg_fraction=0.0)
    assert image.shape == (1, 16, 16) and mask.shape == (16, 16)
    assert mask[:3].sum() == 0 and mask[13:].sum() == 0
    assert mask[:, :2].sum() == 0 and mask[:, 14:].sum() == 0
    assert mask[3:13, 2:14].all()
    assert image[0, :3].sum() == 0

def test_sample_patch_foreground(phantoms):
    """Forced sampling always hits foreground; half forcing hits at least half the time."""
    case = phantoms[0]
    rng = np.random.default_rng(1)
    for _ in range(50):
        _, mask = sample_patch(case, (16, 16), rng, fg_fraction=1.0)
        assert mask.any()

    hits = sum(sample_patch(case, (16, 16), rng, fg_fraction=0.5)[1].any() for _ in range(1000))
    assert hits >= 500

    with pytest.raises(ValidationError):
        sample_patch(case, (16, 16), rng, fg_fraction=1.5)

def test_patch_loader_worker_independent(phantoms):
    """Batches do not depend on the worker count."""
    policy = AugmentPolicy(flip=True)
    serial = list(PatchLoader(phantoms, (16, 16), 3, policy=policy, seed=4).batches(1, 4))
    threaded = list(PatchLoader(phantoms, (16, 16), 3, policy=policy, seed=4, workers=3).batches(1, 4))
    assert [s for s, _, _ in serial] == [0, 1, 2, 3]
    for (_, xa, ya), (_, xb, yb) in zip(serial, threaded):
        assert xa.shape == (3, 1, 16, 16)
        np.testing.assert_array_equal(xa, xb)
        np.testing.assert_array_equal(ya, yb)

# Test folds
def test_make_folds():
    """Test sizes, determinism and the partition contract."""
    ids = [f"p{i:03d}" for i in range(194)]
    split = make_folds(ids, 5, seed=0)
    assert split.sizes() == [39, 39, 39, 39, 38]
    assert make_folds(list(reversed(ids)), 5, seed=0) == split
    assert make_folds(ids, 5, seed=1) != split

    val = [i for fold in range(5) for i in split.val_ids(fold)]
    assert sorted(val) == ids
    assert set(split.train_ids(2)).isdisjoint(split.val_ids(2))

def test_fold_errors_and_io(tmp_path):
    """Test invalid requests and persistence."""
    ids = ["a", "b", "c"]
    with pytest.raises(ValidationError):
        make_folds(ids, 1)
    with pytest.raises(ValidationError):
        make_folds(ids, 4)
    with pytest.raises(ValidationError):
        make_folds(["a", "a", "b"], 2)

    split = make_folds(ids, 3, seed=9)
    assert FoldSplit.load(split.save(tmp_path)) == split
    with pytest.raises(ValidationError):
        split.val_ids(3)
    with pytest.raises(ValidationError):
        split.fold_of("z")
    with pytest.raises(FileAccessError):
        FoldSplit.load(tmp_path / "other.json")
