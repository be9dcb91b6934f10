"""
Tests for the loss, the optimizer, the scheduler and the fold training loop.
"""

import math
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from oarseg.data.folds import FoldSplit, make_folds
from oarseg.data.preprocessing import preprocess_dataset, zscore
from oarseg.models import ARCHITECTURES, ModelSpec, build_model, read_header
from oarseg.nn.module import Linear
from oarseg.tensor.tensor import Tensor
from oarseg.training.loss import dice_ce_loss, dice_ce_terms, one_hot, soft_dice_score
from oarseg.training.optim import AdamW, OptimizerState, PlateauState, adamw_step, plateau_step
from oarseg.training.trainer import TrainConfig, overfit, train_fold
from oarseg.utils.config import Config
from oarseg.utils.errors import DimensionError, NumericError, ValidationError


def _small_spec(arch="unet", **overrides):
    return ModelSpec.from_preset(arch, "desk", in_channels=1, num_classes=3, width_base=8, levels=2, **overrides)


def _small_config(**overrides):
    values = dict(lr=1e-3, batch=2, epochs=2, patch=(16, 16), iterations_per_epoch=2,
                  policy=None, deterministic=True, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


# Test loss
def test_loss_perfect_and_uniform(float64, rng):
    """Test the one-hot and uniform closed forms."""
    labels = rng.integers(0, 3, (2, 4, 4))
    perfect = Tensor(one_hot(labels, 3))
    ce, dice = dice_ce_terms(perfect, labels)
    assert ce.item() == 0.0
    assert dice.item() <= 1e-4
    assert dice_ce_loss(perfect, labels).item() <= 1e-4

    balanced = np.array([[[0, 1], [1, 0]]])
    ce, _ = dice_ce_terms(Tensor(np.full((1, 2, 2, 2), 0.5)), balanced)
    assert abs(ce.item() - math.log(2.0)) < 1e-6

def test_loss_oracle(float64, rng):
    """A random 2x2, three-class instance matches a scalar loop."""
    logits = rng.standard_normal((1, 3, 2, 2))
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    labels = np.array([[[0, 2], [1, 2]]])
    weights = (0.7, 1.3)

    ce = -sum(math.log(probs[0, labels[0, y, x], y, x]) for y in range(2) for x in range(2)) / 4.0
    dices = []
    for c in (1, 2):
        inter = sum(probs[0, c, y, x] * (labels[0, y, x] == c) for y in range(2) for x in range(2))
        p_sum = probs[0, c].sum()
        g_sum = float((labels[0] == c).sum())
        dices.append((2.0 * inter + 1e-5) / (p_sum + g_sum + 1e-5))
    expected = weights[1] * ce + weights[0] * (1.0 - sum(dices) / 2.0)
    assert abs(dice_ce_loss(Tensor(probs), labels, weights).item() - expected) < 1e-10

def test_loss_errors(rng):
    """Test label range and shape checks."""
    probs = Tensor(np.full((1, 2, 2, 2), 0.5))
    with pytest.raises(ValidationError):
        dice_ce_loss(probs, np.array([[[0, 2], [1, 0]]]))
    with pytest.raises(DimensionError):
        dice_ce_loss(probs, np.zeros((1, 3, 2), dtype=int))
    loss = dice_ce_loss(Tensor(rng.dirichlet(np.ones(2), (1, 2, 2)).transpose(0, 3, 1, 2)), np.array([[[0, 1], [1, 1]]]))
    assert loss.item() >= 0.0

# Test optimizer
def test_adamw_examples():
    """Test the decay-only update and the first-step closed form."""
    p = np.array([1.0, -2.0, 0.5])
    lr, wd = 1e-3, 0.05
    out = adamw_step([p], [np.zeros(3)], OptimizerState(), lr, wd)[0]
    np.testing.assert_array_equal(out, p * (1.0 - lr * wd))

    out = adamw_step([p], [np.zeros(3)], OptimizerState(), lr, 0.0)[0]
    assert out.tobytes() == p.tobytes()

    g = np.array([0.3, -4.0, 1e-2])
    out = adamw_step([p], [g], OptimizerState(), lr, wd)[0]
    np.testing.assert_allclose(out - p, -lr * np.sign(g) - lr * wd * p, atol=1e-6)

def test_adamw_determinism_and_errors(rng):
    """Identical gradient histories give identical trajectories."""
    a = b = np.array([0.4])
    state_a, state_b = OptimizerState(), OptimizerState()
    for _ in range(5):
        g = rng.standard_normal(1)
        a = adamw_step([a], [g], state_a, 1e-2, 0.0)[0]
        b = adamw_step([b], [g], state_b, 1e-2, 0.0)[0]
    assert a.tobytes() == b.tobytes()
    assert state_a.step == 5

    with pytest.raises(NumericError) as err:
        adamw_step([np.zeros(2)], [np.array([1.0, np.nan])], OptimizerState(), 1e-3, 0.0, names=["head.weight"])
    assert err.value.error_code == "NUM_004"
    assert err.value.layer == "head.weight"
    with pytest.raises(DimensionError):
        adamw_step([np.zeros(2)], [np.zeros(3)], OptimizerState(), 1e-3, 0.0)

def test_adamw_skips_decay_on_biases(rng):
    """Biases keep their value under decay-only updates."""
    layer = Linear(3, 2, rng)
    layer.bias.data = np.ones(2, dtype=layer.bias.data.dtype)
    weight = layer.weight.data.copy()
    optimizer = AdamW(layer, lr=0.1, weight_decay=0.5)
    optimizer.step()
    np.testing.assert_array_equal(layer.bias.data, 1.0)
    np.testing.assert_allclose(layer.weight.data, weight * 0.95, rtol=1e-6)

    with pytest.raises(ValidationError):
        AdamW(layer, lr=0.0)

# Test scheduler
def test_plateau_trace():
    """Three epochs without strict improvement halve the learning rate."""
    state = PlateauState(lr=1e-3)
    lrs = [plateau_step(state, loss) for loss in (1.0, 0.9, 0.91, 0.92, 0.93)]
    assert lrs == [1e-3, 1e-3, 1e-3, 1e-3, 5e-4]

    state = PlateauState(lr=1e-3)
    assert {plateau_step(state, 1.0 - 0.1 * i) for i in range(8)} == {1e-3}

def test_plateau_floor():
    """The learning rate is clamped at its floor."""
    state = PlateauState(lr=1.5e-5)
    lrs = [plateau_step(state, 1.0) for _ in range(10)]
    assert lrs[3] == 1e-5
    assert min(lrs) == 1e-5
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    with pytest.raises(ValidationError):
        PlateauState(lr=1e-3, factor=1.0)
    with pytest.raises(ValidationError):
        PlateauState(lr=1e-6)

# Test training loop
def test_train_config():
    """Test config resolution and validation."""
    config = Config()
    config.set("training", "lr", 1e-3)
    cfg = TrainConfig.from_config(config, epochs=2, iterations_per_epoch=None)
    assert cfg.lr == 1e-3
    assert cfg.epochs == 2
    assert cfg.patch == (320, 320)
    assert cfg.to_dict()["policy"]["rotate"] is True

    with pytest.raises(ValidationError):
        TrainConfig(batch=0)
    with pytest.raises(ValidationError):
        TrainConfig(lr=1e-6)

def test_train_fold_outputs(phantoms):
    """Test log columns, checkpoints and header fields."""
    cases, _ = preprocess_dataset(phantoms)
    split = make_folds([c.id for c in cases], 2, seed=0)
    with tempfile.TemporaryDirectory() as temp_dir:
        out = Path(temp_dir) / "fold_1"
        model, log = train_fold(_small_spec(), cases, split, 1, _small_config(), out, header={"classes": ["bladder", "bowel"]})
        assert list(log.columns) == ["epoch", "step", "lr", "train_loss", "val_soft_dice", "wall_seconds"]
        assert list(log["step"]) == [2, 4]
        assert log["train_loss"].map(math.isfinite).all()
        assert not model.training

        assert len(pd.read_csv(out / "train_log.csv")) == 2
        header = read_header(out / "final")
        assert header["fold"] == 1
        assert header["folds"] == 2
        assert header["val_ids"] == split.val_ids(1)
        assert header["classes"] == ["bladder", "bowel"]
        assert (out / "best" / "model.bin").exists()

def test_train_fold_deterministic(phantoms):
    """Two deterministic runs write byte-identical checkpoints."""
    cases, _ = preprocess_dataset(phantoms)
    split = make_folds([c.id for c in cases], 2, seed=0)
    cfg = _small_config(validate=False, policy=None)
    with tempfile.TemporaryDirectory() as temp_dir:
        root = Path(temp_dir)
        train_fold(_small_spec(), cases, split, 0, cfg, root / "a")
        train_fold(_small_spec(), cases, split, 0, cfg, root / "b")
        assert (root / "a" / "final" / "model.bin").read_bytes() == (root / "b" / "final" / "model.bin").read_bytes()

def test_train_fold_empty_partition(phantoms):
    """Every case in the validation fold leaves nothing to train on."""
    split = FoldSplit(k=2, assignments={c.id: 0 for c in phantoms}, seed=0)
    with pytest.raises(ValidationError):
        train_fold(_small_spec(), phantoms, split, 0, _small_config())

@pytest.mark.slow
def test_train_fold_descends(phantoms):
    """Training loss falls over a few epochs."""
    cases, _ = preprocess_dataset(phantoms)
    split = make_folds([c.id for c in cases], 2, seed=0)
    _, log = train_fold(_small_spec(), cases, split, 0, _small_config(epochs=6, iterations_per_epoch=8, validate=False))
    assert log["train_loss"].iloc[-1] < log["train_loss"].iloc[0]

def test_overfit_scoring_mode(rng):
    """Both modes share the updates; eval mode scores with running statistics."""
    images = rng.standard_normal((4, 1, 16, 16)).astype(np.float32)
    labels = rng.integers(0, 3, (4, 16, 16))
    batch_model = build_model(_small_spec(), seed=0)
    running_model = build_model(_small_spec(), seed=0)
    batch_losses, _ = overfit(batch_model, images, labels, steps=3, lr=1e-3)
    running_losses, score = overfit(running_model, images, labels, steps=3, lr=1e-3, eval_mode=True)

    assert batch_losses == running_losses
    assert batch_model.training
    assert not running_model.training
    assert score == pytest.approx(soft_dice_score(running_model.predict(images), labels), abs=1e-12)

@pytest.mark.slow
@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_overfit(arch, phantoms):
    """Every architecture memorizes eight slices."""
    slices = [(case.image[:, z], case.mask[z]) for case in map(zscore, phantoms) for z in range(case.shape[0])]
    slices = sorted(slices, key=lambda s: -int((s[1] > 0).sum()))[:8]
    images = np.stack([s[0] for s in slices]).astype(np.float32)
    labels = np.stack([s[1] for s in slices]).astype(np.int64)
    spec = ModelSpec.from_preset(arch, "desk", in_channels=1, num_classes=3)
    losses, score = overfit(build_model(spec, seed=0), images, labels, steps=500, lr=1e-3)
    assert score >= 0.95
    smoothed = np.convolve(losses, np.ones(50) / 50, mode="valid")
    assert smoothed[-1] < smoothed[0]
