"""
Per-fold training loop.
"""

import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from oarseg.data.augment import AugmentPolicy
from oarseg.data.case import PatientCase
from oarseg.data.folds import FoldSplit
from oarseg.data.sampling import PatchLoader
from oarseg.inference.sliding_window import predict_volume
from oarseg.models.checkpoint import save_checkpoint
from oarseg.models.decoder import EncoderDecoder
from oarseg.models.factory import build_model
from oarseg.models.spec import ModelSpec
from oarseg.tensor.tensor import Tensor, backward, no_grad
from oarseg.training.loss import dice_ce_loss, soft_dice_score
from oarseg.training.optim import AdamW, PlateauState, plateau_step
from oarseg.utils.config import Config
from oarseg.utils.errors import NumericError, ValidationError
from oarseg.utils.logging import Logger
from oarseg.utils.progress import ProgressTracker

TRAIN_LOG = "train_log.csv"
LOG_COLUMNS = ["epoch", "step", "lr", "train_loss", "val_soft_dice", "wall_seconds"]


@dataclass
class TrainConfig:
    """Optimization settings of one training run."""
    lr: float = 3e-4
    weight_decay: float = 0.05
    batch: int = 16
    epochs: int = 100
    patience: int = 3
    lr_factor: float = 0.5
    lr_min: float = 1e-5
    patch: Tuple[int, int] = (320, 320)
    loss_weights: Tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    iterations_per_epoch: Optional[int] = None
    fg_fraction: float = 1.0 / 3.0
    policy: Optional[AugmentPolicy] = field(default_factory=AugmentPolicy)
    workers: int = 1
    deterministic: bool = False
    validate: bool = True
    overlap: float = 0.5

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise ValidationError(f"lr_factor must be in (0, 1), got {self.lr_factor}", "VAL_003")
        if self.lr_min > self.lr:
            raise ValidationError(f"lr_min {self.lr_min} exceeds lr {self.lr}", "VAL_003")
        if self.batch < 1:
            raise ValidationError(f"batch must be >= 1, got {self.batch}", "VAL_003")
        self.patch = tuple(self.patch)
        self.loss_weights = tuple(self.loss_weights)

    @classmethod
    def from_config(cls, config: Config, **overrides) -> "TrainConfig":
        training = config.section("training")
        data = config.section("data")
        values = {
            "lr": training.get("lr", 3e-4),
            "weight_decay": training.get("weight_decay", 0.05),
            "batch": training.get("batch", 16),
            "epochs": training.get("epochs", 100),
            "patience": training.get("patience", 3),
            "lr_factor": training.get("lr_factor", 0.5),
            "lr_min": training.get("lr_min", 1e-5),
            "patch": tuple(data.get("patch", (320, 320))),
            "loss_weights": tuple(training.get("loss_weights", (1.0, 1.0))),
            "seed": training.get("seed", 0),
            "iterations_per_epoch": training.get("iterations_per_epoch"),
            "fg_fraction": data.get("fg_fraction", 1.0 / 3.0),
            "policy": AugmentPolicy.from_config(data),
            "workers": config.threads(),
            "deterministic": config.get("runtime", "deterministic", False),
            "overlap": config.get("inference", "overlap", 0.5),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload["policy"] = asdict(self.policy) if self.policy is not None else None
        return payload


def train_step(
    model: EncoderDecoder,
    optimizer: AdamW,
    images: np.ndarray,
    labels: np.ndarray,
    loss_weights: Tuple[float, float] = (1.0, 1.0),
) -> float:
    """One forward/backward/update; returns the batch loss."""
    probs = model.forward_probs(Tensor(images))
    loss = dice_ce_loss(probs, labels, loss_weights)
    optimizer.zero_grad()
    backward(loss)
    optimizer.step()
    return loss.item()


def validation_soft_dice(
    model: EncoderDecoder,
    cases: Sequence[PatientCase],
    patch: Tuple[int, int],
    overlap: float,
) -> float:
    """Mean foreground soft Dice over the held-out cases (sliding-window probabilities)."""
    scores = []
    for case in cases:
        vol = predict_volume(model, case, patch, overlap)
        probs = np.moveaxis(vol.probs, 1, 0)
        scores.append(soft_dice_score(probs, case.mask.astype(np.int64)))
    model.train()
    return float(np.mean(scores)) if scores else float("nan")


class Trainer:
    """Trains one architecture on one cross-validation fold."""

    def __init__(
        self,
        spec: ModelSpec,
        cfg: TrainConfig,
        logger: Optional[Logger] = None,
        progress: Optional[ProgressTracker] = None,
        header: Optional[Dict] = None,
    ):
        self.spec = spec
        self.cfg = cfg
        self.header = dict(header or {})
        self.logger = logger or Logger()
        self.progress = progress or ProgressTracker()

    def train_fold(
        self,
        cases: Sequence[PatientCase],
        split: FoldSplit,
        fold: int,
        out_dir: Optional[Path] = None,
    ) -> Tuple[EncoderDecoder, pd.DataFrame]:
        """Train on every case outside ``fold`` and validate on ``fold``.

        Writes ``train_log.csv`` plus the ``final`` and ``best`` checkpoints
        when ``out_dir`` is given.

        Raises:
            ValidationError: If the training partition is empty
            NumericError: On a non-finite loss or gradient, tagged with the batch index
        """
        cfg = self.cfg
        by_id = {case.id: case for case in cases}
        train_cases = [by_id[i] for i in split.train_ids(fold) if i in by_id]
        val_cases = [by_id[i] for i in split.val_ids(fold) if i in by_id]
        if not train_cases:
            raise ValidationError(f"Fold {fold}: empty training partition", "VAL_001")

        model = build_model(self.spec, seed=cfg.seed, logger=self.logger)
        model.train()
        optimizer = AdamW(model, lr=cfg.lr, weight_decay=cfg.weight_decay)
        scheduler = PlateauState(lr=cfg.lr, factor=cfg.lr_factor, patience=cfg.patience, min_lr=cfg.lr_min)
        loader = PatchLoader(
            train_cases, cfg.patch, cfg.batch, cfg.fg_fraction, cfg.policy,
            seed=cfg.seed, workers=1 if cfg.deterministic else cfg.workers,
        )
        steps = cfg.iterations_per_epoch or math.ceil(loader.num_slices / cfg.batch)

        self.logger.info(
            f"Training {self.spec.name} fold {fold}/{split.k}: {len(train_cases)} train, "
            f"{len(val_cases)} val cases, {cfg.epochs} epochs x {steps} steps"
        )
        task = self.progress.start_task(f"{self.spec.name}-fold{fold}", cfg.epochs)
        rows: List[Dict] = []
        best_dice = -math.inf
        global_step = 0
        start = time.time()

        for epoch in range(cfg.epochs):
            lr = scheduler.lr
            optimizer.lr = lr
            losses = []
            for step, images, labels in loader.batches(epoch, steps):
                try:
                    losses.append(train_step(model, optimizer, images, labels, cfg.loss_weights))
                except NumericError as e:
                    e.batch_index = global_step
                    self.logger.error(f"Numeric failure in {self.spec.name} fold {fold}: {e}")
                    raise
                global_step += 1
            train_loss = float(np.mean(losses))
            if not math.isfinite(train_loss):
                raise NumericError(f"Non-finite epoch loss at epoch {epoch}", "NUM_003", batch_index=global_step - 1)
            plateau_step(scheduler, train_loss)

            val_dice = float("nan")
            if cfg.validate and val_cases:
                val_dice = validation_soft_dice(model, val_cases, cfg.patch, cfg.overlap)
                if val_dice > best_dice and out_dir is not None:
                    best_dice = val_dice
                    save_checkpoint(model, Path(out_dir) / "best", self._header(split, fold, epoch))
            rows.append({
                "epoch": epoch,
                "step": global_step,
                "lr": lr,
                "train_loss": train_loss,
                "val_soft_dice": val_dice,
                "wall_seconds": round(time.time() - start, 3),
            })
            self.logger.info(
                f"{self.spec.name} fold {fold} epoch {epoch}: loss {train_loss:.4f} lr {lr:.2e} val {val_dice:.4f}"
            )
            self.progress.advance(task, status=f"loss {train_loss:.4f}")
            if out_dir is not None:
                self._write_log(rows, Path(out_dir))

        model.eval()
        if out_dir is not None:
            save_checkpoint(model, Path(out_dir) / "final", self._header(split, fold, cfg.epochs - 1))
        self.progress.complete_task(task)
        return model, pd.DataFrame(rows, columns=LOG_COLUMNS)

    def _header(self, split: FoldSplit, fold: int, epoch: int) -> Dict:
        return {
            "fold": fold,
            "folds": split.k,
            "split_seed": split.seed,
            "val_ids": split.val_ids(fold),
            "epoch": epoch,
            "train_config": self.cfg.to_dict(),
            **self.header,
        }

    @staticmethod
    def _write_log(rows: List[Dict], out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(out_dir / TRAIN_LOG, index=False)


def train_fold(
    spec: ModelSpec,
    cases: Sequence[PatientCase],
    split: FoldSplit,
    fold: int,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    logger: Optional[Logger] = None,
    header: Optional[Dict] = None,
) -> Tuple[EncoderDecoder, pd.DataFrame]:
    """Functional wrapper around ``Trainer.train_fold``; ``header`` is stored in every checkpoint."""
    return Trainer(spec, cfg, logger, header=header).train_fold(cases, split, fold, out_dir)


def overfit(
    model: EncoderDecoder,
    images: np.ndarray,
    labels: np.ndarray,
    steps: int = 500,
    lr: float = 3e-4,
    weight_decay: float = 0.05,
    eval_mode: bool = False,
) -> Tuple[List[float], float]:
    """Fit a fixed batch for ``steps`` updates.

    Args:
        eval_mode: Score with running normalization statistics instead of batch statistics

    Returns:
        (per-step losses, final soft Dice on the batch; measured in training mode
        with batch statistics unless ``eval_mode`` is set)
    """
    model.train()
    optimizer = AdamW(model, lr=lr, weight_decay=weight_decay)
    losses = [train_step(model, optimizer, images, labels) for _ in range(steps)]
    if eval_mode:
        model.eval()
    with no_grad():
        probs = model.forward_probs(Tensor(images)).data
    return losses, soft_dice_score(probs, labels)
