"""
Loss, optimizer, scheduler and the per-fold training loop.
"""

from oarseg.training.loss import dice_ce_loss, soft_dice_score
from oarseg.training.optim import AdamW, OptimizerState, PlateauState, adamw_step, plateau_step
from oarseg.training.trainer import TrainConfig, Trainer, overfit, train_fold
