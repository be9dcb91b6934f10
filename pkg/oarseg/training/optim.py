"""
AdamW optimizer and the plateau learning-rate scheduler.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from oarseg.nn.module import Module, Parameter, is_no_decay
from oarseg.utils.errors import DimensionError, NumericError, ValidationError

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """First/second moments per parameter plus the step counter."""
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    lr: float,
    weight_decay: float,
    decay_mask: Optional[Sequence[bool]] = None,
    names: Optional[Sequence[str]] = None,
) -> List[np.ndarray]:
    """One decoupled-weight-decay Adam update.

    p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)

    Args:
        params: Parameter arrays
        grads: Gradients, same shapes
        state: Moments and step counter, updated in place
        lr: Learning rate
        weight_decay: Decoupled decay coefficient
        decay_mask: Per-parameter flag; False skips weight decay
        names: Parameter names used to label errors

    Returns:
        Updated parameter arrays

    Raises:
        NumericError: If a gradient is non-finite
        DimensionError: If a gradient shape differs from its parameter
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if decay_mask is None:
        decay_mask = [True] * len(params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step

    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise DimensionError("adamw_step", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NumericError(
                f"Non-finite gradient for parameter {i}", "NUM_004",
                op="adamw_step", layer=names[i] if names else None,
            )
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        decay = lr * weight_decay if decay_mask[i] else 0.0
        new = p * (1.0 - decay) - lr * (m_hat / (np.sqrt(v_hat) + state.eps))
        updated.append(new.astype(p.dtype))
    return updated


class AdamW:
    """AdamW over a module's parameters.

    Normalization gains/offsets and biases are excluded from weight decay.
    """

    def __init__(self, model: Module, lr: float = 3e-4, weight_decay: float = 0.05):
        if lr <= 0:
            raise ValidationError(f"lr must be positive, got {lr}", "VAL_003")
        named = list(model.named_parameters())
        self.names = [name for name, _ in named]
        self.params: List[Parameter] = [p for _, p in named]
        self.decay_mask = [not is_no_decay(name) for name in self.names]
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = OptimizerState()

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        updated = adamw_step(
            [p.data for p in self.params], grads, self.state,
            self.lr, self.weight_decay, self.decay_mask, self.names,
        )
        for p, data in zip(self.params, updated):
            p.data = data

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class PlateauState:
    """Best loss so far and the count of epochs without strict improvement."""
    lr: float
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-5
    best: float = float("inf")
    bad_epochs: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValidationError(f"lr_factor must be in (0, 1), got {self.factor}", "VAL_003")
        if self.min_lr > self.lr:
            raise ValidationError(f"lr_min {self.min_lr} exceeds lr {self.lr}", "VAL_003")


def plateau_step(state: PlateauState, epoch_loss: float) -> float:
    """Record one epoch's mean training loss and return the learning rate for the next epoch."""
    if epoch_loss < state.best:
        state.best = epoch_loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    if state.bad_epochs >= state.patience:
        state.lr = min(state.lr, max(state.lr * state.factor, state.min_lr))
        state.bad_epochs = 0
    return state.lr
