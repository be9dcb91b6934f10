"""
Numpy tensor engine with reverse-mode automatic differentiation.
"""

from oarseg.tensor.tensor import (
    ComputeGraph,
    Tensor,
    as_tensor,
    backward,
    get_dtype,
    is_grad_enabled,
    no_grad,
    precision,
    set_precision,
)
from oarseg.tensor import functional
from oarseg.tensor.gradcheck import GradCheckReport, grad_check

__all__ = [
    "ComputeGraph",
    "GradCheckReport",
    "Tensor",
    "as_tensor",
    "backward",
    "functional",
    "get_dtype",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "precision",
    "set_precision",
]
