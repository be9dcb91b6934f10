"""
Finite-difference verification of analytic gradients.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from oarseg.tensor.tensor import Tensor, no_grad, precision

# Absolute floor of the error denominator; below it errors are absolute
_ERR_FLOOR = 1.0


@dataclass
class GradCheckReport:
    """Outcome of one gradient check."""
    name: str
    max_rel_err: float
    passed: bool
    tolerance: float
    per_input: Dict[str, float] = field(default_factory=dict)
    elements: int = 0

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{self.name}: {status} max_rel_err={self.max_rel_err:.2e} ({self.elements} elements)"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1, |a|, |n|) elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _ERR_FLOOR)
    return np.abs(analytic - numeric) / scale


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    params: Optional[Dict[str, Tensor]] = None,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    seed: int = 0,
    name: str = "op",
) -> GradCheckReport:
    """Compare backward() against central differences for every input and parameter element.

    The output of ``fn`` is reduced to a scalar by a fixed random projection so
    that every output element contributes a distinct weight.

    Args:
        fn: Maps input tensors (in order) to an output tensor
        inputs: Input arrays; each becomes a differentiable leaf
        params: Extra named leaves read by ``fn`` (module parameters)
        tolerance: Pass threshold on the maximum relative error
        h: Finite-difference step
        seed: Seed of the projection weights
        name: Label for the report

    Returns:
        GradCheckReport; failures are reported, never raised
    """
    params = params or {}
    with precision("float64"):
        leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True, name=f"input{i}")
                  for i, a in enumerate(inputs)]
        saved = {}
        for key, p in params.items():
            saved[key] = (p.data, p.requires_grad, p.grad)
            p.data = p.data.astype(np.float64)
            p.requires_grad = True
            p.grad = None

        try:
            out = fn(*leaves)
            projection = np.random.default_rng(seed).standard_normal(out.shape)

            def scalar() -> float:
                with no_grad():
                    return float((fn(*leaves).data * projection).sum())

            (out * Tensor(projection)).sum().backward()

            targets = [(f"input{i}", t) for i, t in enumerate(leaves)] + list(params.items())
            per_input: Dict[str, float] = {}
            elements = 0
            for key, tensor in targets:
                analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
                numeric = np.zeros_like(tensor.data)
                flat = tensor.data.reshape(-1)
                for i in range(flat.size):
                    original = flat[i]
                    flat[i] = original + h
                    f_plus = scalar()
                    flat[i] = original - h
                    f_minus = scalar()
                    flat[i] = original
                    numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
                per_input[key] = float(relative_error(analytic, numeric).max()) if flat.size else 0.0
                elements += flat.size
        finally:
            for key, (data, requires_grad, grad) in saved.items():
                params[key].data = data
                params[key].requires_grad = requires_grad
                params[key].grad = grad

    max_err = max(per_input.values()) if per_input else 0.0
    return GradCheckReport(
        name=name,
        max_rel_err=max_err,
        passed=bool(max_err < tolerance),
        tolerance=tolerance,
        per_input=per_input,
        elements=elements,
    )


def summarize(reports: List[GradCheckReport]) -> Dict[str, object]:
    """Counts and worst case over a list of reports."""
    worst = max(reports, key=lambda r: r.max_rel_err) if reports else None
    return {
        "checks": len(reports),
        "failed": [r.name for r in reports if not r.passed],
        "worst": worst.name if worst else None,
        "worst_rel_err": worst.max_rel_err if worst else 0.0,
    }
