"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hydraheads.tensor import Tensor, TensorError

# Gradients smaller than this are compared in absolute terms; below it the
# O(h^2) truncation and roundoff noise of the difference quotient dominate.
REL_FLOOR = 1e-3


class GradCheckContractError(TensorError):
    pass


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    max_abs_error: float
    worst_index: tuple[int, ...]
    tolerance: float

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict} max_rel={self.max_rel_error:.3e} max_abs={self.max_abs_error:.3e} "
            f"at {self.worst_index} (tol {self.tolerance:g})"
        )


def grad_check(
    fn: Callable[[Tensor], Tensor],
    x: np.ndarray | Tensor,
    tolerance: float = 1e-5,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``fn(x)`` with central differences.

    ``fn`` receives a fresh leaf tensor each call and must return a scalar.
    Relative error per entry is ``|a - n| / max(|a|, |n|, REL_FLOOR)``.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(base.copy(), requires_grad=True)
    out = fn(leaf)
    if out.data.size != 1 or out.ndim != 0:
        raise GradCheckContractError(f"gradient check needs a scalar output, got shape {out.shape}")
    out.backward()
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad.copy()

    numeric = np.zeros_like(base)
    probe = base.copy()
    for idx in np.ndindex(base.shape):
        orig = probe[idx]
        probe[idx] = orig + h
        f_plus = fn(Tensor(probe.copy())).item()
        probe[idx] = orig - h
        f_minus = fn(Tensor(probe.copy())).item()
        probe[idx] = orig
        numeric[idx] = (f_plus - f_minus) / (2.0 * h)

    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    rel_err = abs_err / denom
    worst = np.unravel_index(int(np.argmax(rel_err)), rel_err.shape) if rel_err.size else ()
    max_rel = float(rel_err.max()) if rel_err.size else 0.0
    return GradCheckReport(
        passed=max_rel <= tolerance,
        max_rel_error=max_rel,
        max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        tolerance=tolerance,
    )
