"""Central finite-difference gradient checking.

The checker is the independent oracle for every differentiable operation:
it perturbs each input element by +/-h, re-evaluates the scalar loss, and
compares the quotient against the gradient the tape produced. It never goes
through ``Tensor.backward`` for the numeric side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tolerance

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"[{status}] {self.name}: rel_error={self.rel_error:.3e} (tol {self.tolerance:.0e})"


def numeric_gradient(f, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of scalar ``f(arrays)`` w.r.t. each array."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| normalized by the numeric gradient's scale."""
    denom = max(1e-8, float(np.abs(numeric).max()), float(np.abs(analytic).max()))
    return float(np.abs(analytic - numeric).max()) / denom


def check_gradients(
    name: str,
    build_loss,
    arrays: list[np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckResult:
    """Compare tape gradients with finite differences.

    ``build_loss`` maps a list of Tensors (requires_grad) to a scalar Tensor;
    it is re-invoked with plain values for the numeric side.
    """
    params = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(params)
    loss.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    def scalar_f(vals: list[np.ndarray]) -> float:
        ts = [Tensor(v) for v in vals]
        return float(build_loss(ts).data)

    numeric = numeric_gradient(scalar_f, [a.copy() for a in arrays], h=h)
    worst = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return GradCheckResult(name=name, rel_error=worst, tolerance=tolerance)
