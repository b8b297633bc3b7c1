"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LossAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_index: int

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"grad_check {verdict}: max rel err {self.max_rel_error:.3e} "
                f"at index {self.worst_index}")


def numeric_gradient(fn: Callable[[np.ndarray], float], params: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(params)
    probe = params.copy()
    for i in range(params.size):
        orig = probe[i]
        probe[i] = orig + h
        up = fn(probe)
        probe[i] = orig - h
        down = fn(probe)
        probe[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def grad_check(fn: LossAndGrad, params: np.ndarray, tolerance: float,
               h: float = 1e-5) -> GradCheckReport:
    """Compare fn's analytic gradient against central differences.

    Relative error per coordinate uses denominator
    ``max(|analytic|, |numeric|, 1e-6)`` so near-zero gradients do not
    blow up the ratio.  Any non-finite value in either gradient fails
    the check outright.
    """
    params = np.asarray(params, dtype=np.float64)
    _, analytic = fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ValueError(
            f"analytic gradient shape {analytic.shape} != params shape {params.shape}")
    numeric = numeric_gradient(lambda p: fn(p)[0], params, h=h)
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        bad = ~(np.isfinite(analytic) & np.isfinite(numeric))
        return GradCheckReport(max_rel_error=float("inf"), passed=False,
                               worst_index=int(np.argmax(bad)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    max_rel = float(rel[worst]) if rel.size else 0.0
    return GradCheckReport(max_rel_error=max_rel, passed=max_rel < tolerance,
                           worst_index=worst)
