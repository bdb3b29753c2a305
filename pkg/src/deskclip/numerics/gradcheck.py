"""Finite-difference verification of analytic gradients.

Runs the loss twice to confirm the computation is deterministic, takes
one analytic backward pass, then probes random coordinates of every
parameter with central differences. Loss functions must be pure: same
parameter values, same loss, no hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import DeterminismError, NumericError
from .tensor import Tensor, zero_grads


@dataclass
class GradReport:
    """Outcome of one grad_check run."""

    per_param: dict[str, float] = field(default_factory=dict)
    per_param_abs: dict[str, float] = field(default_factory=dict)
    worst_param: str = ""
    max_rel_err: float = 0.0
    max_abs_err: float = 0.0
    probes: int = 0
    passed: bool = False
    tolerance: float = 0.0

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_err:.3e} "
            f"at {self.worst_param or '<none>'} "
            f"({self.probes} probes, tol {self.tolerance:.1e})"
        )


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    probes_per_tensor: int = 3,
    h: float = 1e-5,
    tolerance: float = 1e-3,
    seed: int = 0,
) -> GradReport:
    """Compare backward-pass gradients against central differences.

    Parameters should be float64 for the comparison to be meaningful at
    the default tolerance; float32 round-off alone exceeds 1e-3 on deep
    graphs.
    """
    base_a = loss_fn()
    base_b = loss_fn()
    if base_a.data.shape != () and base_a.data.size != 1:
        raise NumericError("grad_check loss must be scalar")
    if not np.array_equal(base_a.data, base_b.data):
        raise DeterminismError(
            "loss_fn returned different values on identical inputs; "
            "gradient probing requires a pure function"
        )
    if not np.isfinite(base_a.data).all():
        raise NumericError("grad_check loss is non-finite")

    zero_grads(params.values())
    loss = loss_fn()
    loss.backward()

    rng = np.random.default_rng(seed)
    report = GradReport(tolerance=tolerance)
    worst = 0.0
    worst_name = ""
    total_probes = 0

    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            # Parameter unused by this loss; treat analytic grad as zero.
            analytic_full = np.zeros_like(p.data)
        else:
            analytic_full = p.grad
        flat = p.data.reshape(-1)
        n_probe = min(probes_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=n_probe, replace=False)
        param_worst = 0.0
        param_worst_abs = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            plus = float(loss_fn().data)
            flat[c] = orig - h
            minus = float(loss_fn().data)
            flat[c] = orig
            numeric = (plus - minus) / (2.0 * h)
            analytic = float(analytic_full.reshape(-1)[c])
            err = _rel_err(analytic, numeric)
            if err > param_worst:
                param_worst = err
            param_worst_abs = max(param_worst_abs, abs(analytic - numeric))
            total_probes += 1
        report.per_param[name] = param_worst
        report.per_param_abs[name] = param_worst_abs
        report.max_abs_err = max(report.max_abs_err, param_worst_abs)
        if param_worst > worst:
            worst = param_worst
            worst_name = name

    report.max_rel_err = worst
    report.worst_param = worst_name
    report.probes = total_probes
    report.passed = worst < tolerance
    return report
