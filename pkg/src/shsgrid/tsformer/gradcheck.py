"""Finite-difference verification of the hand-written gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, init_params, loss, loss_and_grad, param_group

TINY = ModelConfig(L=1, h=2, d=8, d_ff=16, dropout=0.0, S=4, M=3, N_c=3)


@dataclass
class GradCheckReport:
    tolerance: float
    per_group: dict[str, float] = field(default_factory=dict)
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.per_group.values()) if self.per_group else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    @property
    def failing_groups(self) -> list[str]:
        return [g for g, e in self.per_group.items() if e > self.tolerance]

    def to_dict(self) -> dict:
        return {"tolerance": self.tolerance, "passed": self.passed, "max_rel_err": self.max_rel_err,
                "per_group": self.per_group}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Tensor-level relative error ||a - n|| / max(||a|| + ||n||, floor).

    Entry-wise ratios are dominated by round-off wherever a gradient is
    nearly zero, so the norm form is used.  The floor matters for tensors
    whose true gradient vanishes, such as the key bias (softmax ignores a
    shift shared by a whole row of scores).
    """
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def grad_check(cfg: ModelConfig = TINY, tolerance: float = 1e-4, step: float = 1e-5, batch: int = 3, seed: int = 0,
               loss_fn=None, grad_fn=None) -> GradCheckReport:
    """Compare analytic gradients with central differences on random data.

    ``loss_fn(params, z, y)`` and ``grad_fn(params, z, y)`` default to the
    model's own; tests substitute broken ones as negative controls.  Failures
    are reported, never raised.
    """
    if cfg.dropout != 0.0:
        raise ValueError("gradient check requires dropout = 0")
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    # perturb biases and norms away from their trivial initial values
    for name in params.names():
        params.tensors[name] = params[name] + 0.1 * rng.standard_normal(params[name].shape)
    z = rng.standard_normal((batch, cfg.S, cfg.M))
    y = rng.integers(cfg.N_c, size=batch)
    loss_fn = loss_fn or (lambda p, a, b: loss(p, a, b))
    grad_fn = grad_fn or (lambda p, a, b: loss_and_grad(p, a, b)[1])
    analytic = grad_fn(params, z, y)
    report = GradCheckReport(tolerance)
    for name in params.names():
        tensor = params.tensors[name]
        numeric = np.zeros_like(tensor)
        for idx in np.ndindex(tensor.shape):
            orig = tensor[idx]
            tensor[idx] = orig + step
            up = loss_fn(params, z, y)
            tensor[idx] = orig - step
            down = loss_fn(params, z, y)
            tensor[idx] = orig
            numeric[idx] = (up - down) / (2 * step)
        err = relative_error(analytic[name], numeric)
        report.per_param[name] = err
        group = param_group(name)
        report.per_group[group] = max(report.per_group.get(group, 0.0), err)
    return report
