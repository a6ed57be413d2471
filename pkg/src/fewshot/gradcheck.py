"""Central finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    """Worst-coordinate comparison of analytic vs numeric gradients."""

    max_rel_err: float = 0.0
    worst_param: str = ""
    worst_index: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0
    n_unstable: int = 0
    per_param: dict = field(default_factory=dict)

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def finite_diff_check(build_loss, params, eps: float = 1e-5,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None,
                      stability_check: bool = False,
                      denom_floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `build_loss` is a zero-argument callable that runs the forward pass and
    returns a scalar Tensor; it must read the current `.data` of each tensor
    in `params` (a dict name -> Tensor). Every call builds a fresh graph.
    Relative error per coordinate is |a - n| / max(|a|, |n|, denom_floor);
    the report carries the worst coordinate overall and per parameter.

    `max_coords` caps the number of coordinates probed per parameter
    (sampled without replacement); large models are impractical to probe
    exhaustively since each coordinate costs two forward passes.

    `stability_check` re-estimates each coordinate at eps/4 and treats the
    coordinate as unusable when the two estimates disagree: a finite
    difference whose value depends on the step size is straddling a relu or
    maxpool kink and is not a valid derivative estimate there. Unstable
    coordinates are replaced by freshly sampled ones (and counted in
    `n_unstable`); the check fails if a parameter runs out of candidates.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def numeric_at(flat, idx, step):
        orig = flat[idx]
        flat[idx] = orig + step
        f_plus = build_loss().item()
        flat[idx] = orig - step
        f_minus = build_loss().item()
        flat[idx] = orig
        return (f_plus - f_minus) / (2.0 * step)

    report = GradCheckReport()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            budget = min(flat.size, 5 * max_coords)
            pool = list(rng.choice(flat.size, size=budget, replace=False))
            wanted = max_coords
        else:
            pool = list(range(flat.size))
            wanted = len(pool)
        worst = 0.0
        used = 0
        for idx in pool:
            if used >= wanted:
                break
            num = numeric_at(flat, idx, eps)
            ana = float(analytic[name].reshape(-1)[idx])
            denom = max(abs(ana), abs(num), denom_floor)
            if stability_check:
                num2 = numeric_at(flat, idx, eps / 4.0)
                if abs(num - num2) > 0.5e-5 * max(denom, abs(num2)):
                    report.n_unstable += 1
                    continue
            used += 1
            rel = abs(ana - num) / denom
            if rel > worst:
                worst = rel
            if rel > report.max_rel_err:
                report.max_rel_err = rel
                report.worst_param = name
                report.worst_index = np.unravel_index(idx, p.data.shape)
                report.analytic = ana
                report.numeric = num
        if used < wanted:
            raise ValueError(
                f"{name}: only {used} of {wanted} coordinates gave a "
                f"step-stable finite difference")
        report.per_param[name] = worst
    return report
