"""Top-level solve pipeline: validate, maximize the dual, recover the primal."""

from __future__ import annotations

from .config import DualConfig, Workspace
from .dual import solve_dual
from .exceptions import ValidationError
from .problem import ProblemInstance, validate
from .recovery import SolveReport, recover


def solve(instance: ProblemInstance, config: DualConfig | None = None) -> SolveReport:
    """Solve the ball-plus-halfspace quadratic program to global optimality.

    Returns a :class:`~etrs.recovery.SolveReport`: either a verified global
    solution with multipliers and KKT residuals, or a certified duality-gap
    lower bound.  Raises :class:`~etrs.exceptions.ValidationError` when the
    instance violates a standing assumption.
    """
    cfg = config or DualConfig()
    report = validate(instance)
    if report.entries:
        raise ValidationError(report.entries)
    ws = Workspace(cfg)
    dual = solve_dual(instance, cfg, workspace=ws)
    with ws.timed("recovery"):
        result = recover(instance, dual, config=cfg, workspace=ws)
    result.diagnostics["matvecs"] = ws.counter.count
    result.diagnostics["dual_value"] = dual.d_star
    result.diagnostics["timings_ms"] = {k: 1e3 * v for k, v in ws.timings.items()}
    result.diagnostics["t_star"] = dual.t_star
    result.diagnostics["lambda_star"] = dual.lambda_star
    result.diagnostics["hard_case"] = dual.hard_case
    return result
