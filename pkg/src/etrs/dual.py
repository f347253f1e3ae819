"""Alternating maximization of the bivariate concave dual.

The dual value

    d* = max_{t, lam >= 0} k(t, lam),
    k(t, lam) = (delta + 1) * lambda_min(D(t, lam)) - t - lam * c,

is computed by exact coordinate ascent: a one-dimensional maximization over
lam at fixed t (bisection on the subgradient sign, which is monotone by
concavity) alternating with the t-maximization from :mod:`etrs.trs`.  Each
step is an exact scalar maximization of a concave function, so the dual
value ascends monotonically and the iteration is globally convergent.

The loop stops when the dual value has stalled *and* the lam-coordinate is
stationary at the final iterate; the stationarity part is what pushes the
linear-constraint complementarity residual of the recovered point down to
the eigensolver noise floor instead of the much looser value-stall level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DualConfig, Workspace
from .eigen import EigResult, smallest_eig_A
from .exceptions import ValidationError
from .problem import POSITIVE_DEFINITE, PD_REJECT_RTOL, ProblemInstance
from .trs import TrsSolution, eval_k, maximize_over_t

# |grad_lambda| at the final iterate must drop below this (times max(1,|c|))
# before the alternation is allowed to stop.
_STATIONARITY_RTOL = 1e-9
_MAX_LAMBDA_EVALS = 90

STATUS_RUNNING = "running"
STATUS_CONVERGED = "converged"
STATUS_ITERATION_CAP = "iteration-cap"
STATUS_STALLED = "stalled"


@dataclass
class DualState:
    """Trace of the alternating iteration."""

    t: float
    lam: float
    k_value: float
    last_improvement: float = float("inf")
    iteration: int = 0
    history: list = field(default_factory=list)
    status: str = STATUS_RUNNING


@dataclass
class DualResult:
    """Optimal dual pair with the eigen data needed for primal recovery."""

    t_star: float
    lambda_star: float
    d_star: float
    eig_at_opt: EigResult
    hard_case: bool
    state: DualState | None = None
    trs: TrsSolution | None = None
    grad_lambda_final: float = float("nan")
    diagnostics: dict = field(default_factory=dict)


def lambda_step(instance: ProblemInstance, t: float, lambda_init: float, *,
                config: DualConfig | None = None,
                workspace: Workspace | None = None) -> float:
    """argmax over lam >= 0 of the concave scalar function k(t, .).

    Implemented as safeguarded false position on the subgradient sign: the
    subgradient element is nonincreasing in lam, so a sign change brackets
    the maximizer.  If the subgradient at lam = 0 is already nonpositive the
    constraint is slack and 0 is returned; if no sign change is found below
    the cap the cap is returned and the workspace is flagged as stalled.
    """
    cfg = config or DualConfig()
    if instance.norm_b == 0.0:
        return 0.0
    tol_g = cfg.tol_lambda * max(1.0, abs(instance.c))

    def grad(lam):
        ev = eval_k(instance, t, lam, config=cfg, workspace=workspace)
        return ev.grad_lambda

    g0 = grad(0.0)
    if g0 <= 0.0:
        return 0.0

    cap = cfg.cap_for(instance)
    lo, gl = 0.0, g0
    hi = None
    if lambda_init > 0.0:
        gi = grad(lambda_init)
        if abs(gi) <= tol_g:
            return lambda_init
        if gi > 0.0:
            lo, gl = lambda_init, gi
        else:
            hi, gh = lambda_init, gi
    if hi is None:
        hi = max(1.0, 2.0 * lo)
        while True:
            gh = grad(hi)
            if gh <= 0.0:
                break
            lo, gl = hi, gh
            if hi >= cap:
                if workspace is not None:
                    workspace.stalled = True
                return hi
            hi = min(2.0 * hi, cap)

    best_lam, best_g = (lo, gl) if abs(gl) < abs(gh) else (hi, gh)
    side = 0
    evals = 0
    while evals < _MAX_LAMBDA_EVALS:
        if abs(best_g) <= tol_g:
            break
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
        denom = gh - gl
        if denom == 0.0:
            mid = 0.5 * (lo + hi)
        else:
            mid = hi - gh * (hi - lo) / denom
            margin = 0.01 * (hi - lo)
            mid = min(max(mid, lo + margin), hi - margin)
        gm = grad(mid)
        evals += 1
        if abs(gm) < abs(best_g):
            best_lam, best_g = mid, gm
        if gm > 0.0:
            if side == +1:
                gh *= 0.5
            lo, gl, side = mid, gm, +1
        else:
            if side == -1:
                gl *= 0.5
            hi, gh, side = mid, gm, -1
    return best_lam


def solve_dual(instance: ProblemInstance, config: DualConfig | None = None, *,
               workspace: Workspace | None = None) -> DualResult:
    """Maximize the dual by alternating lam-steps and t-steps.

    Starts from lam = 0 and t = lambda_min(A) * (delta + 1).  Returns the
    best iterate seen, together with the bottom eigen data of
    D(t*, lambda*) that the recovery stage consumes.
    """
    cfg = config or DualConfig()
    ws = workspace or Workspace(cfg)

    with ws.timed("eigen"):
        eig_a = smallest_eig_A(instance, tol_eig=cfg.tol_eig,
                               tol_cluster=cfg.tol_cluster,
                               dense_threshold=cfg.dense_threshold,
                               seed=cfg.seed, counter=ws.counter)
    if eig_a.value > PD_REJECT_RTOL * max(1.0, instance.norm_A_inf):
        raise ValidationError([POSITIVE_DEFINITE])

    t = eig_a.value * (instance.delta + 1.0)
    lam = 0.0
    state = DualState(t=t, lam=lam, k_value=-np.inf)
    tol_stat = _STATIONARITY_RTOL * max(1.0, abs(instance.c))

    best_trs: TrsSolution | None = None
    best_lam = lam
    k_prev = -np.inf
    g_lam_final = np.nan
    while state.iteration < cfg.max_outer:
        state.iteration += 1
        with ws.timed("lambda_steps"):
            lam = lambda_step(instance, t, lam, config=cfg, workspace=ws)
        with ws.timed("t_steps"):
            trs = maximize_over_t(instance, lam, config=cfg, workspace=ws)
        t = trs.t_star
        k = trs.k_value
        state.history.append((t, lam, k))
        state.t, state.lam, state.k_value = t, lam, k
        if best_trs is None or k >= best_trs.k_value:
            best_trs, best_lam = trs, lam

        # Subgradient element in lam at the fresh t, read off the final
        # eigenvector of the t-step at no extra cost.
        eig = trs.eig
        if eig.anchored is not None:
            v = eig.basis[:, eig.anchored]
            g_lam_final = ((instance.delta + 1.0) * v[0]
                           * float(instance.b @ v[1:]) - instance.c)
        else:
            g_lam_final = -instance.c
        lam_stationary = (abs(g_lam_final) <= tol_stat
                          or (lam == 0.0 and g_lam_final <= tol_stat))
        state.last_improvement = k - k_prev
        value_stalled = abs(k - k_prev) <= cfg.tol_outer * max(1.0, abs(k))
        if ws.stalled:
            state.status = STATUS_STALLED
            break
        if value_stalled and lam_stationary:
            state.status = STATUS_CONVERGED
            break
        k_prev = k
    else:
        state.status = STATUS_ITERATION_CAP

    diagnostics = {
        "iterations": state.iteration,
        "status": state.status,
        "matvecs": ws.counter.count,
        "eig_residual": best_trs.eig.max_residual,
        "cluster_resolved": best_trs.eig.cluster_resolved,
        "t_evals_last": best_trs.n_evals,
    }
    return DualResult(t_star=best_trs.t_star, lambda_star=best_lam,
                      d_star=best_trs.k_value, eig_at_opt=best_trs.eig,
                      hard_case=best_trs.hard_case, state=state,
                      trs=best_trs, grad_lambda_final=g_lam_final,
                      diagnostics=diagnostics)
