"""Dual-function evaluation and the one-dimensional t-maximization.

For a fixed multiplier lam >= 0 the inner problem is a trust-region
subproblem with shifted linear term g = a - lam/2 b.  Its value is recovered
by maximizing the concave scalar function

    k(t, lam) = (delta + 1) * lambda_min(D(t, lam)) - t - lam * c

over t.  The derivative element supplied by an eigenvector (y0, z) of
lambda_min(D(t, lam)) is

    phi(t) = (delta + 1) * y0^2 - 1,

which is nonincreasing in t, so the maximizer is located by a safeguarded
root search on phi.  Two regimes occur:

  * easy case: phi crosses zero at some t* with lambda_min(D(t*)) strictly
    below lambda_min(A); the primal candidate x = z / y0 then sits exactly
    on the ball boundary;
  * hard case: g is orthogonal to the bottom eigenspace of A and the
    pseudoinverse point u = (A - lambda_min(A) I)^+ g already lies inside
    the ball.  Then phi stays nonnegative up to the kink

        t0 = lambda_min(A) + g' u,

    the maximum sits at t0, and the candidate x = u satisfies ||x||^2 <=
    delta, leaving the boundary completion to the recovery stage.

The pseudoinverse application never forms a factorization: it is a
conjugate-gradient solve on the operator deflated against the computed
bottom eigenbasis of A (dense eigendecomposition below the dense-fallback
threshold).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .config import DualConfig, Workspace
from .eigen import (BorderedOperator, EigResult, anchor_basis, smallest_eig_A,
                    smallest_eigpair)
from .exceptions import EtrsError, IterativeSolveError
from .problem import ProblemInstance

# ||u||^2 may exceed delta by this relative slack and still count as a hard case.
_BOUNDARY_RTOL = 1e-8
_MAX_EXPANSIONS = 60
_MAX_ROOT_EVALS = 200


@dataclass
class DualEval:
    """One evaluation of the dual function and a (sub)gradient element.

    When the bottom eigenvalue of D(t, lam) is simple the pair
    (grad_t, grad_lambda) is the gradient; otherwise it is the element of
    the subdifferential generated by the anchored eigenvector, or the
    limiting element (-1, -c) when the whole cluster has zero first
    component.
    """

    t: float
    lam: float
    k_value: float
    eig: EigResult
    grad_t: float
    grad_lambda: float
    differentiable: bool


@dataclass
class TrsSolution:
    """Result of maximizing k(., lam): the inner trust-region solve."""

    t_star: float
    x: np.ndarray
    hard_case: bool
    t0: float | None
    lambda1: float
    boundary_norm_sq: float
    eig: EigResult
    k_value: float
    n_evals: int = 0


def eval_k(instance: ProblemInstance, t: float, lam: float, *,
           config: DualConfig | None = None,
           workspace: Workspace | None = None) -> DualEval:
    """Evaluate k(t, lam) and a subgradient element from the anchored eigenvector."""
    cfg = config or DualConfig()
    counter = workspace.counter if workspace is not None else None
    v0 = workspace.v0_bordered if workspace is not None else None
    eig_a = smallest_eig_A(instance, tol_eig=cfg.tol_eig,
                           tol_cluster=cfg.tol_cluster,
                           dense_threshold=cfg.dense_threshold, seed=cfg.seed,
                           counter=counter)
    op = BorderedOperator(instance, t, lam, counter)
    res = smallest_eigpair(op, k_hint=eig_a.multiplicity + 1,
                           tol_eig=cfg.tol_eig, tol_cluster=cfg.tol_cluster,
                           dense_threshold=cfg.dense_threshold, v0=v0,
                           seed=cfg.seed)
    res = anchor_basis(res, cfg.tol_anchor)
    delta = instance.delta
    k = (delta + 1.0) * res.value - t - lam * instance.c
    if res.anchored is not None:
        v = res.basis[:, res.anchored]
        y0 = v[0]
        z = v[1:]
        grad_t = (delta + 1.0) * y0 * y0 - 1.0
        grad_lambda = (delta + 1.0) * y0 * float(instance.b @ z) - instance.c
    else:
        # y0 -> 0 limit of the subgradient.
        grad_t = -1.0
        grad_lambda = -instance.c
    if workspace is not None:
        col = res.anchored if res.anchored is not None else 0
        workspace.v0_bordered = res.basis[:, col].copy()
    return DualEval(t=t, lam=lam, k_value=k, eig=res, grad_t=grad_t,
                    grad_lambda=grad_lambda,
                    differentiable=res.multiplicity == 1)


def _deflated_pinv_apply(instance: ProblemInstance, g: np.ndarray,
                         eig_a: EigResult, *, config: DualConfig,
                         counter=None) -> np.ndarray:
    """Apply (A - lambda_min(A) I)^+ to g, restricted to the complement of
    the bottom eigenspace.

    Dense path: eigendecomposition with the cluster explicitly zeroed out.
    Iterative path: conjugate gradients on the deflated operator, with the
    bottom eigenbasis projected out of every matvec so rounding cannot
    reintroduce the null directions.
    """
    n = instance.n
    Z = eig_a.basis
    gp = g - Z @ (Z.T @ g)
    if not np.any(gp):
        return np.zeros(n)
    if n <= config.dense_threshold:
        lam, Q = np.linalg.eigh(instance.A.toarray())
        d = lam - eig_a.value
        cut = config.tol_cluster * max(1.0, abs(eig_a.value))
        keep = d > cut
        return Q[:, keep] @ ((Q[:, keep].T @ gp) / d[keep])

    shift = eig_a.value

    def mv(v):
        if counter is not None:
            counter.add()
        v = v - Z @ (Z.T @ v)
        w = instance.A @ v - shift * v
        return w - Z @ (Z.T @ w)

    op = spla.LinearOperator((n, n), matvec=mv, dtype=np.float64)
    u, info = spla.cg(op, gp, rtol=1e-12, atol=0.0, maxiter=min(20 * n, 200000))
    if info != 0:
        resid = float(np.linalg.norm(op @ u - gp))
        raise IterativeSolveError(
            f"deflated CG stalled (info={info})", residual=resid)
    return u - Z @ (Z.T @ u)


def compute_t0(instance: ProblemInstance, lam: float, *,
               config: DualConfig | None = None,
               workspace: Workspace | None = None) -> float:
    """Position of the kink of k(., lam): lambda_min(A) + g' (A - lambda_min(A) I)^+ g.

    Meaningful when g = a - lam/2 b is orthogonal to the bottom eigenspace
    of A (the hard-case regime); the pseudoinverse drops any stray component
    in that eigenspace.
    """
    cfg = config or DualConfig()
    counter = workspace.counter if workspace is not None else None
    eig_a = smallest_eig_A(instance, tol_eig=cfg.tol_eig,
                           tol_cluster=cfg.tol_cluster,
                           dense_threshold=cfg.dense_threshold, seed=cfg.seed,
                           counter=counter)
    g = instance.a - 0.5 * lam * instance.b
    u = _deflated_pinv_apply(instance, g, eig_a, config=cfg, counter=counter)
    return eig_a.value + float(g @ u)


def _hard_solution(instance: ProblemInstance, eig_a: EigResult, u: np.ndarray,
                   s2: float, t0: float, lam: float, n_evals: int,
                   workspace: Workspace | None) -> TrsSolution:
    """Assemble the solution at the kink t0 without an eigensolve.

    At t = t0 the vector (1, u) / sqrt(1 + ||u||^2) is an exact eigenvector
    of D(t0, lam) for lambda_min(A), and the lifted bottom eigenvectors of A
    complete the cluster basis; the two blocks are orthogonal because u lies
    in the range of A - lambda_min(A) I.
    """
    n = instance.n
    Z = eig_a.basis
    i = Z.shape[1]
    s = np.sqrt(1.0 + s2)
    basis = np.zeros((n + 1, i + 1))
    basis[0, 0] = 1.0 / s
    basis[1:, 0] = u / s
    basis[1:, 1:] = Z
    op = BorderedOperator(instance, t0, lam,
                          workspace.counter if workspace else None)
    r = op @ basis[:, 0] - eig_a.value * basis[:, 0]
    eig = EigResult(value=eig_a.value, multiplicity=i + 1, basis=basis,
                    anchored=0, max_residual=float(np.linalg.norm(r)),
                    cluster_resolved=eig_a.cluster_resolved)
    if workspace is not None:
        workspace.v0_bordered = basis[:, 0].copy()
    k = (instance.delta + 1.0) * eig_a.value - t0 - lam * instance.c
    return TrsSolution(t_star=t0, x=u.copy(), hard_case=True, t0=t0,
                       lambda1=-eig_a.value, boundary_norm_sq=s2, eig=eig,
                       k_value=k, n_evals=n_evals)


def maximize_over_t(instance: ProblemInstance, lam: float, *,
                    config: DualConfig | None = None,
                    workspace: Workspace | None = None) -> TrsSolution:
    """Maximize k(., lam) over t: safeguarded Illinois iteration on phi.

    The initial bracket is [lambda_min(A) - ||g|| sqrt((delta+1)/delta) - 1,
    t_hi] where t_hi is the kink estimate in the orthogonal regime and
    lambda_min(A) + ||g|| sqrt(delta) + 1 otherwise; phi is provably
    positive at the left end and the right end is expanded by doubling if
    needed.  A hard case detected mid-search (phi still nonnegative while
    lambda_min(D) has met lambda_min(A)) snaps t to the kink.
    """
    cfg = config or DualConfig()
    delta = instance.delta
    eig_a = smallest_eig_A(instance, tol_eig=cfg.tol_eig,
                           tol_cluster=cfg.tol_cluster,
                           dense_threshold=cfg.dense_threshold, seed=cfg.seed,
                           counter=workspace.counter if workspace else None)
    g = instance.a - 0.5 * lam * instance.b
    gnorm = float(np.linalg.norm(g))
    proj = eig_a.basis.T @ g
    orthogonal = float(np.linalg.norm(proj)) <= cfg.tol_anchor * max(gnorm, 1e-300)

    n_evals = 0
    u = None
    t0 = None
    if orthogonal:
        u = _deflated_pinv_apply(instance, g, eig_a, config=cfg,
                                 counter=workspace.counter if workspace else None)
        s2 = float(u @ u)
        t0 = eig_a.value + float(g @ u)
        if s2 <= delta * (1.0 + _BOUNDARY_RTOL):
            return _hard_solution(instance, eig_a, u, s2, t0, lam, n_evals,
                                  workspace)
        t_hi = t0
    else:
        t_hi = eig_a.value + gnorm * np.sqrt(delta) + 1.0
    t_lo = eig_a.value - gnorm * np.sqrt((delta + 1.0) / delta) - 1.0

    cluster_tol = cfg.tol_cluster * max(1.0, abs(eig_a.value))

    def snap_to_kink():
        gg = g
        uu = u
        if uu is None:
            uu = _deflated_pinv_apply(instance, gg, eig_a, config=cfg,
                                      counter=workspace.counter if workspace else None)
        ss2 = float(uu @ uu)
        tt0 = eig_a.value + float(gg @ uu)
        return _hard_solution(instance, eig_a, uu, ss2, tt0, lam, n_evals,
                              workspace)

    def phi(t):
        nonlocal n_evals
        n_evals += 1
        ev = eval_k(instance, t, lam, config=cfg, workspace=workspace)
        return ev

    ev_lo = phi(t_lo)
    span = max(1.0, abs(t_hi - t_lo))
    expansions = 0
    while ev_lo.grad_t <= 0.0:
        if expansions >= _MAX_EXPANSIONS:
            raise EtrsError("no bracket for the t-search: derivative never "
                            "positive (suspected unbounded dual)")
        expansions += 1
        t_lo -= span
        span *= 2.0
        ev_lo = phi(t_lo)

    ev_hi = phi(t_hi)
    expansions = 0
    while ev_hi.grad_t > 0.0:
        if (ev_hi.eig.value >= eig_a.value - cluster_tol):
            return snap_to_kink()
        if expansions >= _MAX_EXPANSIONS:
            raise EtrsError("no bracket for the t-search: derivative never "
                            "negative (suspected unbounded dual)")
        expansions += 1
        t_lo, ev_lo = t_hi, ev_hi
        t_hi = t_hi + max(1.0, gnorm * np.sqrt(delta)) * 2.0 ** expansions
        ev_hi = phi(t_hi)

    # Illinois variant of false position on phi: keeps the bracket and
    # converges superlinearly once near the root.
    best = ev_lo if abs(ev_lo.grad_t) < abs(ev_hi.grad_t) else ev_hi
    fl, fh = ev_lo.grad_t, ev_hi.grad_t
    tl, th = t_lo, t_hi
    side = 0
    while n_evals < _MAX_ROOT_EVALS:
        if abs(best.grad_t) <= cfg.tol_phi:
            break
        if th - tl <= 1e-12 * max(1.0, abs(th)):
            break
        denom = fh - fl
        if denom == 0.0:
            tm = 0.5 * (tl + th)
        else:
            tm = th - fh * (th - tl) / denom
            margin = 0.01 * (th - tl)
            tm = min(max(tm, tl + margin), th - margin)
        ev = phi(tm)
        if abs(ev.grad_t) < abs(best.grad_t):
            best = ev
        if ev.grad_t > 0.0:
            if ev.eig.value >= eig_a.value - cluster_tol:
                return snap_to_kink()
            if side == +1:
                fh *= 0.5
            tl, fl, side = tm, ev.grad_t, +1
        else:
            if side == -1:
                fl *= 0.5
            th, fh, side = tm, ev.grad_t, -1

    if best.eig.anchored is None:
        # The whole cluster has zero first component: only possible at the
        # kink, so finish through the hard branch.
        return snap_to_kink()
    v = best.eig.basis[:, best.eig.anchored]
    y0 = v[0]
    x = v[1:] / y0
    return TrsSolution(t_star=best.t, x=x, hard_case=False, t0=t0,
                       lambda1=-best.eig.value,
                       boundary_norm_sq=float(x @ x), eig=best.eig,
                       k_value=best.k_value, n_evals=n_evals)
