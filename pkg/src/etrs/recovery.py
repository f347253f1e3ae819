"""Primal recovery from a solved dual: solution, certificates, completions.

From the dual maximizer (t*, lambda*) the multipliers are

    lambda1 = -lambda_min(D(t*, lambda*)),     lambda2 = lambda*,

and the candidate point is x = z / y0 built from the anchored eigenvector.
Three outcomes are possible:

  * easy case (lambda_min(D) strictly below lambda_min(A)): x is already the
    global solution;
  * hard case with a certified duality gap: lambda_min(A) is simple and
    negative, lambda* > 0, and the two boundary points x +/- alpha z
    straddle the hyperplane b'x = c.  Then no primal point attains the dual
    value; the dual value is returned as a lower bound together with the
    straddling pair as a certificate;
  * hard case with strong duality: x is completed to the ball boundary by a
    correction inside the bottom eigenspace of A.  Multiplicity one needs a
    scalar quadratic, multiplicity two a small circle/line intersection, and
    higher multiplicities are reduced to two by repeatedly deflating a
    bottom eigenvector orthogonal to b (which leaves the optimal multipliers
    unchanged).

Corrections never assume the candidate is orthogonal to the eigenspace: all
completions carry the cross terms, because at a numerically converged (as
opposed to exact) dual maximizer the candidate may lean into the eigenspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .config import DualConfig, Workspace
from .dual import DualResult
from .eigen import EigResult, smallest_eig_A
from .exceptions import InternalInconsistencyError
from .problem import FEAS_RTOL, KktResiduals, ProblemInstance, kkt_residuals

STATUS_SOLVED = "strong-duality-solved"
STATUS_GAP = "duality-gap-lower-bound"

# lambda* below this counts as zero for the gap test (near-gap conservatism).
_GAP_LAMBDA_TOL = 1e-8
# Residual allowed when re-verifying certificate points before declaring a gap.
_CERT_RTOL = 1e-6
# Discriminant slack for the circle/line completion, relative to delta.
_DISC_RTOL = 1e-6
_DEFLATION_SHIFT_MARGIN = 1.0


@dataclass
class GapCertificate:
    """Two ball-boundary solutions of the stationarity system straddling the
    hyperplane: their existence certifies that no primal point closes the
    dual gap."""

    x1: np.ndarray
    x2: np.ndarray
    mu: float
    signs: tuple

    def straddles(self) -> bool:
        return self.signs[0] * self.signs[1] < 0.0


@dataclass
class SolveReport:
    """Final outcome: either a verified global solution or a certified lower bound."""

    status: str
    x_star: np.ndarray | None
    objective: float
    lambda1: float
    lambda2: float
    kkt: KktResiduals | None = None
    gap_certificate: GapCertificate | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == STATUS_SOLVED


def _anchored_candidate(eig: EigResult) -> np.ndarray:
    if eig.anchored is None:
        raise InternalInconsistencyError(
            "no eigenvector with nonzero first component in the bottom "
            "cluster; the dual maximizer should always provide one")
    v = eig.basis[:, eig.anchored]
    return v[1:] / v[0]


def gap_test(instance: ProblemInstance, dual: DualResult, *,
             config: DualConfig | None = None) -> GapCertificate | None:
    """Return a straddling certificate iff the duality gap conditions hold.

    Requires all of: lambda_min(A) strictly negative, simple multiplicity,
    lambda* > 0, and the two real completions of the candidate to the ball
    boundary landing on opposite sides of the hyperplane.  Certificate
    points are re-verified against the stationarity system before a gap is
    declared, since declaring one from noisy eigenvectors is the worst
    failure mode.
    """
    cfg = config or DualConfig()
    eig_a = smallest_eig_A(instance, tol_eig=cfg.tol_eig,
                           tol_cluster=cfg.tol_cluster,
                           dense_threshold=cfg.dense_threshold, seed=cfg.seed)
    if eig_a.value >= -1e-8 * max(1.0, instance.norm_A_inf):
        return None
    if eig_a.multiplicity != 1:
        return None
    lam_star = dual.lambda_star
    if lam_star <= _GAP_LAMBDA_TOL:
        return None
    x = _anchored_candidate(dual.eig_at_opt)
    z = eig_a.basis[:, 0]
    xz = float(x @ z)
    disc = xz * xz - (float(x @ x) - instance.delta)
    if disc < 0.0:
        return None
    root = np.sqrt(disc)
    alphas = (-xz + root, -xz - root)
    g = instance.a - 0.5 * lam_star * instance.b
    tol_res = _CERT_RTOL * max(1.0, float(np.max(np.abs(g))) if g.size else 0.0)
    tol_ball = FEAS_RTOL * max(1.0, instance.delta)
    points = []
    for alpha in alphas:
        xi = x + alpha * z
        resid = instance.A @ xi - eig_a.value * xi - g
        if float(np.max(np.abs(resid))) > tol_res:
            return None
        if abs(float(xi @ xi) - instance.delta) > tol_ball:
            return None
        points.append(xi)
    s1 = float(instance.b @ points[0]) - instance.c
    s2 = float(instance.b @ points[1]) - instance.c
    if s1 * s2 < 0.0:
        return GapCertificate(x1=points[0], x2=points[1], mu=lam_star,
                              signs=(s1, s2))
    return None


def _boundary_roots(x: np.ndarray, d: np.ndarray, delta: float):
    """Real alphas with ||x + alpha d||^2 = delta, allowing a small negative
    discriminant to be clipped to zero."""
    dd = float(d @ d)
    xd = float(x @ d)
    cc = float(x @ x) - delta
    disc = xd * xd - dd * cc
    if disc < 0.0:
        if disc >= -_DISC_RTOL * delta * max(1.0, dd):
            disc = 0.0
        else:
            return None
    root = np.sqrt(disc)
    return ((-xd + root) / dd, (-xd - root) / dd)


def _pick(instance: ProblemInstance, candidates):
    """Among feasible candidates choose the smaller objective, breaking ties
    toward the smaller halfspace slack."""
    tol_lin = FEAS_RTOL * max(1.0, abs(instance.c))
    scored = []
    for x in candidates:
        slack = float(instance.b @ x) - instance.c
        if slack <= tol_lin:
            scored.append((instance.objective(x), slack, x))
    if not scored:
        return None
    scored.sort(key=lambda s: (s[0], s[1]))
    return scored[0][2]


def complete_mult1(instance: ProblemInstance, x_cand: np.ndarray,
                   z: np.ndarray) -> np.ndarray:
    """Boundary completion along a single bottom eigenvector.

    Both roots of ||x_cand + alpha z||^2 = delta are evaluated; the feasible
    one with the smaller objective is returned.
    """
    roots = _boundary_roots(x_cand, z, instance.delta)
    if roots is None:
        raise InternalInconsistencyError(
            "no real boundary completion although the candidate lies inside "
            "the ball")
    chosen = _pick(instance, [x_cand + alpha * z for alpha in roots])
    if chosen is None:
        raise InternalInconsistencyError(
            "neither boundary completion satisfies the linear constraint")
    return chosen


def complete_mult2(instance: ProblemInstance, x_cand: np.ndarray,
                   z1: np.ndarray, z2: np.ndarray,
                   lambda_star: float) -> np.ndarray:
    """Boundary completion inside a two-dimensional bottom eigenspace.

    With a slack constraint (lambda* = 0 and b'x_cand <= c) the correction
    moves along a direction of the eigenplane that leaves b'x unchanged.
    Otherwise both the ball and the hyperplane must be met exactly:
    a circle/line intersection in the (z1, z2) coordinates, including the
    cross terms with x_cand.
    """
    b, c, delta = instance.b, instance.c, instance.delta
    bz1 = float(b @ z1)
    bz2 = float(b @ z2)
    bx = float(b @ x_cand)
    tol_b = 1e-10 * max(1.0, instance.norm_b)
    tol_lin = FEAS_RTOL * max(1.0, abs(c))
    if lambda_star <= _GAP_LAMBDA_TOL and bx <= c + tol_lin:
        if abs(bz1) > tol_b and abs(bz2) > tol_b:
            ratio = bz2 / bz1
            d = -ratio * z1 + z2  # b-neutral direction in the eigenplane
        else:
            d = z1 if abs(bz1) <= abs(bz2) else z2
        roots = _boundary_roots(x_cand, d, delta)
        if roots is None:
            raise InternalInconsistencyError(
                "no real boundary completion in the eigenplane")
        chosen = _pick(instance, [x_cand + alpha * d for alpha in roots])
        if chosen is None:
            raise InternalInconsistencyError(
                "b-neutral boundary completion became infeasible")
        return chosen

    # Circle/line intersection with cross terms: in shifted coordinates
    # beta_i = alpha_i + x_cand' z_i the ball equation is a circle of radius
    # R and the hyperplane is a line.
    xz1 = float(x_cand @ z1)
    xz2 = float(x_cand @ z2)
    r_sq = delta - float(x_cand @ x_cand) + xz1 * xz1 + xz2 * xz2
    gamma = c - bx + bz1 * xz1 + bz2 * xz2
    nb = np.hypot(bz1, bz2)
    if r_sq < 0.0:
        if r_sq < -_DISC_RTOL * delta:
            raise InternalInconsistencyError(
                "eigenplane sphere section is empty")
        r_sq = 0.0
    if nb <= tol_b:
        if abs(gamma) > tol_lin:
            raise InternalInconsistencyError(
                "hyperplane cannot be met from inside the eigenplane")
        betas = [(np.sqrt(r_sq), 0.0), (-np.sqrt(r_sq), 0.0)]
    else:
        foot = gamma / (nb * nb)
        h_sq = r_sq - gamma * gamma / (nb * nb)
        if h_sq < 0.0:
            if h_sq < -_DISC_RTOL * delta:
                raise InternalInconsistencyError(
                    "circle/line completion system has no real solution")
            h_sq = 0.0
        h = np.sqrt(h_sq)
        tx, ty = -bz2 / nb, bz1 / nb
        betas = [(foot * bz1 + h * tx, foot * bz2 + h * ty),
                 (foot * bz1 - h * tx, foot * bz2 - h * ty)]
    candidates = [x_cand + (b1 - xz1) * z1 + (b2 - xz2) * z2
                  for b1, b2 in betas]
    chosen = _pick(instance, candidates)
    if chosen is None:
        raise InternalInconsistencyError(
            "circle/line completions violate the linear constraint")
    return chosen


def deflate_and_reduce(instance: ProblemInstance, eig_a: EigResult):
    """One deflation step for bottom-eigenspace multiplicity above two.

    Picks a normalized bottom eigenvector v with b'v = 0 (always possible
    because the eigenspace dimension exceeds the rank contributed by b) and
    returns the rank-one-shifted operator A + alpha v v' together with v.
    The shift alpha = 1 + |lambda_min(A)| lifts the deflated direction clear
    of the cluster tolerance; the optimal multipliers are unaffected.
    """
    Z = eig_a.basis
    i = Z.shape[1]
    if i <= 2:
        raise ValueError("deflation applies only to multiplicity above two")
    beta = Z.T @ instance.b
    nb = float(np.linalg.norm(beta))
    if nb <= 1e-12 * max(1.0, instance.norm_b):
        v = Z[:, 0].copy()
    else:
        unit = beta / nb
        # Any coordinate direction minus its projection on beta works; take
        # the one with the largest leftover for stability.
        proj = np.eye(i) - np.outer(unit, unit)
        norms = np.linalg.norm(proj, axis=0)
        w = proj[:, int(np.argmax(norms))]
        w /= np.linalg.norm(w)
        v = Z @ w
        v /= np.linalg.norm(v)
    alpha = _DEFLATION_SHIFT_MARGIN + abs(eig_a.value)
    n = instance.n

    def mv(x, _A=instance.A, _v=v, _alpha=alpha):
        return _A @ x + _alpha * _v * (_v @ x)

    op = spla.LinearOperator((n, n), matvec=mv, dtype=np.float64)
    return op, v


def _reduced_eigenspace(instance: ProblemInstance, eig_a: EigResult):
    """Apply deflation until two bottom directions remain.

    The surviving plane always contains the component of b inside the
    eigenspace (a deflated vector is orthogonal to b by construction), so
    the multiplicity-two completion sees the same geometry as the deflated
    problem.  Returns (z1, z2, number_of_deflations).
    """
    Z = eig_a.basis.copy()
    current = EigResult(value=eig_a.value, multiplicity=Z.shape[1], basis=Z,
                        max_residual=eig_a.max_residual)
    deflations = 0
    while current.basis.shape[1] > 2:
        _, v = deflate_and_reduce(instance, current)
        B = current.basis
        # Remove v from the working span and re-orthonormalize.
        B = B - np.outer(v, v @ B)
        q, r = np.linalg.qr(B)
        keep = np.abs(np.diag(r)) > 1e-10
        B = q[:, keep]
        if B.shape[1] != current.basis.shape[1] - 1:
            raise InternalInconsistencyError(
                "deflation failed to reduce the eigenspace dimension by one")
        current = EigResult(value=current.value, multiplicity=B.shape[1],
                            basis=B, max_residual=current.max_residual)
        deflations += 1
    return current.basis[:, 0], current.basis[:, 1], deflations


def _degenerate_fallback(instance: ProblemInstance, x_cand: np.ndarray,
                         eig_a: EigResult, lambda1: float,
                         lambda_star: float):
    """Candidates for the semidefinite corner lambda1 ~ 0, where the ball
    constraint need not be active and the paper-style boundary completion
    can be infeasible."""
    tol_lin = FEAS_RTOL * max(1.0, abs(instance.c))
    tol_ball = FEAS_RTOL * max(1.0, instance.delta)
    candidates = []
    bx = float(instance.b @ x_cand) - instance.c
    if bx <= tol_lin and float(x_cand @ x_cand) <= instance.delta + tol_ball:
        candidates.append(x_cand)
    beta = eig_a.basis.T @ instance.b
    nb = float(np.linalg.norm(beta))
    if nb > 0.0 and lambda_star > _GAP_LAMBDA_TOL:
        w = eig_a.basis @ (beta / nb)
        step = (instance.c - float(instance.b @ x_cand)) / nb
        x = x_cand + step * w
        if float(x @ x) <= instance.delta + tol_ball:
            candidates.append(x)
    return [x for x in candidates
            if float(instance.b @ x) - instance.c <= tol_lin]


def recover(instance: ProblemInstance, dual: DualResult, *,
            config: DualConfig | None = None,
            workspace: Workspace | None = None) -> SolveReport:
    """Turn a dual maximizer into a verified solution or a certified bound."""
    cfg = config or DualConfig()
    eig_a = smallest_eig_A(instance, tol_eig=cfg.tol_eig,
                           tol_cluster=cfg.tol_cluster,
                           dense_threshold=cfg.dense_threshold, seed=cfg.seed)
    diagnostics = dict(dual.diagnostics)
    lambda2 = dual.lambda_star

    if not dual.hard_case:
        x = _anchored_candidate(dual.eig_at_opt)
        lambda1 = -dual.eig_at_opt.value
        diagnostics["branch"] = "easy"
        return _solved_report(instance, x, lambda1, lambda2, diagnostics)

    lambda1 = -eig_a.value
    cert = gap_test(instance, dual, config=cfg)
    if cert is not None:
        diagnostics["branch"] = "gap"
        return SolveReport(status=STATUS_GAP, x_star=None,
                           objective=dual.d_star, lambda1=lambda1,
                           lambda2=lambda2, kkt=None, gap_certificate=cert,
                           diagnostics=diagnostics)

    x_cand = _anchored_candidate(dual.eig_at_opt)
    mult = eig_a.multiplicity
    deflations = 0
    try:
        if mult == 1:
            x = complete_mult1(instance, x_cand, eig_a.basis[:, 0])
            diagnostics["branch"] = "hard-mult1"
        else:
            z1, z2, deflations = _reduced_eigenspace(instance, eig_a)
            x = complete_mult2(instance, x_cand, z1, z2, lambda2)
            diagnostics["branch"] = ("hard-mult2" if mult == 2
                                     else "hard-deflated")
    except InternalInconsistencyError:
        if lambda1 > _GAP_LAMBDA_TOL * max(1.0, abs(eig_a.value)):
            raise
        options = _degenerate_fallback(instance, x_cand, eig_a, lambda1,
                                       lambda2)
        if not options:
            raise
        x = min(options, key=instance.objective)
        diagnostics["branch"] = "hard-degenerate"
    diagnostics["deflations"] = deflations
    return _solved_report(instance, x, lambda1, lambda2, diagnostics)


def _solved_report(instance, x, lambda1, lambda2, diagnostics) -> SolveReport:
    kkt = kkt_residuals(instance, x, lambda1, lambda2)
    return SolveReport(status=STATUS_SOLVED, x_star=x,
                       objective=instance.objective(x), lambda1=lambda1,
                       lambda2=lambda2, kkt=kkt, gap_certificate=None,
                       diagnostics=diagnostics)
