"""Random test-problem families and an exact dense reference solver.

Two generator families are provided:

  * class 1 plants a prescribed multiplicity m at the bottom of the
    spectrum: a random sparse symmetric block is extended by a scalar
    diagonal block sitting a gap alpha below its smallest eigenvalue, then
    the rows and columns are randomly permuted;
  * class 2 draws a random sparse symmetric matrix (shifted if necessary so
    the bottom eigenvalue is at most -0.1), with the halfspace fixed to
    e1' x <= 1.

The reference solver enumerates every KKT configuration of the
two-constraint problem on a dense eigendecomposition:

  * all stationary points of the ball-only problem with multiplier nu >= 0
    (interior families, boundary secular roots between consecutive poles,
    and boundary families at eigenvalues the linear term avoids), filtered
    against the halfspace;
  * the problem restricted to the hyperplane b'x = c, reduced to an
    (n-1)-dimensional ball problem through an orthonormal parametrization.

Every enumerated candidate is feasible and the global optimum is always
among them: it either makes the linear constraint active (hyperplane
branch) or is a local minimizer of the ball-only problem, and all ball-only
KKT points with nonnegative multiplier appear in the stationary sweep.  The
minimum over the enumeration is therefore exact, including instances whose
optimum sits at a local-but-not-global minimizer of the relaxed ball
problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import EtrsError, OracleSizeError
from .problem import ProblemInstance

CLASS1 = "class1"
CLASS2 = "class2"

ORACLE_CAP = 400

_GROUP_RTOL = 1e-9        # eigenvalue grouping resolution
_POLE_RTOL = 1e-10        # linear-term component below which a pole is absent
_FEAS_RTOL = 1e-9


@dataclass
class GenSpec:
    """Parameters of one generated instance family member."""

    class_id: str
    n: int
    density: float = 0.01
    m: int = 2
    alpha: float = 1.0
    seed: int = 0


def _random_sparse_symmetric(n: int, density: float, rng) -> sp.csr_array:
    """Sparse symmetric matrix with about density*n^2 stored entries.

    Positions are sampled uniformly in the upper triangle, values are
    standard normal, and the matrix is symmetrized.
    """
    target = max(1, int(round(density * n * n / 2.0)))
    i = rng.integers(0, n, size=target)
    j = rng.integers(0, n, size=target)
    upper = np.minimum(i, j) * n + np.maximum(i, j)
    upper = np.unique(upper)
    rows = upper // n
    cols = upper % n
    vals = rng.standard_normal(rows.shape[0])
    off = rows != cols
    data = np.concatenate([vals, vals[off]])
    ri = np.concatenate([rows, cols[off]])
    ci = np.concatenate([cols, rows[off]])
    return sp.csr_array(sp.coo_array((data, (ri, ci)), shape=(n, n)))


def _bottom_eigenvalue(A) -> float:
    n = A.shape[0]
    if n <= ORACLE_CAP:
        return float(np.linalg.eigvalsh(A.toarray())[0])
    val = spla.eigsh(A, k=1, which="SA", return_eigenvectors=False,
                     v0=np.ones(n), tol=1e-9)
    return float(val[0])


def _symmetric_permutation(A, perm) -> sp.csr_array:
    n = A.shape[0]
    P = sp.coo_array((np.ones(n), (np.arange(n), perm)), shape=(n, n))
    return sp.csr_array(P @ A @ P.T)


def _draw_slater_c(b: np.ndarray, delta: float, rng) -> float:
    """c drawn around b'xbar for a random strictly interior xbar, redrawn on
    the rare event that the strict feasibility inequality fails."""
    nb = float(np.linalg.norm(b))
    floor = -nb * np.sqrt(delta)
    for _ in range(100):
        direction = rng.standard_normal(b.shape[0])
        direction /= np.linalg.norm(direction)
        xbar = direction * (0.9 * np.sqrt(delta) * rng.random())
        c = rng.uniform(b @ xbar - 1.0, b @ xbar + 1.0)
        if c > floor:
            return float(c)
    raise EtrsError("could not draw a strictly feasible c")


def generate_class1(spec: GenSpec) -> ProblemInstance:
    """Instance whose bottom eigenvalue has planted multiplicity spec.m."""
    if spec.class_id != CLASS1:
        raise ValueError(f"expected a {CLASS1} spec, got {spec.class_id}")
    if not 0 < spec.m < spec.n:
        raise ValueError("need 0 < m < n for a planted multiplicity")
    if spec.alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(spec.seed)
    n0 = spec.n - spec.m
    A0 = _random_sparse_symmetric(n0, spec.density, rng)
    bottom = _bottom_eigenvalue(A0)
    block = sp.identity(spec.m, format="csr") * (bottom - spec.alpha)
    A = sp.block_diag([A0, block], format="csr")
    A = _symmetric_permutation(A, rng.permutation(spec.n))
    a = 10.0 * rng.standard_normal(spec.n)
    b = 10.0 * rng.standard_normal(spec.n)
    delta = 1.0
    c = _draw_slater_c(b, delta, rng)
    return ProblemInstance(A, a, b, c, delta)


def generate_class2(spec: GenSpec) -> ProblemInstance:
    """Instance with b = e1 and c = 1; A shifted to keep the bottom
    eigenvalue at or below -0.1."""
    if spec.class_id != CLASS2:
        raise ValueError(f"expected a {CLASS2} spec, got {spec.class_id}")
    rng = np.random.default_rng(spec.seed)
    A = _random_sparse_symmetric(spec.n, spec.density, rng)
    bottom = _bottom_eigenvalue(A)
    if bottom > -0.1:
        A = sp.csr_array(A - (bottom + 0.1) * sp.identity(spec.n, format="csr"))
    a = 10.0 * rng.standard_normal(spec.n)
    b = np.zeros(spec.n)
    b[0] = 1.0
    return ProblemInstance(A, a, b, 1.0, 1.0)


def generate(spec: GenSpec) -> ProblemInstance:
    if spec.class_id == CLASS1:
        return generate_class1(spec)
    if spec.class_id == CLASS2:
        return generate_class2(spec)
    raise ValueError(f"unknown class {spec.class_id!r}")


# ---------------------------------------------------------------------------
# Dense reference solver.


def _group_eigenvalues(lam: np.ndarray):
    """(value, slice) pairs of equal-eigenvalue groups."""
    scale = max(1.0, float(np.max(np.abs(lam))))
    tol = _GROUP_RTOL * scale
    groups = []
    start = 0
    for k in range(1, len(lam) + 1):
        if k == len(lam) or lam[k] - lam[start] > tol:
            groups.append((float(np.mean(lam[start:k])), slice(start, k)))
            start = k
    return groups


def _ball_candidates(Ad: np.ndarray, avec: np.ndarray, delta: float):
    """Stationary candidates of min x'Ax - 2a'x over the ball of squared
    radius delta, each carrying its objective value.

    Yields dicts with a base point ``u``, an optional eigenspace ``S`` of
    free directions (objective constant over the family), the family radius
    ``r``, whether the family lives on the sphere or fills the ball, and
    the value.
    """
    lam, Q = np.linalg.eigh(Ad)
    w = Q.T @ avec
    groups = _group_eigenvalues(lam)
    scale_lam = max(1.0, float(np.max(np.abs(lam))))
    wscale = max(1.0, float(np.linalg.norm(w)))
    group_w = [float(np.linalg.norm(w[s])) for _, s in groups]

    def objective(x):
        return float(x @ (Ad @ x) - 2.0 * (avec @ x))

    def point_at(nu):
        d = lam + nu
        with np.errstate(divide="ignore", invalid="ignore"):
            y = w / d
        y[~np.isfinite(y)] = 0.0
        return Q @ y

    candidates = []

    # Interior stationary family (multiplier zero): requires A positive
    # semidefinite and the linear term consistent on the null directions.
    if lam[0] >= -_GROUP_RTOL * scale_lam:
        null_mask = np.abs(lam) <= _GROUP_RTOL * scale_lam
        if float(np.linalg.norm(w[null_mask])) <= _POLE_RTOL * wscale:
            keep = ~null_mask
            u = Q[:, keep] @ (w[keep] / lam[keep]) if keep.any() else np.zeros(len(lam))
            u_sq = float(u @ u)
            if u_sq <= delta * (1.0 + 1e-12):
                r = float(np.sqrt(max(delta - u_sq, 0.0)))
                candidates.append({"u": u, "S": Q[:, null_mask], "r": r,
                                   "on_sphere": False, "value": objective(u)})

    # Boundary families at nu = -(group eigenvalue) >= 0 where the linear
    # term has no component on the group eigenspace.
    for (gl, s), gw in zip(groups, group_w):
        nu = -gl
        if nu < -_GROUP_RTOL * scale_lam:
            continue
        if gw > _POLE_RTOL * wscale:
            continue
        d = lam - gl
        keep = np.abs(d) > _GROUP_RTOL * scale_lam
        u = Q[:, keep] @ (w[keep] / d[keep]) if keep.any() else np.zeros(len(lam))
        u_sq = float(u @ u)
        if u_sq > delta * (1.0 + 1e-12):
            continue
        r = float(np.sqrt(max(delta - u_sq, 0.0)))
        candidates.append({"u": u, "S": Q[:, s], "r": r, "on_sphere": True,
                           "value": objective(u) + gl * r * r})

    # Boundary points strictly between breakpoints: roots of the secular
    # equation ||x(nu)||^2 = delta; the squared norm is convex on each open
    # interval, so there are at most two roots per interval.
    def secular(nu):
        x = point_at(nu)
        return float(x @ x) - delta

    breakpoints = sorted({-gl for gl, _ in groups})
    poles = {-gl for (gl, _), gw in zip(groups, group_w)
             if gw > _POLE_RTOL * wscale}
    edges = [-np.inf] + breakpoints + [np.inf]
    span = max(1.0, scale_lam, float(np.linalg.norm(w)) / np.sqrt(delta))
    for left, right in zip(edges[:-1], edges[1:]):
        if right <= 0.0:
            continue
        lo = max(left, 0.0)
        a_end = _inner_point(secular, lo, +1.0, lo in poles, span)
        b_end = _inner_point(secular, right, -1.0, right in poles, span,
                             floor=a_end)
        if a_end is None or b_end is None or not a_end < b_end:
            continue
        for nu in _convex_roots(secular, a_end, b_end):
            x = point_at(nu)
            candidates.append({"u": x, "S": None, "r": 0.0, "on_sphere": True,
                               "value": objective(x)})
    return candidates


def _inner_point(f, end, direction, is_pole, span, floor=None):
    """A finite evaluation point just inside an interval end.

    ``direction`` is +1 when stepping right from a left end and -1 when
    stepping left from a right end; infinite right ends are expanded by
    doubling until the secular value has dropped below zero.
    """
    if np.isinf(end):
        base = floor if floor is not None and np.isfinite(floor) else 0.0
        step = span
        for _ in range(200):
            cand = base + step
            if f(cand) < 0.0:
                return cand
            step *= 2.0
        return base + step
    if not is_pole:
        return end + direction * 1e-12 * max(1.0, abs(end))
    step = 1e-12 * max(1.0, abs(end))
    for _ in range(40):
        cand = end + direction * step
        val = f(cand)
        if np.isfinite(val) and val > 0.0:
            return cand
        step *= 1e-3 if np.isfinite(val) else 1e3
        if step < 1e-30 or step > span:
            break
    return None


def _convex_roots(f, a_end, b_end):
    """Roots of a convex scalar function on [a_end, b_end]."""
    fa, fb = f(a_end), f(b_end)
    roots = []
    if fa > 0.0 >= fb or fb > 0.0 >= fa:
        roots.append(scipy.optimize.brentq(f, a_end, b_end, xtol=1e-14,
                                           rtol=8.9e-16, maxiter=200))
    elif fa > 0.0 and fb > 0.0:
        res = scipy.optimize.minimize_scalar(
            f, bounds=(a_end, b_end), method="bounded",
            options={"xatol": 1e-13 * max(1.0, abs(b_end))})
        if res.fun <= 0.0:
            nu_m = float(res.x)
            if a_end < nu_m:
                roots.append(scipy.optimize.brentq(f, a_end, nu_m, xtol=1e-14,
                                                   rtol=8.9e-16, maxiter=200))
            if nu_m < b_end:
                roots.append(scipy.optimize.brentq(f, nu_m, b_end, xtol=1e-14,
                                                   rtol=8.9e-16, maxiter=200))
    # Both ends nonpositive: convexity rules out an interior crossing.
    return roots


def _feasible_member(cand, b: np.ndarray, c: float, tol: float):
    """A feasible representative of a candidate family, or None."""
    u = cand["u"]
    S = cand["S"]
    r = cand["r"]
    bu = float(b @ u)
    if S is None or S.shape[1] == 0:
        return u if bu <= c + tol else None
    sb = S.T @ b
    nsb = float(np.linalg.norm(sb))
    if cand["on_sphere"]:
        if r == 0.0:
            return u if bu <= c + tol else None
        if nsb == 0.0:
            return u + r * S[:, 0] if bu <= c + tol else None
        if bu - r * nsb > c + tol:
            return None
        return u + S @ (-(r / nsb) * sb)
    # Ball family: prefer the base point, else move toward feasibility.
    if bu <= c + tol:
        return u
    if nsb == 0.0:
        return None
    needed = (bu - c) / nsb
    if needed > r * (1.0 + 1e-12) + tol:
        return None
    return u + S @ (-(min(needed, r) / nsb) * sb)


def _family_representative(cand):
    u = cand["u"]
    if cand["S"] is not None and cand["on_sphere"] and cand["r"] > 0.0:
        return u + cand["r"] * cand["S"][:, 0]
    return u


def oracle_solve(instance: ProblemInstance, cap: int = ORACLE_CAP):
    """Exact global optimum by dense KKT enumeration; returns (p_star, x).

    Independent of the dual solver: built entirely from a dense
    eigendecomposition, scalar secular root finding, and an orthonormal
    reduction onto the hyperplane.
    """
    n = instance.n
    if n > cap:
        raise OracleSizeError(f"reference solver limited to n <= {cap}, got {n}")
    Ad = instance.A.toarray()
    avec = instance.a
    b = instance.b
    c = instance.c
    delta = instance.delta
    tol = _FEAS_RTOL * max(1.0, abs(c))

    best_val = np.inf
    best_x = None
    for cand in _ball_candidates(Ad, avec, delta):
        x = _feasible_member(cand, b, c, tol)
        if x is None:
            continue
        if cand["value"] < best_val:
            best_val, best_x = cand["value"], x

    nb = float(np.linalg.norm(b))
    if nb > 0.0:
        x0 = (c / (nb * nb)) * b
        slack = delta - float(x0 @ x0)
        if slack >= -1e-14 * max(1.0, delta):
            W = scipy.linalg.null_space(b[None, :])
            const = float(x0 @ (Ad @ x0) - 2.0 * (avec @ x0))
            if slack <= 0.0 or W.shape[1] == 0:
                if const < best_val:
                    best_val, best_x = const, x0
            else:
                At = W.T @ Ad @ W
                at = W.T @ (avec - Ad @ x0)
                for cand in _ball_candidates(At, at, slack):
                    if const + cand["value"] < best_val:
                        best_val = const + cand["value"]
                        best_x = x0 + W @ _family_representative(cand)
    if best_x is None:
        raise EtrsError("reference solver found no feasible candidate")
    return float(best_val), best_x
