"""Smallest-eigenpair engine for sparse symmetric operators.

Everything downstream needs the same primitive: the smallest eigenvalue of a
symmetric operator, the size of its eigenvalue cluster at a given resolution,
and an orthonormal basis for that cluster.  Operators are accessed through
matrix-vector products only; both the problem matrix A and the bordered
(n+1) x (n+1) operator

    D(t, lambda) = [ t                   (-a + lambda/2 b)' ]
                   [ (-a + lambda/2 b)    A                 ]

go through the same path.  For bordered operators the basis is additionally
rotated so that at most one basis vector has a nonzero first component (the
"anchored" vector), which is the vector the primal recovery consumes.

Small operators fall back to a dense symmetric eigendecomposition, which
doubles as the reference the iterative path is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import EigenConvergenceError
from .problem import ProblemInstance

# Defaults; callers override through DualConfig.
TOL_EIG = 1e-10
TOL_CLUSTER = 1e-8
TOL_ANCHOR = 1e-6
DENSE_THRESHOLD = 400

# ARPACK is run essentially to machine precision: the dual solver's stopping
# tests sit close to the eigenvector noise floor, so a loose eigensolve here
# would show up directly in the KKT residuals.
_ARPACK_TOL = 1e-13
# Hard cap on how far the cluster-resolution loop may grow the subspace.
_CLUSTER_K_CAP = 64


class MatvecCounter:
    """Shared mutable counter for operator applications within one solve."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def add(self, k: int = 1):
        self.count += k


@dataclass
class EigResult:
    """Bottom eigenvalue of a symmetric operator with its cluster basis.

    ``basis`` has orthonormal columns spanning the eigenvalue cluster of size
    ``multiplicity``; ``anchored`` indexes a basis column with nonzero first
    component once :func:`anchor_basis` has run (bordered operators only).
    ``cluster_resolved`` is False when the cluster could not be separated
    from the rest of the spectrum within the subspace-growth cap.
    """

    value: float
    multiplicity: int
    basis: np.ndarray
    anchored: int | None = None
    max_residual: float = float("nan")
    cluster_resolved: bool = True


class BorderedOperator(spla.LinearOperator):
    """Implicit (n+1) x (n+1) operator bordering A with -a + lambda/2 b.

    Never materialized above the dense-fallback threshold; the matvec against
    (y0, z) returns (t*y0 + q'z, y0*q + A z) with q = -a + lambda/2 b.
    """

    def __init__(self, instance: ProblemInstance, t: float, lam: float,
                 counter: MatvecCounter | None = None):
        n = instance.n
        super().__init__(dtype=np.float64, shape=(n + 1, n + 1))
        self.instance = instance
        self.t = float(t)
        self.lam = float(lam)
        self.border = -instance.a + 0.5 * lam * instance.b
        self.counter = counter

    def _matvec(self, v):
        v = np.asarray(v, dtype=np.float64).ravel()
        if self.counter is not None:
            self.counter.add()
        y0 = v[0]
        z = v[1:]
        out = np.empty_like(v)
        out[0] = self.t * y0 + self.border @ z
        out[1:] = y0 * self.border + self.instance.A @ z
        return out

    def dense(self) -> np.ndarray:
        n = self.instance.n
        M = np.empty((n + 1, n + 1))
        M[0, 0] = self.t
        M[0, 1:] = self.border
        M[1:, 0] = self.border
        M[1:, 1:] = self.instance.A.toarray()
        return M


def _materialize(M) -> np.ndarray:
    if isinstance(M, BorderedOperator):
        return M.dense()
    if sp.issparse(M):
        return M.toarray()
    if isinstance(M, np.ndarray):
        return M
    # Generic operator: assemble column by column.
    m = M.shape[0]
    return M @ np.eye(m)


def _cluster_size(vals: np.ndarray, tol_cluster: float) -> int:
    width = tol_cluster * max(1.0, abs(vals[0]))
    return int(np.count_nonzero(vals - vals[0] <= width))


def _residuals(M, vals, vecs) -> float:
    worst = 0.0
    for j in range(vecs.shape[1]):
        r = M @ vecs[:, j] - vals[j] * vecs[:, j]
        worst = max(worst, float(np.linalg.norm(r)))
    return worst


def smallest_eigpair(M, k_hint: int = 1, *, tol_eig: float = TOL_EIG,
                     tol_cluster: float = TOL_CLUSTER,
                     dense_threshold: int = DENSE_THRESHOLD,
                     v0: np.ndarray | None = None, seed: int = 0,
                     maxiter: int | None = None) -> EigResult:
    """Smallest eigenvalue of a symmetric operator with its cluster basis.

    ``k_hint`` suggests how many bottom eigenpairs must be resolved (the
    expected cluster size).  The subspace is grown until at least one Ritz
    value clearly outside the bottom cluster is seen, so the reported
    multiplicity is decided by Ritz-value clustering at resolution
    ``tol_cluster``, never by symbolic rank.

    Deterministic given ``seed`` (or an explicit starting vector ``v0``).
    Raises :class:`EigenConvergenceError` when ARPACK fails even after a
    retry with an enlarged subspace; the error carries the best Ritz value.
    """
    m = M.shape[0]
    if m <= max(dense_threshold, 3):
        Md = _materialize(M)
        vals, vecs = np.linalg.eigh(Md)
        r = _cluster_size(vals, tol_cluster)
        res = EigResult(float(vals[0]), r, vecs[:, :r].copy(),
                        max_residual=_residuals(M, vals[:r], vecs[:, :r]),
                        cluster_resolved=True)
        return res

    if v0 is not None and v0.shape[0] != m:
        v0 = None
    if v0 is None:
        v0 = np.random.default_rng(seed).standard_normal(m)

    k = min(m - 1, max(k_hint, 2) + 1)
    resolved = True
    while True:
        vals, vecs = _eigsh_with_retry(M, k, v0, maxiter)
        order = np.argsort(vals)
        vals = vals[order]
        vecs = vecs[:, order]
        r = _cluster_size(vals, tol_cluster)
        if r < len(vals) or k >= min(m - 1, _CLUSTER_K_CAP):
            resolved = r < len(vals)
            break
        k = min(m - 1, 2 * k)
        v0 = vecs[:, 0]
    basis = vecs[:, :r].copy()
    return EigResult(float(vals[0]), r, basis,
                     max_residual=_residuals(M, vals[:r], basis),
                     cluster_resolved=resolved)


def _eigsh_with_retry(M, k, v0, maxiter):
    m = M.shape[0]
    ncv = min(m, max(2 * k + 1, 20))
    try:
        return spla.eigsh(M, k=k, which="SA", v0=v0, tol=_ARPACK_TOL,
                          ncv=ncv, maxiter=maxiter)
    except spla.ArpackNoConvergence as err:
        try:
            return spla.eigsh(M, k=k, which="SA", v0=v0, tol=_ARPACK_TOL,
                              ncv=min(m, max(4 * k + 1, 40)),
                              maxiter=(maxiter or 10 * m) * 4)
        except spla.ArpackNoConvergence as err2:
            best = None
            if len(err2.eigenvalues):
                best = float(np.min(err2.eigenvalues))
            elif len(err.eigenvalues):
                best = float(np.min(err.eigenvalues))
            raise EigenConvergenceError(
                f"Lanczos did not converge for operator of order {m}",
                best_estimate=best) from err2


def anchor_basis(result: EigResult, tol_anchor: float = TOL_ANCHOR) -> EigResult:
    """Rotate a cluster basis so at most one vector has nonzero first component.

    The rotation is a Householder sweep acting on the first-component
    coordinates; it stays inside the eigenspace, so eigen-residuals and
    orthonormality are preserved.  When every first component is below
    ``tol_anchor`` the anchored index is absent.
    """
    V = result.basis
    w = V[0, :].copy()
    nw = float(np.linalg.norm(w))
    if nw <= tol_anchor:
        return replace(result, anchored=None)
    r = V.shape[1]
    if r == 1:
        Vr = V if V[0, 0] > 0 else -V
        return replace(result, basis=Vr, anchored=0)
    u = w.copy()
    u[0] -= nw
    nu2 = float(u @ u)
    if nu2 > 0.0:
        # V <- V H with H = I - 2 u u' / ||u||^2, so the first row becomes nw * e1.
        Vr = V - np.outer(V @ u, u) * (2.0 / nu2)
    else:
        Vr = V.copy()
    if Vr[0, 0] < 0:
        Vr[:, 0] = -Vr[:, 0]
    return replace(result, basis=Vr, anchored=0)


def smallest_eig_A(instance: ProblemInstance, *, tol_eig: float = TOL_EIG,
                   tol_cluster: float = TOL_CLUSTER,
                   dense_threshold: int = DENSE_THRESHOLD, seed: int = 0,
                   counter: MatvecCounter | None = None) -> EigResult:
    """Bottom eigenpair of A, cached on the instance after the first call."""
    if instance._eig_a is not None:
        return instance._eig_a
    if instance.n <= dense_threshold or counter is None:
        op = instance.A
    else:
        op = spla.LinearOperator(
            instance.A.shape,
            matvec=lambda v, _A=instance.A, _c=counter: (_c.add(), _A @ v)[1],
            dtype=np.float64)
    result = smallest_eigpair(op, k_hint=2, tol_eig=tol_eig,
                              tol_cluster=tol_cluster,
                              dense_threshold=dense_threshold, seed=seed)
    instance._eig_a = result
    return result
