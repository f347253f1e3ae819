"""Problem data and KKT diagnostics for the ball-plus-halfspace quadratic program.

The model problem is

    minimize    x' A x - 2 a' x
    subject to  ||x||^2 <= delta,
                b' x    <= c,

with A sparse symmetric and not positive definite, delta > 0, and a strictly
feasible point available.  Strict feasibility is equivalent to the algebraic
condition -||b|| * sqrt(delta) < c because the minimum of b'x over the closed
ball is exactly -||b|| * sqrt(delta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatchError

# Validation report entries.
ASYMMETRIC_STORAGE = "asymmetric storage"
NONPOSITIVE_DELTA = "delta not positive"
SLATER_FAILURE = "Slater failure"
POSITIVE_DEFINITE = "A positive definite"

# Reject A as positive definite when lambda_min(A) > PD_REJECT_RTOL * max(1, ||A||_inf).
PD_REJECT_RTOL = 1e-10
# Feasibility tolerances used in reports, relative to max(1, delta) / max(1, |c|).
FEAS_RTOL = 1e-8


class ProblemInstance:
    """Immutable quintuple (A, a, b, c, delta) plus cached spectral data.

    ``A`` may be given as any scipy sparse matrix or a dense array; it is
    stored in CSR form.  The instance is logically immutable after
    construction and safe to share across concurrent solves; the only
    mutation is an internal write-once cache for the bottom eigenpair of A.
    """

    def __init__(self, A, a, b, c, delta):
        if sp.issparse(A):
            A = sp.csr_array(A, dtype=np.float64)
        else:
            A = sp.csr_array(np.atleast_2d(np.asarray(A, dtype=np.float64)))
        a = np.asarray(a, dtype=np.float64).ravel()
        b = np.asarray(b, dtype=np.float64).ravel()
        n = A.shape[0]
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatchError(f"A must be square, got {A.shape}")
        if a.shape[0] != n or b.shape[0] != n:
            raise DimensionMismatchError(
                f"vector lengths {a.shape[0]}, {b.shape[0]} do not match A of order {n}"
            )
        if n < 1:
            raise DimensionMismatchError("empty instance")
        self.A = A
        self.a = a
        self.b = b
        self.c = float(c)
        self.delta = float(delta)
        self._eig_a = None  # write-once cache, see eigen.smallest_eig_A

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def nnz(self) -> int:
        return self.A.nnz

    @property
    def norm_a(self) -> float:
        return float(np.linalg.norm(self.a))

    @property
    def norm_b(self) -> float:
        return float(np.linalg.norm(self.b))

    @property
    def norm_A_inf(self) -> float:
        if self.A.nnz == 0:
            return 0.0
        return float(np.abs(self.A).sum(axis=1).max())

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).ravel()
        return float(x @ (self.A @ x) - 2.0 * (self.a @ x))

    def __repr__(self):
        return (
            f"ProblemInstance(n={self.n}, nnz={self.nnz}, c={self.c!r}, "
            f"delta={self.delta!r})"
        )


@dataclass
class ValidationReport:
    """Outcome of assumption checking: empty ``entries`` means accepted.

    The positive-definiteness check needs lambda_min(A); when that has not
    been computed yet the report is returned with ``eig_checked=False``
    ("pending eigen check") and the entry list covers only the cheap tests.
    """

    entries: list
    eig_checked: bool = False

    @property
    def ok(self) -> bool:
        return not self.entries

    @property
    def pending(self) -> bool:
        return not self.eig_checked


@dataclass
class KktResiduals:
    """First-order optimality residuals at a primal-dual triple (x, lambda1, lambda2).

    kkt1 is the stationarity residual ||(A + lambda1 I) x - (a - lambda2/2 b)||_inf,
    kkt2 and kkt3 are the ball and halfspace complementarity products, and the
    primal_* fields are the raw feasibility gaps.
    """

    kkt1: float
    kkt2: float
    kkt3: float
    primal_ball: float
    primal_lin: float

    def feasible(self, instance: ProblemInstance) -> bool:
        tol_ball = FEAS_RTOL * max(1.0, instance.delta)
        tol_lin = FEAS_RTOL * max(1.0, abs(instance.c))
        return self.primal_ball <= tol_ball and self.primal_lin <= tol_lin


def validate(instance: ProblemInstance, compute_eig: bool = False) -> ValidationReport:
    """Check the standing assumptions; return the list of violations.

    The Slater test is the strict inequality -||b||*sqrt(delta) < c with no
    tolerance: it is an exact algebraic equivalence and borderline instances
    genuinely violate the model.  The positive-definiteness test runs only
    when the bottom eigenpair of A is already cached or ``compute_eig`` is
    set, since it requires an eigenvalue computation.
    """
    entries = []
    diff = instance.A - instance.A.T
    if diff.nnz and float(np.abs(diff.data).max()) > 0.0:
        entries.append(ASYMMETRIC_STORAGE)
    if not instance.delta > 0.0:
        entries.append(NONPOSITIVE_DELTA)
    root = np.sqrt(instance.delta) if instance.delta > 0.0 else 0.0
    if not (-instance.norm_b * root < instance.c):
        entries.append(SLATER_FAILURE)
    eig_checked = False
    if compute_eig or instance._eig_a is not None:
        from .eigen import smallest_eig_A

        value = smallest_eig_A(instance).value
        if value > PD_REJECT_RTOL * max(1.0, instance.norm_A_inf):
            entries.append(POSITIVE_DEFINITE)
        eig_checked = True
    return ValidationReport(entries, eig_checked)


def kkt_residuals(instance: ProblemInstance, x, lambda1: float, lambda2: float) -> KktResiduals:
    """Evaluate the three KKT residuals and the raw feasibility gaps at (x, lambda1, lambda2).

    Pure function of its inputs; expects lambda1 >= 0 and lambda2 >= 0.  The
    complementarity products are formed literally as lambda * gap so that a
    factor that is exactly zero yields an exactly zero residual.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != instance.n:
        raise DimensionMismatchError(
            f"x has length {x.shape[0]}, expected {instance.n}"
        )
    rhs = instance.a - 0.5 * lambda2 * instance.b
    stat = instance.A @ x + lambda1 * x - rhs
    norm_sq = float(x @ x)
    ball_gap = norm_sq - instance.delta
    lin_gap = float(instance.b @ x) - instance.c
    return KktResiduals(
        kkt1=float(np.max(np.abs(stat))) if x.size else 0.0,
        kkt2=lambda1 * ball_gap,
        kkt3=lambda2 * lin_gap,
        primal_ball=ball_gap,
        primal_lin=lin_gap,
    )
