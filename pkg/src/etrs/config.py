"""Solver configuration and per-solve workspace."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .eigen import DENSE_THRESHOLD, TOL_ANCHOR, TOL_CLUSTER, TOL_EIG, MatvecCounter


@dataclass
class DualConfig:
    """Tunable tolerances for the dual solve and everything beneath it.

    ``tol_phi`` controls how tightly the scalar root in the t-search is
    resolved; it sits below the eigenvector noise floor on purpose, because
    the ball complementarity residual of the recovered point is proportional
    to the remaining derivative value.
    """

    max_outer: int = 30
    tol_outer: float = 1e-10
    tol_lambda: float = 1e-10
    lambda_cap: float | None = None
    tol_eig: float = TOL_EIG
    tol_cluster: float = TOL_CLUSTER
    tol_anchor: float = TOL_ANCHOR
    tol_phi: float = 1e-12
    dense_threshold: int = DENSE_THRESHOLD
    seed: int = 0

    def cap_for(self, instance) -> float:
        if self.lambda_cap is not None:
            return self.lambda_cap
        nb = instance.norm_b
        if nb == 0.0:
            return 0.0
        return 1e8 * max(1.0, instance.norm_a / nb)


class Workspace:
    """Mutable per-solve state: warm starts, matvec counter, phase timings.

    One workspace belongs to exactly one solve and must not be shared
    between threads mid-computation.
    """

    def __init__(self, config: DualConfig):
        self.config = config
        self.counter = MatvecCounter()
        self.v0_bordered: np.ndarray | None = None
        self.stalled = False
        self.timings = {"eigen": 0.0, "t_steps": 0.0, "lambda_steps": 0.0,
                        "recovery": 0.0}

    def timed(self, phase: str):
        return _PhaseTimer(self.timings, phase)


class _PhaseTimer:
    def __init__(self, sink, phase):
        self.sink = sink
        self.phase = phase

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.sink[self.phase] += time.perf_counter() - self.start
        return False
