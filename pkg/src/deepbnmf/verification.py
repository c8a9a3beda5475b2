"""Independent verification oracles: brute-force minimizers, majorizer checks.

Nothing here shares code with the solver kernels on purpose; these routines
exist so every closed-form update can be cross-checked against a dumb,
obviously-correct search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OracleError


def brute_force_scalar_min(
    objective: Callable,
    lo: float,
    hi: float,
    levels: int = 6,
    points: int = 1000,
) -> float:
    """Argmin of a unimodal scalar function by multi-level grid refinement.

    ``objective`` must accept a numpy array of abscissae.  Each level zooms
    into one grid cell around the current best point, so the final resolution
    is roughly ``(hi - lo) * (2 / points) ** levels``.
    """
    if not hi > lo:
        raise OracleError("need lo < hi")
    a, b = float(lo), float(hi)
    best = None
    for _ in range(levels):
        grid = np.linspace(a, b, points)
        vals = np.asarray(objective(grid), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise OracleError("objective is not finite on the search grid")
        k = int(np.argmin(vals))
        best = grid[k]
        step = (b - a) / (points - 1)
        a, b = max(lo, best - step), min(hi, best + step)
        if b <= a:
            break
    return float(best)


def simplex_descent_min(
    objective: Callable,
    dim: int,
    halvings: int = 45,
    initial_step: float = 0.5,
) -> np.ndarray:
    """Minimizer of a convex function over the probability simplex.

    Pairwise mass-transfer descent with step halving: starting from the
    barycenter, repeatedly move ``step`` of mass between coordinate pairs
    while that improves the objective, then halve the step.  Transfers span
    every edge direction of the simplex, so for convex objectives the limit
    satisfies the constrained optimality conditions.  Deliberately naive and
    independent of any multiplier-based solver.
    """
    x = np.full(dim, 1.0 / dim)
    best = float(objective(x))
    if not np.isfinite(best):
        raise OracleError("objective is not finite at the barycenter")
    step = initial_step
    for _ in range(halvings):
        improved = True
        while improved:
            improved = False
            for j in range(dim):
                for i in range(dim):
                    if i == j or x[j] < step:
                        continue
                    y = x.copy()
                    y[i] += step
                    y[j] -= step
                    val = float(objective(y))
                    if val < best:
                        x, best = y, val
                        improved = True
        step *= 0.5
    return x


@dataclass(frozen=True)
class MajorizerReport:
    """Outcome of a tangency-and-domination check for a surrogate function."""

    tangency_gap: float
    worst_margin: float
    samples: int
    passed: bool


def check_majorizer(
    f: Callable,
    u: Callable,
    x_ref,
    samples: int,
    sampler: Callable = None,
    seed: int = 0,
    tangency_tol: float = 1e-9,
    domination_slack: float = 1e-9,
) -> MajorizerReport:
    """Check that ``u(y, x_ref) >= f(y)`` with equality at ``y = x_ref``.

    ``sampler(rng)`` draws random feasible points; the default perturbs
    ``x_ref`` entrywise by uniform positive factors in [0.2, 2].  The worst
    margin is ``min(u(y, x_ref) - f(y))`` over the draws; negative values
    beyond ``domination_slack`` fail the check.
    """
    rng = np.random.default_rng(seed)
    ref = np.asarray(x_ref, dtype=float)
    if sampler is None:
        sampler = lambda r: ref * r.uniform(0.2, 2.0, size=ref.shape)
    tangency_gap = abs(float(u(ref, ref)) - float(f(ref)))
    worst = np.inf
    for _ in range(samples):
        y = sampler(rng)
        margin = float(u(y, ref)) - float(f(y))
        worst = min(worst, margin)
    passed = tangency_gap <= tangency_tol and worst >= -domination_slack
    return MajorizerReport(
        tangency_gap=tangency_gap,
        worst_margin=worst,
        samples=samples,
        passed=passed,
    )
