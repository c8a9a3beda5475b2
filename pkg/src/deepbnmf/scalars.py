"""Scalar numerical kernels: Lambert W, depressed cubics, safeguarded roots.

These routines back every closed-form multiplicative update in the package,
so they aim for near machine precision rather than speed-at-any-cost.

References
----------
R.M. Corless, G.H. Gonnet, D.E.G. Hare, D.J. Jeffrey, and D.E. Knuth,
"On the Lambert W Function", Advances in Computational Mathematics, 1996.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NoRootError, PreconditionError

# Arguments of exp() above this are treated as overflow-prone and routed
# through the log-domain Lambert solver.
EXP_OVERFLOW_LIMIT = 700.0


@dataclass(frozen=True)
class Bracket:
    """Closed interval [lo, hi] known to contain a root."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")


def _halley_direct(w, x):
    # Halley iteration on f(w) = w*exp(w) - x.  Converged entries are frozen
    # so results do not depend on how the array is chunked.
    active = np.ones(w.shape, dtype=bool)
    for _ in range(50):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = np.where(active, f / denom, 0.0)
        w = w - step
        active = active & (np.abs(step) > 1e-16 * (1.0 + np.abs(w)))
        if not active.any():
            break
    return w


def lambert_w0(x):
    """Principal branch of the Lambert W function for x >= 0.

    Solves ``w * exp(w) = x``.  Accepts scalars or arrays; the result has
    the shape of the input.  Accuracy: ``|w exp(w) - x| <= 1e-12 * max(1, x)``.
    """
    arr = np.asarray(x, dtype=float)
    if arr.size and (np.any(arr < 0) or not np.all(np.isfinite(arr))):
        raise DomainError("lambert_w0 requires finite nonnegative input")
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(np.where(arr > 0, arr, 1.0))
        guess = np.where(
            arr <= np.e,
            np.log1p(arr),
            lx - np.log(np.where(lx > 0, lx, 1.0)),
        )
    w = _halley_direct(guess, arr)
    w = np.where(arr == 0.0, 0.0, w)
    if np.ndim(x) == 0:
        return float(w)
    return w


def lambert_w0_from_log(log_x):
    """Lambert W of ``exp(log_x)``, evaluated without forming the argument.

    Solves ``w + log(w) = log_x``, which is the update equation in the log
    domain; intended for arguments too large to exponentiate.  For
    ``log_x < 1`` it defers to :func:`lambert_w0` (no overflow possible).
    """
    arr = np.asarray(log_x, dtype=float)
    if arr.size and np.any(np.isnan(arr)):
        raise DomainError("lambert_w0_from_log requires non-NaN input")
    small = arr < 1.0
    out = np.empty(arr.shape, dtype=float)
    if small.any():
        out[small] = np.asarray(lambert_w0(np.exp(arr[small])))
    big = ~small
    if big.any():
        lx = arr[big]
        # w ~= lx - log(lx) is the standard asymptotic starting point.
        w = lx - np.log(lx)
        w = np.maximum(w, 1.0)
        active = np.ones(w.shape, dtype=bool)
        for _ in range(50):
            g = w + np.log(w) - lx
            gp = 1.0 + 1.0 / w
            gpp = -1.0 / (w * w)
            step = np.where(active, 2.0 * g * gp / (2.0 * gp * gp - g * gpp), 0.0)
            w = w - step
            active = active & (np.abs(step) > 1e-16 * (1.0 + np.abs(w)))
            if not active.any():
                break
        out[big] = w
    if np.ndim(log_x) == 0:
        return float(out)
    return out


def lambert_w0_exp(t):
    """Overflow-safe ``lambert_w0(exp(t))`` for real ``t`` (``-inf`` allowed)."""
    arr = np.asarray(t, dtype=float)
    out = np.empty(arr.shape, dtype=float)
    direct = arr <= EXP_OVERFLOW_LIMIT
    if direct.any():
        out[direct] = np.asarray(lambert_w0(np.exp(arr[direct])))
    if (~direct).any():
        out[~direct] = np.asarray(lambert_w0_from_log(arr[~direct]))
    if np.ndim(t) == 0:
        return float(out)
    return out


def cubic_one_real_root(a: float, b: float) -> float:
    """Unique real root of ``z**3 + a*z + b = 0`` when the other two are complex.

    Uses the Cardano radical form with sign-aware cube roots.  Requires a
    positive discriminant ``b**2/4 + a**3/27``; the three-real-roots case is
    rejected so callers can fall back to bracketed iteration.
    """
    disc = 0.25 * b * b + a ** 3 / 27.0
    if not disc > 0.0:
        raise PreconditionError(
            f"cubic discriminant {disc} is not positive; no unique real root"
        )
    s = np.sqrt(disc)
    return float(np.cbrt(-0.5 * b + s) + np.cbrt(-0.5 * b - s))


def expand_bracket(
    f: Callable[[float], float],
    x0: float,
    span: float = 1.0,
    lower_limit: Optional[float] = None,
    upper_limit: Optional[float] = None,
    max_iter: int = 200,
) -> Bracket:
    """Grow an interval around ``x0`` until ``f`` changes sign across it.

    The interval expands geometrically away from ``x0``.  Open one-sided
    limits are approached geometrically instead of crossed, which suits
    callers that only know a one-sided domain bound.
    """

    def clip_lo(candidate, shrink):
        if lower_limit is None:
            return candidate
        if candidate > lower_limit:
            return candidate
        return lower_limit + shrink

    def clip_hi(candidate, shrink):
        if upper_limit is None:
            return candidate
        if candidate < upper_limit:
            return candidate
        return upper_limit - shrink

    lo_gap = span if lower_limit is None else min(span, (x0 - lower_limit) / 2.0)
    hi_gap = span if upper_limit is None else min(span, (upper_limit - x0) / 2.0)
    lo = clip_lo(x0 - lo_gap, lo_gap / 2.0)
    hi = clip_hi(x0 + hi_gap, hi_gap / 2.0)
    flo, fhi = f(lo), f(hi)
    for _ in range(max_iter):
        if np.sign(flo) != np.sign(fhi) and not (flo == 0 and fhi == 0):
            return Bracket(lo, hi)
        if abs(flo) <= abs(fhi):
            # The root is more likely below lo: push lo outward.
            gap = (x0 - lo) * 2.0 if x0 > lo else max(span, 1.0)
            if lower_limit is None:
                lo = x0 - gap
            else:
                lo = lower_limit + (lo - lower_limit) / 2.0
            flo = f(lo)
        else:
            gap = (hi - x0) * 2.0 if hi > x0 else max(span, 1.0)
            if upper_limit is None:
                hi = x0 + gap
            else:
                hi = upper_limit - (upper_limit - hi) / 2.0
            fhi = f(hi)
    raise NoRootError("no sign change found during bracket expansion")


def solve_monotone_scalar(
    f: Callable[[float], float],
    bracket: Bracket,
    tol: float = 1e-12,
    df: Optional[Callable[[float], float]] = None,
    x0: Optional[float] = None,
    max_iter: int = 200,
) -> float:
    """Root of a monotone scalar function, Newton safeguarded by bisection.

    ``f`` must change sign across ``bracket``.  Newton steps (analytic when
    ``df`` is given, secant otherwise) are accepted only if they stay inside
    the current bracket; anything else falls back to the midpoint.  Returns
    ``x`` with ``|f(x)| <= tol``.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    lo, hi = bracket.lo, bracket.hi
    flo, fhi = f(lo), f(hi)
    if abs(flo) <= tol:
        return lo
    if abs(fhi) <= tol:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoRootError(f"no sign change on [{lo}, {hi}]")
    x = 0.5 * (lo + hi) if x0 is None else float(np.clip(x0, lo, hi))
    x_prev, f_prev = lo, flo
    fx = f(x)
    for _ in range(max_iter):
        if abs(fx) <= tol:
            return x
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
        else:
            hi, fhi = x, fx
        if df is not None:
            d = df(x)
        else:
            d = (fx - f_prev) / (x - x_prev) if x != x_prev else 0.0
        x_prev, f_prev = x, fx
        if d != 0 and np.isfinite(d):
            candidate = x - fx / d
        else:
            candidate = np.nan
        if not (lo < candidate < hi) or not np.isfinite(candidate):
            candidate = 0.5 * (lo + hi)
        x = candidate
        fx = f(x)
    raise NoRootError(f"did not reach |f| <= {tol} in {max_iter} iterations")
