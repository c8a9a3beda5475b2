"""Minimum-volume deep KL-NMF: log-det majorizer, inner ADMM, orchestration.

The model adds ``alpha_l * logdet(W_l^T W_l + delta I)`` to each layer of the
KL chain and constrains columns of every ``W_l`` to the simplex.  H factors
are unconstrained and use the classical multiplicative update.  Intermediate
W blocks couple two divergence terms plus the volume penalty; their majorized
subproblem is solved with a scaled-dual ADMM (Boyd et al., 2011) whose W step
has an entrywise closed form up to one Lagrange multiplier per column, and
whose Z step is an entrywise Lambert W evaluation.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .divergence import beta_div_matrix
from .errors import ConfigError, DimensionError, MonotonicityError, PreconditionError
from .model import (
    COLUMN_SIMPLEX_W,
    ConvergenceTrace,
    DeepState,
    MACHINE_EPS,
    SolverConfig,
    SweepRecord,
    auto_balance_weights,
    eval_objective,
    init_random,
    logdet_gram,
)
from .scalars import lambert_w0_exp
from .solvers import multilayer_factorize
from .updates import (
    InnerWContext,
    _newton_bisection_vec,
    _expand_hi,
    _expand_lo,
    epsilon_floor,
    update_h_plain,
)

_COLUMN_SUM_TOL = 1e-12


@dataclass(frozen=True)
class LogDetContext:
    """Curvature data of the volume penalty linearized at a reference W.

    ``A`` is the inverse of the regularized Gram matrix of the reference;
    its positive and negative parts drive the diagonal quadratic bound used
    by the closed-form updates.
    """

    A: np.ndarray
    A_plus: np.ndarray
    A_minus: np.ndarray
    delta: float


def build_logdet_context(W_ref: np.ndarray, delta: float) -> LogDetContext:
    if not delta > 0:
        raise ConfigError("delta must be positive")
    gram = W_ref.T @ W_ref + delta * np.eye(W_ref.shape[1])
    A = np.linalg.inv(gram)
    A = 0.5 * (A + A.T)
    return LogDetContext(
        A=A,
        A_plus=np.maximum(A, 0.0),
        A_minus=np.maximum(-A, 0.0),
        delta=delta,
    )


def logdet_majorizer(W: np.ndarray, ctx: LogDetContext, W_ref: np.ndarray) -> float:
    """Separable quadratic upper bound of logdet(W^T W + delta I), tight at W_ref.

    Row i contributes its linearization at the reference row plus a diagonal
    quadratic with weights 2 (A+ + A-) w_ref / w_ref, which dominates the
    true curvature for strictly positive references.
    """
    if W.shape != W_ref.shape:
        raise DimensionError("W and W_ref must have equal shapes")
    if not np.all(W_ref > 0):
        raise PreconditionError("the majorizer reference must be entrywise positive")
    base = logdet_gram(W_ref, ctx.delta)
    diff = W - W_ref
    grad = 2.0 * W_ref @ ctx.A
    curv = 2.0 * (W_ref @ (ctx.A_plus + ctx.A_minus)) / W_ref
    return float(base + np.sum(grad * diff) + 0.5 * np.sum(curv * diff * diff))


def simplex_w_cells(W_tilde, C, S, T, mu):
    """Entrywise W map of the simplex-constrained quadratic subproblem.

    Every entry is nonnegative by construction and strictly decreasing in its
    column's multiplier ``mu``.
    """
    u = C + np.asarray(mu)[None, :]
    root = np.sqrt(u * u + S)
    # Conjugate form for u > 0: sqrt(u^2+S) - u loses digits when u >> S.
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(u > 0, S / (root + u), root - u)
    return W_tilde * g / T


def _simplex_w_minimize(W_tilde, C, S, T, tol=_COLUMN_SUM_TOL):
    """Solve the diagonal-quadratic simplex subproblem behind the W updates.

    Entries have the closed form w = w_tilde * (sqrt((C+mu)^2 + S) - (C+mu))/T
    which is positive and strictly decreasing in the column multiplier mu;
    each mu is found by safeguarded Newton so that columns sum to one.
    """

    def cells(mu):
        u = C + mu[None, :]
        root = np.sqrt(u * u + S)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(u > 0, S / (root + u), root - u)
        w = W_tilde * g / T
        return w, root

    def f_df(mu):
        w, root = cells(mu)
        return w.sum(axis=0) - 1.0, -(w / root).sum(axis=0)

    f_only = lambda mu: f_df(mu)[0]
    ones = np.ones(W_tilde.shape[1])
    hi = _expand_hi(f_only, ones)
    lo = _expand_lo(f_only, -ones)
    mu = _newton_bisection_vec(f_df, lo, hi, np.zeros_like(ones), tol)
    W, _ = cells(mu)
    return W


def _w_step_terms(ctx: InnerWContext, ldctx: LogDetContext, rho: float, alpha_ratio: float):
    """Iteration-invariant pieces of the W step, built once per outer sweep."""
    Wt, H, Y = ctx.W_tilde, ctx.H, ctx.Y
    P = (Y / (Wt @ H)) @ H.T
    curv = Wt @ (ldctx.A_plus + ldctx.A_minus)
    T = 4.0 * alpha_ratio * curv + 2.0 * rho
    S = 2.0 * T * P
    C0 = H.sum(axis=1)[None, :] - 4.0 * alpha_ratio * (Wt @ ldctx.A_minus)
    return C0, S, T


def admm_w_step(
    ctx: InnerWContext,
    ldctx: LogDetContext,
    Z: np.ndarray,
    U: np.ndarray,
    rho: float,
    alpha_ratio: float,
):
    """One W minimization of the ADMM: fit majorizer + volume bound + penalty.

    Returns a nonnegative matrix whose columns sum to one.
    """
    if not rho > 0 or not alpha_ratio > 0:
        raise ConfigError("rho and alpha_ratio must be positive")
    C0, S, T = _w_step_terms(ctx, ldctx, rho, alpha_ratio)
    return _simplex_w_minimize(ctx.W_tilde, C0 - rho * (Z - U), S, T)


def minvol_terminal_w_step(Y, W_tilde, H, ldctx: LogDetContext, alpha_ratio: float):
    """Last-layer W update: same construction without the ADMM coupling terms."""
    if not alpha_ratio > 0:
        raise ConfigError("alpha_ratio must be positive")
    P = (Y / (W_tilde @ H)) @ H.T
    curv = W_tilde @ (ldctx.A_plus + ldctx.A_minus)
    T = 4.0 * alpha_ratio * curv
    S = 2.0 * T * P
    C = H.sum(axis=1)[None, :] - 4.0 * alpha_ratio * (W_tilde @ ldctx.A_minus)
    return _simplex_w_minimize(W_tilde, C, S, T)


def z_min_step(W_bar: np.ndarray, V: np.ndarray, nu: float):
    """Entrywise minimizer of d_KL(z, w_bar) + (nu/2) (z - v)^2.

    The optimality condition log(z / w_bar) + nu (z - v) = 0 is solved per
    entry through the Lambert W function of exp(log(nu * w_bar) + nu * v),
    evaluated in the log domain when the argument would overflow.
    """
    if not nu > 0:
        raise ConfigError("nu must be positive")
    if np.any(W_bar <= 0):
        raise PreconditionError("W_bar must be entrywise positive")
    t = np.log(nu) + np.log(W_bar) + nu * V
    return lambert_w0_exp(t) / nu


@dataclass
class AdmmState:
    W: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    iterations: int
    primal_residual: float


@dataclass
class AdmmRun:
    state: AdmmState
    residuals: List[float]
    converged: bool


def admm_solve_w(
    ctx: InnerWContext,
    ldctx: LogDetContext,
    alpha_ratio: float,
    rho: float = 100.0,
    max_iter: int = 50,
    tol: float = 1e-6,
    eps: Optional[float] = None,
) -> Tuple[np.ndarray, AdmmRun]:
    """Inner ADMM for an intermediate-layer W of the min-vol model.

    Alternates the simplex-constrained W step, the entrywise Lambert Z step
    and the scaled dual update until the primal residual ||W - Z||_F drops
    below ``tol`` or the iteration budget runs out (then the best iterate is
    returned with ``converged=False``; the outer solver tolerates inexact
    inner solves).  The returned W is floored and column-renormalized, which
    absorbs the residual split infeasibility.
    """
    if eps is None:
        eps = MACHINE_EPS
    if not rho > 0 or not alpha_ratio > 0:
        raise ConfigError("rho and alpha_ratio must be positive")
    nu = rho / ctx.lambda_ratio
    C0, S, T = _w_step_terms(ctx, ldctx, rho, alpha_ratio)
    W = ctx.W_tilde.copy()
    Z = W.copy()
    U = np.zeros_like(W)
    residuals: List[float] = []
    best_w = W
    best_res = np.inf
    converged = False
    for it in range(1, max_iter + 1):
        W = _simplex_w_minimize(ctx.W_tilde, C0 - rho * (Z - U), S, T)
        Z = z_min_step(ctx.W_bar, W + U, nu)
        U = U + W - Z
        res = float(np.linalg.norm(W - Z))
        residuals.append(res)
        if res < best_res:
            best_res = res
            best_w = W
        if res <= tol:
            converged = True
            break
    final = epsilon_floor(best_w, eps)
    final = final / final.sum(axis=0, keepdims=True)
    state = AdmmState(W=W, Z=Z, U=U, iterations=len(residuals), primal_residual=residuals[-1])
    return final, AdmmRun(state=state, residuals=residuals, converged=converged)


def _column_normalize_chain(state: DeepState) -> DeepState:
    """Switch a chain to the column-simplex convention, preserving products.

    Each W is divided columnwise by its column sums, the matching H rows are
    multiplied back, and the next layer's H absorbs the inverse scaling of
    its new target.
    """
    out = state.copy()
    prev_scale = None
    for i in range(out.num_layers):
        if prev_scale is not None:
            out.H[i] = out.H[i] / prev_scale[None, :]
        scale = out.W[i].sum(axis=0)
        out.W[i] = out.W[i] / scale
        out.H[i] = out.H[i] * scale[:, None]
        prev_scale = scale
    return out


def _max_column_simplex_residual(state: DeepState) -> float:
    worst = 0.0
    for w in state.W:
        worst = max(worst, float(np.abs(w.sum(axis=0) - 1.0).max()))
    return worst


def _w_block_value(W, Y, H, W_bar, lam, lam_next, alpha, delta) -> float:
    """All objective terms that depend on one intermediate-layer W."""
    value = lam * beta_div_matrix(Y, W @ H, 1.0)
    value += lam_next * beta_div_matrix(W, W_bar, 1.0)
    value += alpha * logdet_gram(W, delta)
    return value


def minvol_factorize(
    X: np.ndarray,
    config: SolverConfig,
    warm: Optional[DeepState] = None,
) -> Tuple[DeepState, ConvergenceTrace]:
    """Minimum-volume deep KL-NMF with per-layer volume penalties.

    Requires ``beta == 1`` and positive ``alpha`` on every layer.  Without a
    warm start, a multilayer run provides the initialization, converted to
    the column-simplex convention.  Inner ADMM results that would increase
    their block objective (possible when the solve is truncated at the
    iteration cap) are rejected, so the total objective may transiently rise
    by at most ``10 * admm_tol * (sum(alpha) + sum(lambda))`` per sweep, the
    slack budget for residual inner-solve inexactness.
    """
    if config.beta != 1.0:
        raise ConfigError("min-vol factorization is derived for beta = 1 only")
    if any(not spec.alpha > 0 for spec in config.layers):
        raise ConfigError("min-vol requires a positive alpha for every layer")
    eps = config.eps_floor
    if warm is not None:
        state = warm.copy()
        state.check_dims()
    elif config.warm_start_sweeps > 0:
        warm_config = SolverConfig(
            beta=config.beta,
            layers=config.layers,
            delta=config.delta,
            max_sweeps=config.warm_start_sweeps,
            eps_floor=config.eps_floor,
            seed=config.seed,
        )
        ml_state, _ = multilayer_factorize(X, warm_config)
        state = _column_normalize_chain(ml_state)
    else:
        state = init_random(X, config.layers, config.seed, COLUMN_SIMPLEX_W)
    for i in range(state.num_layers):
        state.W[i] = epsilon_floor(state.W[i], eps)
        state.W[i] /= state.W[i].sum(axis=0, keepdims=True)
        state.H[i] = epsilon_floor(state.H[i], eps)

    if any(spec.lam is None for spec in config.layers):
        resolved = config.with_lambdas(auto_balance_weights(state, config.beta))
    else:
        resolved = config
    lams = resolved.lambdas()
    alphas = resolved.alphas()
    slack = 10.0 * config.admm_tol * (sum(alphas) + sum(lams))

    num_layers = state.num_layers
    trace = ConvergenceTrace(num_layers, lambdas=list(lams))
    previous_total = np.inf
    stalled_admm = 0
    rejected_steps = 0
    for sweep in range(config.max_sweeps):
        started = time.perf_counter()
        for i in range(num_layers):
            target = state.prev_w(i)
            state.H[i] = update_h_plain(
                state.W[i], target, state.H[i], config.beta, eps=eps
            )
            ldctx = build_logdet_context(state.W[i], config.delta)
            alpha_ratio = alphas[i] / lams[i]
            if i < num_layers - 1:
                W_bar = state.W[i + 1] @ state.H[i + 1]
                ctx = InnerWContext(
                    Y=target,
                    W_tilde=state.W[i],
                    H=state.H[i],
                    W_bar=W_bar,
                    lambda_ratio=lams[i + 1] / lams[i],
                )
                W_new, run = admm_solve_w(
                    ctx,
                    ldctx,
                    alpha_ratio,
                    rho=config.rho,
                    max_iter=config.admm_max_iter,
                    tol=config.admm_tol,
                    eps=eps,
                )
                if not run.converged:
                    stalled_admm += 1
                # A truncated ADMM can return a worse point than the current
                # iterate (its iterates are not monotone in the subproblem
                # objective); reject such steps to keep the outer sweep a
                # descent method.
                before = _w_block_value(
                    state.W[i], target, state.H[i], W_bar,
                    lams[i], lams[i + 1], alphas[i], config.delta,
                )
                after = _w_block_value(
                    W_new, target, state.H[i], W_bar,
                    lams[i], lams[i + 1], alphas[i], config.delta,
                )
                if after <= before + 1e-12 * max(1.0, abs(before)):
                    state.W[i] = W_new
                else:
                    rejected_steps += 1
            else:
                W_new = minvol_terminal_w_step(
                    target, state.W[i], state.H[i], ldctx, alpha_ratio
                )
                W_new = epsilon_floor(W_new, eps)
                state.W[i] = W_new / W_new.sum(axis=0, keepdims=True)
        total, per_layer = eval_objective(state, resolved, "minvol")
        if total > previous_total + slack:
            raise MonotonicityError(
                f"min-vol objective rose from {previous_total} to {total} "
                f"at sweep {sweep}, beyond the inexactness slack {slack}"
            )
        trace.append(
            SweepRecord(
                sweep=sweep,
                total_objective=total,
                layer_errors=tuple(t.divergence for t in per_layer),
                logdet_terms=tuple(t.logdet for t in per_layer),
                max_residual=_max_column_simplex_residual(state),
                seconds=time.perf_counter() - started,
            )
        )
        if config.rel_obj_tol > 0 and np.isfinite(previous_total):
            if abs(previous_total - total) <= config.rel_obj_tol * max(1.0, abs(previous_total)):
                break
        previous_total = total
    if stalled_admm:
        warnings.warn(
            f"{stalled_admm} inner ADMM solves stopped at the iteration cap "
            f"above tolerance ({rejected_steps} of them rejected as non-descent)",
            RuntimeWarning,
            stacklevel=2,
        )
    return state, trace
