"""Factorization state, objectives and initialization for deep NMF chains.

A deep factorization of ``X`` is the chain ``X ~ W1 H1``, ``W1 ~ W2 H2``, ...
with strictly decreasing inner ranks.  Two constraint conventions are used:
rows of each ``H`` on the simplex (plain deep beta-NMF) or columns of each
``W`` on the simplex (minimum-volume deep KL-NMF).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Sequence

import numpy as np

from .divergence import beta_div_matrix, check_beta
from .errors import ConfigError, DegenerateInputError, DimensionError, DomainError

ROW_SIMPLEX_H = "row-simplex-h"
COLUMN_SIMPLEX_W = "column-simplex-w"
Constraint = Literal["row-simplex-h", "column-simplex-w"]

#: Default elementwise floor applied to all factors (double machine epsilon).
MACHINE_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class LayerSpec:
    """Per-layer rank and penalty weights.

    ``lam`` is the weight of the layer's divergence term; ``None`` requests
    automatic balancing at the initial state.  ``alpha`` weighs the log-det
    volume penalty and is only used by the min-vol solver.
    """

    rank: int
    lam: Optional[float] = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError(f"lam must be positive, got {self.lam}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")


def check_ranks(n_cols: int, layers: Sequence[LayerSpec]):
    """Ranks must decrease strictly along the chain, starting below n_cols."""
    if not layers:
        raise ConfigError("at least one layer is required")
    previous = n_cols
    for spec in layers:
        if spec.rank >= previous:
            raise ConfigError(
                f"ranks must decrease strictly along the chain; "
                f"got rank {spec.rank} after {previous}"
            )
        previous = spec.rank


@dataclass
class SolverConfig:
    """Everything a factorization run needs besides the data matrix."""

    beta: float
    layers: List[LayerSpec]
    delta: float = 0.1
    rho: float = 100.0
    admm_max_iter: int = 50
    admm_tol: float = 1e-6
    max_sweeps: int = 200
    warm_start_sweeps: int = 100
    eps_floor: float = MACHINE_EPS
    seed: int = 0
    # Early stop on relative objective change; 0 disables it so runs use the
    # full sweep budget (1e-9 is a reasonable opt-in value).
    rel_obj_tol: float = 0.0

    def __post_init__(self):
        self.beta = check_beta(self.beta)
        for name in ("delta", "rho", "admm_tol", "eps_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("admm_max_iter", "max_sweeps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.warm_start_sweeps < 0 or self.rel_obj_tol < 0:
            raise ConfigError("warm_start_sweeps and rel_obj_tol must be >= 0")

    @property
    def ranks(self):
        return [spec.rank for spec in self.layers]

    def lambdas(self) -> List[float]:
        lams = [spec.lam for spec in self.layers]
        if any(lam is None for lam in lams):
            raise ConfigError("lambda weights are unresolved; run auto balancing first")
        return [float(lam) for lam in lams]

    def alphas(self) -> List[float]:
        return [spec.alpha for spec in self.layers]

    def with_lambdas(self, lams: Sequence[float]) -> "SolverConfig":
        layers = [replace(spec, lam=float(lam)) for spec, lam in zip(self.layers, lams)]
        return replace(self, layers=layers)


@dataclass
class DeepState:
    """The chain ``X ~ W[0] H[0]``, ``W[0] ~ W[1] H[1]``, ...

    ``W[i]`` has shape (m, r_{i+1}) and ``H[i]`` has shape
    (r_{i+1}, r_i) with r_0 = n.  Factors are kept strictly positive by the
    solvers (epsilon flooring), which rules out multiplicative zero-locking.
    """

    X: np.ndarray
    W: List[np.ndarray]
    H: List[np.ndarray]

    @property
    def num_layers(self) -> int:
        return len(self.W)

    def prev_w(self, i: int) -> np.ndarray:
        """Approximation target of layer ``i``: X for the first layer."""
        return self.X if i == 0 else self.W[i - 1]

    def copy(self) -> "DeepState":
        return DeepState(
            X=self.X.copy(),
            W=[w.copy() for w in self.W],
            H=[h.copy() for h in self.H],
        )

    def check_dims(self):
        m, n = self.X.shape
        if len(self.W) != len(self.H):
            raise DimensionError("W and H lists have different lengths")
        prev_rank = n
        for i, (w, h) in enumerate(zip(self.W, self.H)):
            r = w.shape[1]
            if w.shape[0] != m or h.shape != (r, prev_rank):
                raise DimensionError(
                    f"layer {i + 1}: W {w.shape}, H {h.shape} inconsistent "
                    f"with m={m}, previous rank {prev_rank}"
                )
            prev_rank = r


@dataclass
class SweepRecord:
    sweep: int
    total_objective: float
    layer_errors: tuple
    logdet_terms: tuple
    max_residual: float
    seconds: float


class ConvergenceTrace:
    """Per-sweep objective and constraint-residual history of one run.

    ``lambdas`` records the layer weights the producing solver actually used
    (after auto balancing), for manifests and comparisons.
    """

    def __init__(self, num_layers: int, lambdas: Optional[List[float]] = None):
        self.num_layers = num_layers
        self.lambdas = lambdas
        self.records: List[SweepRecord] = []

    def append(self, record: SweepRecord):
        if self.records and record.sweep <= self.records[-1].sweep:
            raise ConfigError("sweep indices must increase strictly")
        if len(record.layer_errors) != self.num_layers:
            raise DimensionError("layer_errors length does not match num_layers")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def objectives(self) -> np.ndarray:
        return np.array([r.total_objective for r in self.records])

    def max_residuals(self) -> np.ndarray:
        return np.array([r.max_residual for r in self.records])


def init_random(
    X: np.ndarray,
    layers: Sequence[LayerSpec],
    seed: int,
    constraint: Constraint,
) -> DeepState:
    """Strictly positive random factors with the declared constraint enforced.

    Entries are drawn uniformly from [eps, 1) layer by layer (W then H), then
    rows of H or columns of W are normalized to sum to one.  The draw order
    makes the state a pure function of the seed.
    """
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X must be a 2-D matrix")
    if np.any(X < 0) or not np.all(np.isfinite(X)):
        raise DomainError("X must be finite and entrywise nonnegative")
    if not np.any(X > 0):
        raise DegenerateInputError("X is all zero")
    if constraint not in (ROW_SIMPLEX_H, COLUMN_SIMPLEX_W):
        raise ConfigError(f"unknown constraint {constraint!r}")
    m, n = X.shape
    check_ranks(n, layers)
    rng = np.random.default_rng(seed)
    eps = MACHINE_EPS
    W, H = [], []
    prev_rank = n
    for spec in layers:
        r = spec.rank
        w = rng.uniform(eps, 1.0, size=(m, r))
        h = rng.uniform(eps, 1.0, size=(r, prev_rank))
        if constraint == ROW_SIMPLEX_H:
            h /= h.sum(axis=1, keepdims=True)
        else:
            w /= w.sum(axis=0, keepdims=True)
        W.append(w)
        H.append(h)
        prev_rank = r
    return DeepState(X=X, W=W, H=H)


def auto_balance_weights(state: DeepState, beta) -> List[float]:
    """Reciprocal layer divergences, so each weighted term starts at one.

    Layers that already fit exactly get weight 1 and a warning, since the
    reciprocal is undefined there.
    """
    b = check_beta(beta)
    weights = []
    for i in range(state.num_layers):
        div = beta_div_matrix(state.prev_w(i), state.W[i] @ state.H[i], b)
        if div > 0 and np.isfinite(div):
            weights.append(1.0 / div)
        else:
            warnings.warn(
                f"layer {i + 1} divergence is {div} at initialization; "
                "using weight 1",
                RuntimeWarning,
                stacklevel=2,
            )
            weights.append(1.0)
    return weights


def logdet_gram(W: np.ndarray, delta: float) -> float:
    """log det(W^T W + delta I) via symmetric eigenvalues.

    delta > 0 keeps the Gram matrix positive definite; going through
    eigenvalues avoids overflowing a raw determinant.
    """
    if not delta > 0:
        raise ConfigError("delta must be positive")
    gram = W.T @ W + delta * np.eye(W.shape[1])
    eigvals = np.linalg.eigvalsh(gram)
    return float(np.sum(np.log(eigvals)))


@dataclass(frozen=True)
class LayerObjective:
    divergence: float
    weighted_divergence: float
    logdet: float
    weighted_logdet: float


def eval_objective(
    state: DeepState,
    config: SolverConfig,
    model: Literal["plain", "minvol"] = "plain",
):
    """Total objective and per-layer terms for either deep NMF model.

    Plain: sum of lam_l * D_beta(W_{l-1}, W_l H_l).  Min-vol adds
    alpha_l * logdet(W_l^T W_l + delta I) per layer and is defined for the
    KL divergence only.
    """
    state.check_dims()
    if model not in ("plain", "minvol"):
        raise ConfigError(f"unknown model {model!r}")
    if model == "minvol" and config.beta != 1.0:
        raise ConfigError("the min-vol model is defined for beta = 1 only")
    lams = config.lambdas()
    alphas = config.alphas()
    per_layer = []
    total = 0.0
    for i in range(state.num_layers):
        div = beta_div_matrix(state.prev_w(i), state.W[i] @ state.H[i], config.beta)
        ld = logdet_gram(state.W[i], config.delta) if model == "minvol" else 0.0
        weighted_ld = alphas[i] * ld if model == "minvol" else 0.0
        per_layer.append(
            LayerObjective(
                divergence=div,
                weighted_divergence=lams[i] * div,
                logdet=ld,
                weighted_logdet=weighted_ld,
            )
        )
        total += lams[i] * div + weighted_ld
    return total, per_layer


@dataclass(frozen=True)
class StateReport:
    max_negativity: float
    max_simplex_residual: float
    dims_ok: bool
    message: str = ""


def validate_state(state: DeepState, constraint: Constraint, tol: float = 1e-8) -> StateReport:
    """Report nonnegativity, simplex residuals and dimension consistency."""
    try:
        state.check_dims()
        dims_ok = True
        message = ""
    except DimensionError as exc:
        return StateReport(np.nan, np.nan, False, str(exc))
    neg = 0.0
    for mat in state.W + state.H:
        if mat.size:
            neg = max(neg, float(-min(0.0, mat.min())))
    residual = 0.0
    if constraint == ROW_SIMPLEX_H:
        for h in state.H:
            residual = max(residual, float(np.abs(h.sum(axis=1) - 1.0).max()))
    elif constraint == COLUMN_SIMPLEX_W:
        for w in state.W:
            residual = max(residual, float(np.abs(w.sum(axis=0) - 1.0).max()))
    else:
        raise ConfigError(f"unknown constraint {constraint!r}")
    if neg > tol or residual > tol:
        message = f"violations exceed tol={tol}"
    return StateReport(neg, residual, dims_ok, message)
