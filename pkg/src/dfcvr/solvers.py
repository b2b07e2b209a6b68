"""Matrix-free solvers for damped Hessian systems ``(H + lam I) delta = b``.

The Hessian is only touched through HVPs. Three solvers cover different
regimes: conjugate gradients for exact solves on positive-definite
systems, a truncated power series for a fixed-budget approximation, and a
stochastic quadratic minimizer (Adam on minibatch curvature) that scales
to large sample counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import models
from .errors import NumericalError
from .optim import Adam, epoch_permutation


@dataclass(frozen=True)
class SolverConfig:
    """Shared solver knobs; each solver reads the subset it needs.

    ``tol_rel_residual`` is relative to ``norm(b)``. ``max_iters`` caps CG
    iterations, ``max_epochs`` and ``minibatch_size`` drive the stochastic
    solver, ``neumann_terms`` and ``neumann_scale`` the power series
    (scale None means calibrate from a spectral-norm estimate).
    """

    tol_rel_residual: float = 1e-4
    max_iters: int = 1000
    max_epochs: int = 5
    minibatch_size: int = 512
    learning_rate: float = 0.01
    neumann_terms: int = 500
    neumann_scale: float | None = None
    seed: int = 0


# Per-solver default tolerances: CG solves tightly, the stochastic
# minimizer targets a looser residual.
CG_DEFAULT_TOL = 1e-4
SQ_DEFAULT_TOL = 1e-2


def default_solver_config(kind: str) -> SolverConfig:
    if kind in ("cg", "neumann"):
        return SolverConfig(tol_rel_residual=CG_DEFAULT_TOL)
    if kind == "sq":
        return SolverConfig(tol_rel_residual=SQ_DEFAULT_TOL)
    raise ValueError(f"unknown solver kind {kind!r}")


@dataclass
class SolveResult:
    """Best iterate found, its relative residual, and the residual trace.

    ``residual_rel`` is None for the trivial ``b = 0`` system.
    ``iterations`` counts CG iterations, series terms, or epochs.
    """

    delta: np.ndarray
    residual_rel: float | None
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)
    wall_time: float = 0.0


class SolverError(NumericalError):
    """Solver failure; carries the best iterate seen, when one exists."""

    def __init__(
        self,
        message: str,
        delta: np.ndarray | None = None,
        residual_rel: float | None = None,
    ) -> None:
        super().__init__(message)
        self.delta = delta
        self.residual_rel = residual_rel


class SolverNotConvergedError(SolverError):
    """Residual stayed above tolerance at the iteration cap."""


class MatrixOperator:
    """Dense symmetric matrix wrapped as a linear operator."""

    def __init__(self, matrix: np.ndarray) -> None:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("operator matrix must be square")
        self._matrix = matrix

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._matrix @ v


class DampedHessianOperator:
    """``v -> (hessian(theta) + lam I) v`` over a frozen training batch.

    The forward/backward state at ``theta`` is computed once and cached;
    every HVP is then a single curvature sweep, evaluated in minibatches
    of ``hvp_batch_size`` accumulated in index order. ``matvec_batch``
    exposes the per-minibatch damped HVP for stochastic solvers; its
    expectation over uniform minibatches equals ``matvec``.
    """

    def __init__(
        self,
        spec: models.ModelSpec,
        theta: np.ndarray,
        x: np.ndarray,
        y: np.ndarray,
        lam: float,
        hvp_batch_size: int = 8192,
    ) -> None:
        if lam < 0:
            raise ValueError("damping lam must be non-negative")
        if hvp_batch_size <= 0:
            raise ValueError("hvp_batch_size must be positive")
        self.spec = spec
        self.theta = theta.copy()
        self.lam = lam
        self.hvp_batch_size = hvp_batch_size
        self._state = models.build_state(spec, self.theta, x, y)

    @property
    def dim(self) -> int:
        return models.num_params(self.spec)

    @property
    def n_samples(self) -> int:
        return self._state.n

    def matvec(self, v: np.ndarray) -> np.ndarray:
        n = self._state.n
        acc = np.zeros_like(v)
        for start in range(0, n, self.hvp_batch_size):
            stop = min(start + self.hvp_batch_size, n)
            part = models.hvp_from_state(
                self.spec, self.theta, self._state, v,
                rows=slice(start, stop),
            )
            acc += part * ((stop - start) / n)
        return acc + self.lam * v

    def matvec_batch(self, v: np.ndarray, rows: np.ndarray) -> np.ndarray:
        part = models.hvp_from_state(
            self.spec, self.theta, self._state, v, rows=rows
        )
        return part + self.lam * v


class QuadraticObjective:
    """``F(delta) = 0.5 <delta, A delta> - <b, delta>`` for an SPD operator.

    Minimizing F solves ``A delta = b``; the gradient is ``A delta - b``,
    so the full-batch gradient norm doubles as the residual norm. With a
    sample-structured operator the gradient decomposes into unbiased
    minibatch pieces.
    """

    def __init__(self, operator, b: np.ndarray) -> None:
        if b.shape != (operator.dim,):
            raise ValueError("right-hand side length does not match operator")
        self.operator = operator
        self.b = b

    @property
    def n_samples(self) -> int | None:
        return getattr(self.operator, "n_samples", None)

    def value(self, delta: np.ndarray) -> float:
        return float(
            0.5 * delta @ self.operator.matvec(delta) - self.b @ delta
        )

    def full_grad(self, delta: np.ndarray) -> np.ndarray:
        return self.operator.matvec(delta) - self.b

    def minibatch_grad(self, delta: np.ndarray, rows: np.ndarray) -> np.ndarray:
        if self.n_samples is None:
            raise ValueError("operator has no sample structure")
        return self.operator.matvec_batch(delta, rows) - self.b

    def piece_value(self, delta: np.ndarray, rows: np.ndarray) -> float:
        """Mean of the per-sample quadratic pieces over ``rows``.

        Each piece is ``0.5 <delta, A_i delta> - <b, delta>`` with ``A_i``
        the sample's damped curvature; the size-weighted mean over a
        partition of the samples recovers ``value``.
        """
        if self.n_samples is None:
            raise ValueError("operator has no sample structure")
        return float(
            0.5 * delta @ self.operator.matvec_batch(delta, rows)
            - self.b @ delta
        )


def cg_solve(operator, b: np.ndarray, config: SolverConfig) -> SolveResult:
    """Conjugate gradients; returns the best iterate by relative residual.

    Raises :class:`SolverError` when the operator reveals a non-positive
    curvature direction, which means the damping is too small.
    """
    start = time.perf_counter()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return SolveResult(np.zeros_like(b), None, 0, True,
                           wall_time=time.perf_counter() - start)
    delta = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    rs = float(r @ r)
    best_rel = np.sqrt(rs) / b_norm
    best_delta = delta.copy()
    trace: list[float] = []
    iters = 0
    max_iters = min(operator.dim, config.max_iters)
    while iters < max_iters:
        ad = operator.matvec(d)
        dad = float(d @ ad)
        if dad <= 0.0:
            raise SolverError(
                "conjugate gradients hit non-positive curvature "
                f"(d'Ad = {dad:.3e}); increase the damping",
                delta=best_delta,
                residual_rel=best_rel,
            )
        alpha = rs / dad
        delta += alpha * d
        r -= alpha * ad
        rs_new = float(r @ r)
        iters += 1
        rel = np.sqrt(rs_new) / b_norm
        trace.append(rel)
        if rel < best_rel:
            best_rel = rel
            best_delta = delta.copy()
        if rel <= config.tol_rel_residual:
            break
        d = r + (rs_new / rs) * d
        rs = rs_new
    return SolveResult(
        best_delta,
        best_rel,
        iters,
        best_rel <= config.tol_rel_residual,
        trace,
        time.perf_counter() - start,
    )


def power_iteration(operator, iters: int = 100, seed: int = 0) -> float:
    """Rayleigh-quotient estimate of the largest eigenvalue.

    ``iters`` normalized matrix-vector products from a random unit start.
    """
    if iters < 10:
        raise ValueError("power iteration needs at least 10 iterations")
    rng = np.random.Generator(np.random.Philox(key=seed))
    v = rng.standard_normal(operator.dim)
    v /= np.linalg.norm(v)
    rq = 0.0
    for _ in range(iters):
        w = operator.matvec(v)
        rq = float(v @ w)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
    return rq


# Safety margin on the calibrated series scale: the power-iteration
# estimate approaches the spectral norm from below.
_NEUMANN_SCALE_MARGIN = 0.9


def neumann_solve(operator, b: np.ndarray, config: SolverConfig) -> SolveResult:
    """Truncated power-series solve ``delta = s * sum_t (I - sA)^t b``.

    The recurrence ``w <- w - s A w`` yields both the next series term
    and the exact residual of the partial sum, so each term costs one
    HVP. The scale ``s`` must satisfy ``s * norm(A) < 1``; it is
    validated (or calibrated, when unset) with a spectral-norm estimate.
    """
    start = time.perf_counter()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return SolveResult(np.zeros_like(b), None, 0, True,
                           wall_time=time.perf_counter() - start)
    estimate = power_iteration(operator, seed=config.seed)
    if config.neumann_scale is None:
        if estimate <= 0.0:
            raise SolverError("spectral-norm estimate is non-positive")
        scale = _NEUMANN_SCALE_MARGIN / estimate
    else:
        scale = config.neumann_scale
        if scale <= 0.0:
            raise SolverError("neumann_scale must be positive")
        # Strictly-greater test with a hair of slack: the exact boundary
        # (e.g. the identity with s = 1) still converges in one term.
        if scale * estimate - 1.0 > 1e-9:
            raise SolverError(
                f"series would diverge: scale * norm(A) ~ "
                f"{scale * estimate:.3f} >= 1; reduce neumann_scale"
            )
    delta = np.zeros_like(b)
    w = b.copy()
    trace: list[float] = []
    best_rel = np.inf
    best_delta = delta.copy()
    terms = 0
    for _ in range(config.neumann_terms):
        delta += scale * w
        w -= scale * operator.matvec(w)
        terms += 1
        rel = float(np.linalg.norm(w)) / b_norm
        trace.append(rel)
        if rel < best_rel:
            best_rel = rel
            best_delta = delta.copy()
        if rel <= config.tol_rel_residual:
            break
    if not np.isfinite(best_rel):
        raise SolverError("power series diverged", delta=None,
                          residual_rel=None)
    return SolveResult(
        best_delta,
        best_rel,
        terms,
        best_rel <= config.tol_rel_residual,
        trace,
        time.perf_counter() - start,
    )


def sq_solve(objective: QuadraticObjective, config: SolverConfig) -> SolveResult:
    """Adam on the quadratic objective with unbiased minibatch gradients.

    One full-pass residual check per epoch; returns the epoch-boundary
    iterate with the smallest relative residual. Without sample structure
    each epoch is a single full-batch step and the residual comes free
    from the gradient.
    """
    start = time.perf_counter()
    b_norm = float(np.linalg.norm(objective.b))
    dim = objective.b.shape[0]
    if b_norm == 0.0:
        return SolveResult(np.zeros(dim), None, 0, True,
                           wall_time=time.perf_counter() - start)
    delta = np.zeros(dim)
    adam = Adam(dim, config.learning_rate)
    best_rel = 1.0  # residual at delta = 0 is exactly norm(b)
    best_delta = delta.copy()
    trace: list[float] = []
    n = objective.n_samples
    epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        if n is None:
            g = objective.full_grad(delta)
            adam.step(delta, g)
            rel = float(np.linalg.norm(objective.full_grad(delta))) / b_norm
        else:
            perm = epoch_permutation(config.seed, epoch, n)
            for begin in range(0, n, config.minibatch_size):
                rows = perm[begin : begin + config.minibatch_size]
                adam.step(delta, objective.minibatch_grad(delta, rows))
            rel = float(np.linalg.norm(objective.full_grad(delta))) / b_norm
        epochs = epoch
        if not np.isfinite(rel):
            raise SolverError(
                f"stochastic quadratic solve diverged at epoch {epoch}; "
                "lower the learning rate",
                delta=best_delta,
                residual_rel=best_rel,
            )
        trace.append(rel)
        if rel < best_rel:
            best_rel = rel
            best_delta = delta.copy()
        if best_rel <= config.tol_rel_residual:
            break
    return SolveResult(
        best_delta,
        best_rel,
        epochs,
        best_rel <= config.tol_rel_residual,
        trace,
        time.perf_counter() - start,
    )
