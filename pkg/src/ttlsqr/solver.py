"""Truncated LSQR on tensor trains, and a plain vector LSQR.

``tt_lsqr`` runs the Golub-Kahan/Givens recurrence of LSQR with every tensor
update rounded back to low TT-rank.  With rounding switched off it produces
the same iterates as ``vector_lsqr`` on the vectorized problem.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from .kron import PreconditionedOperator, Preconditioner, precond_build, precond_solve
from .tt import TtTensor, _round, tt_axpy, tt_norm, tt_round, tt_scale, tt_sum, tt_zeros

__all__ = [
    "LsqrResult",
    "LsqrState",
    "LsqrTrace",
    "SolveOptions",
    "SolveStatus",
    "TraceRecord",
    "estimate_residuals",
    "residual_norms",
    "tt_lsqr",
    "vector_lsqr",
]

log = logging.getLogger(__name__)

BREAKDOWN_FACTOR = 1e-14


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    BREAKDOWN = "breakdown"
    STAGNATED = "stagnated"


@dataclass(frozen=True)
class SolveOptions:
    """Settings for ``tt_lsqr``.

    ``ne_resid_tol`` bounds ``||L^T(f - L x)|| / ||L^T f||``.  A positive
    ``true_residual_every`` evaluates that quantity explicitly every so many
    iterations (one extra operator and adjoint application each time).
    With those explicit residuals available, a positive ``stall_window``
    stops the run (status ``stagnated``) once the explicit residual has not
    dropped by ``stall_factor`` for that many iterations.  The recurrence
    estimates cannot detect this: they keep decreasing under truncation.
    """

    round_tol: float = 1e-4
    max_rank: Optional[int] = None
    max_iters: int = 100
    ne_resid_tol: float = 1e-4
    use_preconditioner: bool = False
    true_residual_every: int = 0
    stall_window: int = 0
    stall_factor: float = 0.99

    def __post_init__(self):
        if not self.round_tol >= 0:
            raise ValueError("round_tol must be nonnegative")
        if not self.ne_resid_tol > 0:
            raise ValueError("ne_resid_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be at least 1")
        if self.true_residual_every < 0:
            raise ValueError("true_residual_every must be nonnegative")
        if self.stall_window < 0:
            raise ValueError("stall_window must be nonnegative")
        if self.stall_window and not self.true_residual_every:
            raise ValueError("stall_window needs true_residual_every > 0")
        if not 0 < self.stall_factor <= 1:
            raise ValueError("stall_factor must lie in (0, 1]")


@dataclass
class LsqrState:
    alpha: float
    beta: float
    rho: float
    rho_bar: float
    phi: float
    phi_bar: float
    c: float
    s: float
    theta: float
    u: TtTensor
    v: TtTensor
    x: TtTensor
    g: TtTensor
    iteration: int = 0
    beta1: float = 0.0
    alpha1: float = 0.0


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    resid_est: float
    ne_resid_est: float
    ne_resid_true: Optional[float]
    max_rank: int
    seconds: float
    resid_true: Optional[float] = None


@dataclass
class LsqrTrace:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records],
            dtype=float,
        )


class LsqrResult(NamedTuple):
    x: TtTensor
    trace: LsqrTrace
    status: SolveStatus

    @property
    def iterations(self) -> int:
        return len(self.trace)


def estimate_residuals(state: LsqrState) -> tuple[float, float]:
    """Absolute estimates ``(||f - L x_i||, ||L^T (f - L x_i)||)`` from the scalars."""
    return state.phi_bar, state.phi_bar * state.alpha * abs(state.c)


def _rounded(t: TtTensor, opts: SolveOptions) -> TtTensor:
    if opts.round_tol == 0 and opts.max_rank is None:
        return t
    return tt_round(t, opts.round_tol, opts.max_rank)[0]


def _rounded_with_norm(t: TtTensor, opts: SolveOptions) -> tuple[TtTensor, float]:
    if opts.round_tol == 0 and opts.max_rank is None:
        return t, tt_norm(t)
    out, _, norm = _round(t, opts.round_tol, opts.max_rank)
    return out, norm


def residual_norms(op, f: TtTensor, x: TtTensor) -> tuple[float, float]:
    """Explicit ``(||f - L x||, ||L^T (f - L x)||)``.

    The residual is recompressed at a tight relative tolerance before the
    adjoint is applied, which keeps ranks bounded without losing digits.
    """
    r = tt_sum([f, op.apply(x, compact=True)], [1.0, -1.0])
    r, _, rn = _round(r, 1e-12, None)
    if rn == 0.0:
        return 0.0, 0.0
    return rn, tt_norm(op.adjoint(r, compact=True))


def tt_lsqr(
    l,
    f: TtTensor,
    opts: Optional[SolveOptions] = None,
    precond: Optional[Preconditioner] = None,
    x0: Optional[TtTensor] = None,
    callback: Optional[Callable[[LsqrState], None]] = None,
) -> LsqrResult:
    """Least squares ``min_X ||F - L(X)||_F`` by truncated TT-LSQR.

    Parameters
    ----------
    l : KronSumOperator
        Coefficient operator.
    f : TtTensor
        Right-hand side with ``f.mode_sizes == l.row_sizes``.
    opts : SolveOptions, optional
    precond : Preconditioner, optional
        Solve with ``L M^{-1}`` and map back with ``M^{-1}``.  Built from ``l``
        automatically when ``opts.use_preconditioner`` is set and none is given.
    x0 : TtTensor, optional
        Initial guess; the iteration then runs on the residual ``f - L x0``.
    callback : callable, optional
        Called with the live ``LsqrState`` after every iteration.

    Returns
    -------
    LsqrResult
        ``(x, trace, status)``.
    """
    opts = opts or SolveOptions()
    if f.mode_sizes != l.row_sizes:
        raise ValueError(f"right-hand side modes {f.mode_sizes} do not match operator rows {l.row_sizes}")
    if x0 is not None and x0.mode_sizes != l.col_sizes:
        raise ValueError(f"initial guess modes {x0.mode_sizes} do not match operator columns {l.col_sizes}")
    if precond is None and opts.use_preconditioner:
        precond = precond_build(l)
    op = l if precond is None else PreconditionedOperator(l, precond)

    if x0 is not None:
        f = _rounded(tt_sum([f, l.apply(x0, compact=True)], [1.0, -1.0]), opts)

    def finish(y: TtTensor, trace: LsqrTrace, status: SolveStatus) -> LsqrResult:
        x = y if precond is None else precond_solve(precond, y)
        if x0 is not None:
            x = _rounded(tt_axpy(1.0, x0, x), opts)
        return LsqrResult(x, trace, status)

    trace = LsqrTrace()
    zero = tt_zeros(l.col_sizes)
    t_start = time.perf_counter()

    u, beta1 = _rounded_with_norm(f, opts)
    if beta1 == 0.0:
        return finish(zero, trace, SolveStatus.CONVERGED)
    u = tt_scale(u, 1.0 / beta1)
    v, alpha1 = _rounded_with_norm(op.adjoint(u, compact=True), opts)
    if alpha1 == 0.0:
        # L^T f = 0: x = 0 already solves the normal equations
        return finish(zero, trace, SolveStatus.CONVERGED)
    v = tt_scale(v, 1.0 / alpha1)
    ne_scale = alpha1 * beta1
    thresh = BREAKDOWN_FACTOR * beta1

    st = LsqrState(
        alpha=alpha1, beta=beta1, rho=0.0, rho_bar=alpha1, phi=0.0, phi_bar=beta1,
        c=1.0, s=0.0, theta=0.0, u=u, v=v, x=zero, g=v, iteration=0,
        beta1=beta1, alpha1=alpha1,
    )
    status = SolveStatus.MAX_ITERS
    best_true, best_iter = math.inf, 0
    while st.iteration < opts.max_iters:
        st.iteration += 1
        broke = False

        u, beta = _rounded_with_norm(tt_sum([op.apply(st.v, compact=True), st.u], [1.0, -st.alpha]), opts)
        if beta <= thresh:
            beta, alpha, broke = 0.0, 0.0, True
            v = st.v
        else:
            u = tt_scale(u, 1.0 / beta)
            v, alpha = _rounded_with_norm(tt_sum([op.adjoint(u, compact=True), st.v], [1.0, -beta]), opts)
            if alpha <= thresh:
                alpha, broke = 0.0, True
            else:
                v = tt_scale(v, 1.0 / alpha)

        rho = math.hypot(st.rho_bar, beta)
        c = st.rho_bar / rho
        s = beta / rho
        theta = s * alpha
        rho_bar = -c * alpha
        phi = c * st.phi_bar
        phi_bar = s * st.phi_bar

        x = _rounded(tt_axpy(phi / rho, st.g, st.x), opts)
        g = _rounded(tt_axpy(-theta / rho, st.g, v), opts) if not broke else st.g

        st.u, st.v, st.x, st.g = u, v, x, g
        st.alpha, st.beta, st.rho, st.rho_bar = alpha, beta, rho, rho_bar
        st.c, st.s, st.theta, st.phi, st.phi_bar = c, s, theta, phi, phi_bar

        resid, ne_resid = estimate_residuals(st)
        ne_true = resid_true = None
        if opts.true_residual_every and st.iteration % opts.true_residual_every == 0:
            rt, nt = residual_norms(op, f, x)
            resid_true, ne_true = rt / beta1, nt / ne_scale
        trace.records.append(
            TraceRecord(
                iter=st.iteration,
                resid_est=resid / beta1,
                ne_resid_est=ne_resid / ne_scale,
                ne_resid_true=ne_true,
                max_rank=x.max_rank,
                seconds=time.perf_counter() - t_start,
                resid_true=resid_true,
            )
        )
        if callback is not None:
            callback(st)
        if broke:
            status = SolveStatus.BREAKDOWN
            log.info("lucky breakdown at iteration %d", st.iteration)
            break
        if ne_resid / ne_scale <= opts.ne_resid_tol:
            status = SolveStatus.CONVERGED
            break
        if resid_true is not None and opts.stall_window:
            if resid_true < opts.stall_factor * best_true:
                best_true, best_iter = resid_true, st.iteration
            elif st.iteration - best_iter >= opts.stall_window:
                status = SolveStatus.STAGNATED
                log.info("explicit residual stalled at %.3e after %d iterations", best_true, st.iteration)
                break
    return finish(st.x, trace, status)


def vector_lsqr(
    a,
    f: np.ndarray,
    tol: float = 1e-8,
    max_iters: Optional[int] = None,
    callback: Optional[Callable[[int, np.ndarray], None]] = None,
) -> tuple[np.ndarray, int]:
    """Classical LSQR (no damping) on a matrix, sparse matrix or LinearOperator.

    Stops when the estimated ``||a^T (f - a x)||`` drops below
    ``tol * ||a^T f||``.  ``max_iters`` defaults to ``2 * a.shape[1]``.
    """
    f = np.asarray(f, dtype=float).ravel()
    if a.ndim != 2 or a.shape[0] != f.size:
        raise ValueError(f"matrix of shape {a.shape} does not match right-hand side of length {f.size}")
    op = aslinearoperator(a)
    n = a.shape[1]
    if max_iters is None:
        max_iters = 2 * n
    x = np.zeros(n)
    beta = float(np.linalg.norm(f))
    if beta == 0.0:
        return x, 0
    u = f / beta
    v = op.rmatvec(u)
    alpha = float(np.linalg.norm(v))
    if alpha == 0.0:
        return x, 0
    v = v / alpha
    w = v.copy()
    phi_bar, rho_bar = beta, alpha
    ne0 = alpha * beta
    thresh = BREAKDOWN_FACTOR * beta
    it = 0
    while it < max_iters:
        it += 1
        u = op.matvec(v) - alpha * u
        beta = float(np.linalg.norm(u))
        broke = beta <= thresh
        if not broke:
            u = u / beta
            v = op.rmatvec(u) - beta * v
            alpha = float(np.linalg.norm(v))
            if alpha <= thresh:
                alpha, broke = 0.0, True
            else:
                v = v / alpha
        else:
            beta = alpha = 0.0
        rho = math.hypot(rho_bar, beta)
        c, s = rho_bar / rho, beta / rho
        theta = s * alpha
        rho_bar = -c * alpha
        phi = c * phi_bar
        phi_bar = s * phi_bar
        x = x + (phi / rho) * w
        w = v - (theta / rho) * w
        if callback is not None:
            callback(it, x)
        if broke or phi_bar * alpha * abs(c) <= tol * ne0:
            break
    return x, it
