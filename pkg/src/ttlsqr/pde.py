"""Finite-difference test problems on the unit cube and a convergence-study runner.

Both problems discretize on ``n`` interior nodes per dimension with
``h = 1/(n+1)`` and homogeneous Dirichlet data, giving the three-term operator

    T3 kron I kron I  +  I kron T2 kron I  +  I kron I kron (T1 + B)

where the convection matrix ``B`` acts on the first (x) mode.  The source
term is constant, so the right-hand side is rank one.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .fileio import write_trace_csv
from .kron import KronSumOperator, precond_build
from .solver import SolveOptions, tt_lsqr
from .tt import TtTensor, tt_rank1

__all__ = [
    "PdeProblem",
    "build_convection_problem",
    "build_variable_coefficient_problem",
    "final_true_residual",
    "run_convergence_study",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PdeProblem:
    n: int
    operator: KronSumOperator
    rhs: TtTensor
    variant: str


def _grid(n: int):
    if n < 3:
        raise ValueError(f"need at least 3 interior nodes, got {n}")
    h = 1.0 / (n + 1)
    return h, h * np.arange(1, n + 1)


def _assemble(n: int, diffusion: sp.spmatrix, convection: sp.spmatrix, variant: str) -> PdeProblem:
    eye = sp.identity(n, format="csr")
    t = sp.csr_matrix(diffusion)
    tb = sp.csr_matrix(diffusion + convection)
    # terms[i][j] acts on mode j; the convective factor sits in mode 0 (x)
    terms = [[eye, eye, t], [eye, t, eye], [tb, eye, eye]]
    rhs = tt_rank1([np.ones(n)] * 3)
    return PdeProblem(n, KronSumOperator(terms), rhs, variant)


def _centered_first_difference(coef: np.ndarray, h: float) -> sp.csr_matrix:
    # (B u)_k = coef_k (u_{k+1} - u_{k-1}) / (2h)
    n = coef.size
    return sp.diags([-coef[1:] / (2 * h), coef[:-1] / (2 * h)], [-1, 1], shape=(n, n), format="csr")


def build_convection_problem(n: int) -> PdeProblem:
    """``-Laplace(u) + 2 exp(1 - x) u_x = 1``."""
    h, x = _grid(n)
    t = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr") / h**2
    b = _centered_first_difference(2 * np.exp(1 - x), h)
    return _assemble(n, t, b, "convection")


def build_variable_coefficient_problem(
    n: int, coefficient: Optional[Callable[[np.ndarray], np.ndarray]] = None
) -> PdeProblem:
    """``(a(x) u_x)_x + (a(y) u_y)_y + (a(z) u_z)_z + u_x = 1`` with ``a(x) = -exp(-x)``.

    The flux form is discretized with ``a`` sampled at the cell midpoints
    ``x_{k +- 1/2}``.  ``coefficient`` replaces ``a`` (used by tests).
    """
    h, x = _grid(n)
    a = coefficient or (lambda s: -np.exp(-s))
    mid = h * (np.arange(n + 1) + 0.5)  # x_{k-1/2} for k = 1..n+1, i.e. faces
    am = np.asarray(a(mid), dtype=float)
    lo, hi = am[:-1], am[1:]  # a(x_{k-1/2}), a(x_{k+1/2})
    t = sp.diags([lo[1:], -(lo + hi), hi[:-1]], [-1, 0, 1], format="csr") / h**2
    b = _centered_first_difference(np.ones(n), h)
    return _assemble(n, t, b, "variable_coefficient")


def final_true_residual(trace) -> Optional[float]:
    """Last explicitly computed relative residual of a run, if any."""
    for rec in reversed(trace.records):
        if rec.resid_true is not None:
            return rec.resid_true
    return None


def run_convergence_study(
    problem: PdeProblem,
    tol_list: Sequence[float],
    rank_list: Sequence[Optional[int]],
    max_iters: int,
    out_dir=None,
    precondition: bool = True,
    true_residual_every: int = 10,
    ne_resid_tol: float = 1e-14,
    stall_window: int = 0,
) -> list:
    """One TT-LSQR run per ``(tol, rank)`` pair; returns their traces in that order.

    ``true_residual_every`` controls how often the explicit residuals are
    computed; they are what reveals stagnation, since the recurrence
    estimates keep decreasing under truncation.  With ``out_dir`` each run is
    written as ``trace_tol{tol}_rank{rank}.csv`` plus a ``residual_*.csv``
    with the explicit relative residual, and a ``manifest.json`` index.
    A positive ``stall_window`` ends each run once its explicit residual has
    stopped improving (see ``SolveOptions``).
    """
    precond = precond_build(problem.operator) if precondition else None
    traces = []
    runs = []
    for tol in tol_list:
        for rank in rank_list:
            opts = SolveOptions(
                round_tol=tol,
                max_rank=rank,
                max_iters=max_iters,
                ne_resid_tol=ne_resid_tol,
                true_residual_every=true_residual_every,
                stall_window=stall_window,
            )
            res = tt_lsqr(problem.operator, problem.rhs, opts, precond=precond)
            log.info(
                "tol=%g rank=%s: %s after %d iterations", tol, rank, res.status.value, res.iterations
            )
            traces.append(res.trace)
            entry = {
                "tol": tol,
                "max_rank": rank,
                "status": res.status.value,
                "iterations": res.iterations,
                "final_true_residual": final_true_residual(res.trace),
            }
            if out_dir is not None:
                out = Path(out_dir)
                out.mkdir(parents=True, exist_ok=True)
                stem = f"tol{tol:g}_rank{rank if rank is not None else 'none'}"
                write_trace_csv(res.trace, out / f"trace_{stem}.csv")
                with open(out / f"residual_{stem}.csv", "w", encoding="utf-8") as fh:
                    fh.write("iter,resid_true\n")
                    for rec in res.trace:
                        if rec.resid_true is not None:
                            fh.write(f"{rec.iter},{rec.resid_true!r}\n")
                entry["trace"] = f"trace_{stem}.csv"
                entry["residual"] = f"residual_{stem}.csv"
            runs.append(entry)
    if out_dir is not None:
        manifest = {
            "problem": problem.variant,
            "n": problem.n,
            "precondition": precondition,
            "max_iters": max_iters,
            "runs": runs,
        }
        with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
    return traces
