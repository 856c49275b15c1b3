"""Multiterm Kronecker-sum operators acting on tensor trains.

The operator ``L(X) = sum_i X x_1 A_1^(i) x_2 ... x_d A_d^(i)`` has the
matrix form ``sum_i A_d^(i) kron ... kron A_1^(i)`` acting on ``vec(X)``
(column-major).  ``terms[i][j]`` holds ``A_j^(i)`` (0-based), of shape
``n_j x m_j``.  Dense arrays and ``scipy.sparse`` matrices are both accepted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .tt import DENSE_ELEMENT_CAP, TtTensor, _apply_to_core, tt_round, tt_sum

__all__ = [
    "KronSumOperator",
    "PreconditionedOperator",
    "Preconditioner",
    "RankDeficientError",
    "op_apply",
    "op_apply_adjoint",
    "op_to_dense",
    "precond_build",
    "precond_solve",
]


class RankDeficientError(ValueError):
    """A mode matrix lacks full column rank, so its R factor is singular."""

    def __init__(self, mode: int, term: int, detail: str):
        super().__init__(f"mode {mode}, term {term}: {detail}")
        self.mode = mode
        self.term = term


def _as_matrix(a):
    if sp.issparse(a):
        a = sp.csr_matrix(a, dtype=float)
        if not np.all(np.isfinite(a.data)):
            raise ValueError("matrix contains non-finite entries")
        return a
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    a.flags.writeable = False
    return a


def _round_if_needed(x: TtTensor, round_tol: float, max_rank: Optional[int]) -> TtTensor:
    if round_tol == 0 and max_rank is None:
        return x
    return tt_round(x, round_tol, max_rank)[0]


class KronSumOperator:
    """Immutable ``l x d`` grid of mode matrices.

    Parameters
    ----------
    terms : sequence of sequences
        ``terms[i][j]`` is the matrix of term ``i`` acting on mode ``j``.
        All matrices in a mode share the same shape.
    """

    def __init__(self, terms: Sequence[Sequence]):
        if len(terms) == 0:
            raise ValueError("need at least one term")
        d = len(terms[0])
        if d == 0:
            raise ValueError("need at least one mode")
        grid = []
        for i, row in enumerate(terms):
            if len(row) != d:
                raise ValueError(f"term {i} has {len(row)} modes, expected {d}")
            grid.append(tuple(_as_matrix(a) for a in row))
        for j in range(d):
            shape = grid[0][j].shape
            for i in range(1, len(grid)):
                if grid[i][j].shape != shape:
                    raise ValueError(
                        f"mode {j}: term {i} has shape {grid[i][j].shape}, expected {shape}"
                    )
        self._terms = tuple(grid)
        self._terms_t = None
        self._compact = False  # not yet computed; None means "no gain"

    @property
    def terms(self) -> tuple:
        return self._terms

    @property
    def num_terms(self) -> int:
        return len(self._terms)

    @property
    def num_modes(self) -> int:
        return len(self._terms[0])

    @property
    def row_sizes(self) -> tuple:
        return tuple(a.shape[0] for a in self._terms[0])

    @property
    def col_sizes(self) -> tuple:
        return tuple(a.shape[1] for a in self._terms[0])

    @property
    def transposed_terms(self) -> tuple:
        if self._terms_t is None:
            self._terms_t = tuple(
                tuple(a.T.tocsr() if sp.issparse(a) else a.T for a in row) for row in self._terms
            )
        return self._terms_t

    def __repr__(self) -> str:
        return (
            f"KronSumOperator(num_terms={self.num_terms}, row_sizes={self.row_sizes}, "
            f"col_sizes={self.col_sizes})"
        )

    def apply(
        self, x: TtTensor, round_tol: float = 0.0, max_rank: Optional[int] = None, compact: bool = False
    ) -> TtTensor:
        """``op_apply``; with ``compact`` the unrounded result may use the
        compressed operator chain and so have fewer than ``l * r`` ranks."""
        if compact and self.compact_cores is not None:
            if x.mode_sizes != self.col_sizes:
                raise ValueError(f"tensor modes {x.mode_sizes} do not match operator columns {self.col_sizes}")
            return _round_if_needed(_apply_chain(self.compact_cores, x, False), round_tol, max_rank)
        return op_apply(self, x, round_tol, max_rank)

    def adjoint(
        self, y: TtTensor, round_tol: float = 0.0, max_rank: Optional[int] = None, compact: bool = False
    ) -> TtTensor:
        if compact and self.compact_cores is not None:
            if y.mode_sizes != self.row_sizes:
                raise ValueError(f"tensor modes {y.mode_sizes} do not match operator rows {self.row_sizes}")
            return _round_if_needed(_apply_chain(self.compact_cores, y, True), round_tol, max_rank)
        return op_apply_adjoint(self, y, round_tol, max_rank)

    @property
    def compact_cores(self):
        """Operator-TT cores ``(q_{j-1}, n_j, m_j, q_j)`` of the whole sum, or
        ``None`` when compression does not lower any bond below ``num_terms``.

        Sums such as ``T x I x I + I x T x I + I x I x T`` compress from
        three terms to bond dimension two.
        """
        if self._compact is False:
            self._compact = _compress(self)
        return self._compact


# mode matrices larger than this are never densified for compression
_COMPACT_ELEMENT_CAP = 250_000


def _compress(l: KronSumOperator):
    if l.num_terms == 1 or l.num_modes == 1:
        return None
    if any(n * m > _COMPACT_ELEMENT_CAP for n, m in zip(l.row_sizes, l.col_sizes)):
        return None
    parts = [
        TtTensor([(a.toarray() if sp.issparse(a) else np.asarray(a)).reshape(1, -1, 1) for a in row])
        for row in l.terms
    ]
    chain, _ = tt_round(tt_sum(parts), 1e-14)
    if max(chain.ranks) >= l.num_terms:
        return None
    cores = []
    for c, n, m in zip(chain.cores, l.row_sizes, l.col_sizes):
        core = c.reshape(c.shape[0], n, m, c.shape[2]).copy()
        core.flags.writeable = False
        cores.append(core)
    return tuple(cores)


def _apply_chain(cores, x: TtTensor, adjoint: bool) -> TtTensor:
    out = []
    for w, g in zip(cores, x.cores):
        # w: (q0, n, m, q1), g: (r0, m, r1) -> (q0 r0, n, q1 r1)
        t = np.tensordot(w, g, axes=(1 if adjoint else 2, 1))  # (q0, p, q1, r0, r1)
        q0, p, q1, r0, r1 = t.shape
        out.append(t.transpose(0, 3, 1, 2, 4).reshape(q0 * r0, p, q1 * r1))
    return TtTensor._trusted(out)


def _apply_terms(terms, x: TtTensor) -> TtTensor:
    # one TT per term, summed in ascending term order
    parts = [TtTensor([_apply_to_core(c, a) for c, a in zip(x.cores, row)]) for row in terms]
    return tt_sum(parts)


def op_apply(
    l: KronSumOperator, x: TtTensor, round_tol: float = 0.0, max_rank: Optional[int] = None
) -> TtTensor:
    """``sum_i x x_1 A_1^(i) ... x_d A_d^(i)``, rounded unless ``round_tol == 0``
    and no rank cap is given."""
    if x.mode_sizes != l.col_sizes:
        raise ValueError(f"tensor modes {x.mode_sizes} do not match operator columns {l.col_sizes}")
    return _round_if_needed(_apply_terms(l.terms, x), round_tol, max_rank)


def op_apply_adjoint(
    l: KronSumOperator, y: TtTensor, round_tol: float = 0.0, max_rank: Optional[int] = None
) -> TtTensor:
    if y.mode_sizes != l.row_sizes:
        raise ValueError(f"tensor modes {y.mode_sizes} do not match operator rows {l.row_sizes}")
    return _round_if_needed(_apply_terms(l.transposed_terms, y), round_tol, max_rank)


def op_to_dense(l: KronSumOperator, cap: int = DENSE_ELEMENT_CAP) -> np.ndarray:
    """``sum_i A_d^(i) kron ... kron A_1^(i)`` as a dense matrix (oracle use)."""
    total = int(np.prod(l.row_sizes, dtype=np.int64) * np.prod(l.col_sizes, dtype=np.int64))
    if total > cap:
        raise ValueError(f"dense operator size {total} exceeds the element cap {cap}")
    out = None
    for row in l.terms:
        mats = [a.toarray() if sp.issparse(a) else a for a in row]
        k = mats[-1]
        for a in reversed(mats[:-1]):
            k = np.kron(k, a)
        out = k if out is None else out + k
    return out


@dataclass(frozen=True)
class Preconditioner:
    """Right preconditioner ``M = R_d kron ... kron R_1``.

    ``condition_estimates[j][i]`` is ``kappa(R_j^(i))``; ``chosen_term_index[j]``
    is the term whose factor was kept for mode ``j``.
    """

    mode_factors: tuple
    chosen_term_index: tuple
    condition_estimates: tuple

    @property
    def sizes(self) -> tuple:
        return tuple(r.shape[0] for r in self.mode_factors)


def _qr_factor(a, mode: int, term: int) -> np.ndarray:
    dense = a.toarray() if sp.issparse(a) else np.asarray(a)
    n, m = dense.shape
    if n < m:
        raise RankDeficientError(mode, term, f"shape {dense.shape} has more columns than rows")
    r = np.linalg.qr(dense, mode="r")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    r = signs[:, None] * r
    scale = np.linalg.norm(dense)
    if scale == 0 or np.min(np.abs(np.diag(r))) < 1e-12 * scale:
        raise RankDeficientError(mode, term, "matrix is numerically rank deficient")
    return r


def precond_build(l: KronSumOperator) -> Preconditioner:
    """Per mode, QR every term's matrix and keep the best-conditioned R."""
    factors, chosen, kappas = [], [], []
    for j in range(l.num_modes):
        rs, ks = [], []
        for i in range(l.num_terms):
            r = _qr_factor(l.terms[i][j], j, i)
            s = np.linalg.svd(r, compute_uv=False)
            rs.append(r)
            ks.append(float(s[0] / s[-1]))
        best = int(np.argmin(ks))  # first minimizer on ties
        r = rs[best]
        r.flags.writeable = False
        factors.append(r)
        chosen.append(best)
        kappas.append(tuple(ks))
    return Preconditioner(tuple(factors), tuple(chosen), tuple(kappas))


def precond_solve(p: Preconditioner, x: TtTensor, transpose: bool = False) -> TtTensor:
    """Solve ``M vec(z) = vec(x)`` (or ``M^T``) by one triangular solve per core."""
    if x.mode_sizes != p.sizes:
        raise ValueError(f"tensor modes {x.mode_sizes} do not match preconditioner sizes {p.sizes}")
    cores = []
    for c, r in zip(x.cores, p.mode_factors):
        if np.any(np.diag(r) == 0):
            raise ValueError("singular preconditioner factor")
        r0, n, r1 = c.shape
        flat = c.transpose(1, 0, 2).reshape(n, r0 * r1)
        z = scipy.linalg.solve_triangular(r, flat, lower=False, trans="T" if transpose else "N")
        cores.append(z.reshape(n, r0, r1).transpose(1, 0, 2))
    return TtTensor(cores)


class PreconditionedOperator:
    """``L o M^{-1}`` applied implicitly; the adjoint is ``M^{-T} o L^T``."""

    def __init__(self, base: KronSumOperator, precond: Preconditioner):
        if precond.sizes != base.col_sizes:
            raise ValueError("preconditioner does not match the operator's column sizes")
        self.base = base
        self.precond = precond

    @property
    def row_sizes(self) -> tuple:
        return self.base.row_sizes

    @property
    def col_sizes(self) -> tuple:
        return self.base.col_sizes

    @property
    def num_terms(self) -> int:
        return self.base.num_terms

    def apply(
        self, y: TtTensor, round_tol: float = 0.0, max_rank: Optional[int] = None, compact: bool = False
    ) -> TtTensor:
        return self.base.apply(precond_solve(self.precond, y), round_tol, max_rank, compact)

    def adjoint(
        self, u: TtTensor, round_tol: float = 0.0, max_rank: Optional[int] = None, compact: bool = False
    ) -> TtTensor:
        z = precond_solve(self.precond, self.base.adjoint(u, compact=compact), transpose=True)
        return _round_if_needed(z, round_tol, max_rank)
