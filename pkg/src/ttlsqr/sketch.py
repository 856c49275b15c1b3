"""Subsampled randomized Hadamard sketches for tall Kronecker-sum problems.

One sketch ``S = scale * J H D`` (random signs ``D``, normalized Walsh-Hadamard
transform ``H`` on the zero-padded rows, uniform row sample ``J``) is applied to
every mode matrix of every term, and to every mode of the right-hand side.  The
sketched problem has ``s`` rows per mode instead of ``n`` and is solved with
``tt_lsqr``; ``two_pass_solve`` then refines that solution on the full problem.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .kron import KronSumOperator
from .solver import LsqrTrace, SolveOptions, tt_lsqr
from .tt import TtTensor, tt_rank1

__all__ = [
    "SketchOptions",
    "Sketcher",
    "default_sketch_size",
    "fwht",
    "sketch_apply",
    "sketch_build",
    "sketch_operator",
    "two_pass_solve",
]


@dataclass(frozen=True)
class Sketcher:
    """Seeded SRHT map from ``R^n`` to ``R^s``.

    ``scale = sqrt(padded_dim / s)`` makes ``E[S^T S] = I`` given the
    orthonormal transform.
    """

    input_dim: int
    output_dim: int
    seed: int
    padded_dim: int
    sign_diagonal: np.ndarray
    sampled_rows: np.ndarray

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.padded_dim / self.output_dim))


@dataclass(frozen=True)
class SketchOptions:
    size: Optional[int] = None  # default: twice the total number of data columns
    seed: int = 0
    two_pass: bool = False
    sketch_iters: int = 30
    refine_iters: int = 2


def fwht(a: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform along axis 0 (length a power of 2)."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    tail = a.shape[1:]
    h = 1
    while h < n:
        v = a.reshape((n // (2 * h), 2, h) + tail)
        x = v[:, 0].copy()
        v[:, 0] += v[:, 1]
        v[:, 1] = x - v[:, 1]
        h *= 2
    return a / np.sqrt(n)


def sketch_build(n: int, s: int, seed: int = 0) -> Sketcher:
    if n < 1:
        raise ValueError(f"input dimension must be positive, got {n}")
    if not 1 <= s <= n:
        raise ValueError(f"sketch size must lie in [1, {n}], got {s}")
    padded = 1 << (n - 1).bit_length()
    rng = np.random.Generator(np.random.Philox(seed))
    signs = rng.integers(0, 2, size=padded) * 2.0 - 1.0
    rows = np.sort(rng.choice(padded, size=s, replace=False))
    signs.flags.writeable = False
    rows.flags.writeable = False
    return Sketcher(n, s, seed, padded, signs, rows)


def sketch_apply(sk: Sketcher, a) -> np.ndarray:
    """``scale * J H D [a; 0]`` for a vector or an ``n x k`` matrix."""
    if sp.issparse(a):
        a = a.toarray()
    a = np.asarray(a, dtype=float)
    if a.shape[0] != sk.input_dim:
        raise ValueError(f"expected {sk.input_dim} rows, got {a.shape[0]}")
    padded = np.zeros((sk.padded_dim,) + a.shape[1:])
    padded[: sk.input_dim] = a
    padded *= sk.sign_diagonal.reshape((-1,) + (1,) * (a.ndim - 1))
    return sk.scale * fwht(padded)[sk.sampled_rows]


def default_sketch_size(l: KronSumOperator) -> int:
    # twice the number of data columns: l terms times the column counts of all modes
    return 2 * l.num_terms * sum(l.col_sizes)


def _common_rows(l: KronSumOperator) -> int:
    rows = set(l.row_sizes)
    if len(rows) != 1:
        raise ValueError(f"sketching needs equal row sizes in every mode, got {l.row_sizes}")
    return rows.pop()


def sketch_operator(
    sk: Sketcher, l: KronSumOperator, f: Union[TtTensor, Sequence[np.ndarray]]
) -> tuple[KronSumOperator, TtTensor]:
    """Sketched operator and right-hand side.

    ``f`` is either the per-mode factors of a rank-1 right-hand side or a
    general TtTensor; in the latter case every core is sketched along its mode,
    which is ``S kron ... kron S`` on ``vec(f)``.
    """
    n = _common_rows(l)
    if n != sk.input_dim:
        raise ValueError(f"sketcher expects {sk.input_dim} rows, operator has {n}")
    terms = [[sketch_apply(sk, a) for a in row] for row in l.terms]
    if isinstance(f, TtTensor):
        if f.mode_sizes != l.row_sizes:
            raise ValueError(f"right-hand side modes {f.mode_sizes} do not match {l.row_sizes}")
        cores = []
        for c in f.cores:
            r0, m, r1 = c.shape
            z = sketch_apply(sk, c.transpose(1, 0, 2).reshape(m, r0 * r1))
            cores.append(z.reshape(sk.output_dim, r0, r1).transpose(1, 0, 2))
        f_hat = TtTensor(cores)
    else:
        if len(f) != l.num_modes:
            raise ValueError(f"expected {l.num_modes} factors, got {len(f)}")
        f_hat = tt_rank1([sketch_apply(sk, np.ravel(v)) for v in f])
    return KronSumOperator(terms), f_hat


def two_pass_solve(
    l: KronSumOperator,
    f: TtTensor,
    opts: Optional[SolveOptions] = None,
    sketch_iters: int = 30,
    refine_iters: int = 2,
    seed: int = 0,
    sketch_size: Optional[int] = None,
) -> tuple[TtTensor, list]:
    """Solve the sketched problem, then refine on ``min_z ||(f - L x0) - L z||``.

    Returns ``(x, [sketch_trace, refine_trace])``; the second trace is empty
    when ``refine_iters`` is 0, in which case ``x`` is the sketched solution.
    """
    opts = opts or SolveOptions()
    n = _common_rows(l)
    s = min(sketch_size or default_sketch_size(l), n)
    sk = sketch_build(n, s, seed)
    l_hat, f_hat = sketch_operator(sk, l, f)
    x0, tr0, _ = tt_lsqr(l_hat, f_hat, dataclasses.replace(opts, max_iters=sketch_iters))
    if refine_iters == 0:
        return x0, [tr0, LsqrTrace()]
    x, tr1, _ = tt_lsqr(l, f, dataclasses.replace(opts, max_iters=refine_iters), x0=x0)
    return x, [tr0, tr1]
