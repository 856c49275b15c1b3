"""Tensor-train storage and format-level arithmetic.

A d-mode tensor is stored as a chain of 3-way cores ``G_k`` of shape
``(r_{k-1}, n_k, r_k)`` with ``r_0 = r_d = 1``; entry ``(i_1, ..., i_d)`` is
the matrix product ``G_1[:, i_1, :] @ G_2[:, i_2, :] @ ... @ G_d[:, i_d, :]``.

Every operation here is pure: tensors are never modified in place and the
core arrays are flagged read-only.  Indices are 0-based.

Vectorization convention: ``vec(X)`` is column-major (``order="F"``), so that
``X x_1 A_1 ... x_d A_d`` corresponds to ``(A_d kron ... kron A_1) vec(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "DENSE_ELEMENT_CAP",
    "RoundingReport",
    "TtTensor",
    "tt_axpy",
    "tt_eval",
    "tt_from_dense",
    "tt_inner",
    "tt_mode_apply",
    "tt_norm",
    "tt_rank1",
    "tt_round",
    "tt_scale",
    "tt_sum",
    "tt_to_dense",
    "tt_zeros",
]

DENSE_ELEMENT_CAP = 10**6


class TtTensor:
    """Immutable tensor train.

    Parameters
    ----------
    cores : sequence of ndarray
        ``d >= 1`` arrays of shape ``(r_{k-1}, n_k, r_k)`` with matching
        adjacent ranks and ``r_0 = r_d = 1``.
    """

    __slots__ = ("_cores",)

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = [np.asarray(c, dtype=float) for c in cores]
        if not cores:
            raise ValueError("a tensor train needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise ValueError(f"core {k} has ndim {c.ndim}, expected 3")
            if min(c.shape) < 1:
                raise ValueError(f"core {k} has an empty dimension: {c.shape}")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"core {k} contains non-finite values")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks r_0 and r_d must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise ValueError(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{cores[k].shape[2]} != {cores[k + 1].shape[0]}"
                )
        frozen = []
        for c in cores:
            if c.flags.writeable:
                c = c.copy()
                c.flags.writeable = False
            frozen.append(c)
        self._cores = tuple(frozen)

    @classmethod
    def _trusted(cls, cores) -> "TtTensor":
        # internal constructor for freshly computed, already consistent cores
        obj = cls.__new__(cls)
        for c in cores:
            c.flags.writeable = False
        obj._cores = tuple(cores)
        return obj

    @property
    def cores(self) -> tuple:
        return self._cores

    @property
    def ndim(self) -> int:
        return len(self._cores)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self._cores)

    @property
    def ranks(self) -> tuple:
        """TT-ranks ``(r_0, ..., r_d)``."""
        return (1,) + tuple(c.shape[2] for c in self._cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    @property
    def storage(self) -> int:
        """Number of stored reals, ``sum_k r_{k-1} n_k r_k``."""
        return sum(c.size for c in self._cores)

    def __repr__(self) -> str:
        return f"TtTensor(mode_sizes={self.mode_sizes}, ranks={self.ranks})"

    def to_json_dict(self) -> dict:
        return {
            "mode_sizes": list(self.mode_sizes),
            "tt_ranks": list(self.ranks),
            "cores": [c.ravel(order="C").tolist() for c in self._cores],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TtTensor":
        n = doc["mode_sizes"]
        r = doc["tt_ranks"]
        if len(r) != len(n) + 1 or len(doc["cores"]) != len(n):
            raise ValueError("inconsistent mode_sizes / tt_ranks / cores lengths")
        cores = []
        for k, flat in enumerate(doc["cores"]):
            shape = (r[k], n[k], r[k + 1])
            flat = np.asarray(flat, dtype=float)
            if flat.size != np.prod(shape):
                raise ValueError(f"core {k} has {flat.size} values, expected shape {shape}")
            cores.append(flat.reshape(shape))
        return cls(cores)


@dataclass(frozen=True)
class RoundingReport:
    input_ranks: tuple
    output_ranks: tuple
    per_mode_truncation_error: tuple
    tolerance_used: float
    max_rank_used: Optional[int] = None
    input_norm: float = field(default=0.0, compare=False)

    @property
    def total_error_bound(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.per_mode_truncation_error))))


def _check_same_modes(x: TtTensor, y: TtTensor) -> None:
    if x.mode_sizes != y.mode_sizes:
        raise ValueError(f"mode sizes differ: {x.mode_sizes} vs {y.mode_sizes}")


def tt_zeros(mode_sizes: Sequence[int]) -> TtTensor:
    """All-zero tensor with rank-1 cores."""
    return TtTensor([np.zeros((1, int(n), 1)) for n in mode_sizes])


def tt_rank1(factors: Sequence[np.ndarray]) -> TtTensor:
    """Outer product ``f_1 o f_2 o ... o f_d`` as a rank-1 tensor train."""
    if len(factors) == 0:
        raise ValueError("need at least one factor")
    cores = []
    for k, f in enumerate(factors):
        f = np.asarray(f, dtype=float).ravel()
        if f.size == 0:
            raise ValueError(f"factor {k} is empty")
        cores.append(f.reshape(1, -1, 1))
    return TtTensor(cores)


def _svd(a: np.ndarray):
    try:
        return scipy.linalg.svd(a, full_matrices=False, check_finite=False)
    except np.linalg.LinAlgError:
        # divide and conquer occasionally fails to converge; QR iteration is slower but robust
        return scipy.linalg.svd(a, full_matrices=False, check_finite=False, lapack_driver="gesvd")


def _qr(a: np.ndarray):
    return scipy.linalg.qr(a, mode="economic", check_finite=False)


def _truncation_rank(s: np.ndarray, delta: float, max_rank: Optional[int], shape=None) -> int:
    # smallest r with sum(s[r:]**2) <= delta**2, then the cap; never below 1.
    # Singular values under the numerical-rank floor (as in matrix_rank) always go.
    tail = np.cumsum(np.square(s[::-1]))[::-1]  # tail[r] = sum(s[r:]**2)
    tail = np.append(tail, 0.0)
    r = int(np.argmax(tail <= delta * delta))
    if shape is not None and s.size:
        r = min(r, int(np.count_nonzero(s > s[0] * max(shape) * np.finfo(float).eps)))
    if max_rank is not None:
        r = min(r, int(max_rank))
    return max(r, 1)


def tt_from_dense(
    a: np.ndarray, tolerance: float = 0.0, max_rank: Optional[int] = None
) -> tuple[TtTensor, RoundingReport]:
    """TT-SVD of a dense array by successive unfolding SVDs.

    The per-unfolding budget is ``tolerance * ||a||_F / sqrt(d - 1)``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        raise ValueError("need at least one mode")
    if a.size == 0:
        raise ValueError(f"zero-size dimension in shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("input contains non-finite values")
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    shape = a.shape
    d = len(shape)
    norm = float(np.linalg.norm(a))
    full_ranks = (1,) + tuple(
        int(min(np.prod(shape[: k + 1]), np.prod(shape[k + 1 :]))) for k in range(d - 1)
    ) + (1,)
    if d == 1:
        x = TtTensor([a.reshape(1, -1, 1)])
        return x, RoundingReport(full_ranks, x.ranks, (), tolerance, max_rank, norm)
    if norm == 0.0:
        x = tt_zeros(shape)
        return x, RoundingReport(full_ranks, x.ranks, (0.0,) * (d - 1), tolerance, max_rank, 0.0)
    delta = tolerance * norm / np.sqrt(d - 1)
    cores, errors = [], []
    rest = a.reshape(1, -1)
    r_prev = 1
    for k in range(d - 1):
        mat = rest.reshape(r_prev * shape[k], -1)
        u, s, vt = _svd(mat)
        r = _truncation_rank(s, delta, max_rank, mat.shape)
        errors.append(float(np.sqrt(np.sum(s[r:] ** 2))))
        cores.append(u[:, :r].reshape(r_prev, shape[k], r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, shape[-1], 1))
    x = TtTensor(cores)
    return x, RoundingReport(full_ranks, x.ranks, tuple(errors), tolerance, max_rank, norm)


def tt_to_dense(x: TtTensor, cap: int = DENSE_ELEMENT_CAP) -> np.ndarray:
    """Full array of a tensor train; refuses tensors above ``cap`` elements."""
    total = int(np.prod(x.mode_sizes, dtype=np.int64))
    if total > cap:
        raise ValueError(f"dense size {total} exceeds the element cap {cap}")
    out = x.cores[0].reshape(x.mode_sizes[0], -1)
    for c in x.cores[1:]:
        r0, n, r1 = c.shape
        out = (out @ c.reshape(r0, n * r1)).reshape(-1, r1)
    return out.reshape(x.mode_sizes)


def tt_eval(x: TtTensor, index: Sequence[int]) -> float:
    if len(index) != x.ndim:
        raise IndexError(f"expected {x.ndim} indices, got {len(index)}")
    v = np.ones((1, 1))
    for k, (i, c) in enumerate(zip(index, x.cores)):
        if not 0 <= i < c.shape[1]:
            raise IndexError(f"index {i} out of range for mode {k} of size {c.shape[1]}")
        v = v @ c[:, i, :]
    return float(v[0, 0])


def tt_scale(x: TtTensor, alpha: float) -> TtTensor:
    if alpha == 1.0:
        return x
    return TtTensor._trusted((alpha * x.cores[0],) + x.cores[1:])


def tt_sum(tensors: Sequence[TtTensor], coefficients: Optional[Sequence[float]] = None) -> TtTensor:
    """Exact sum ``sum_i c_i X_i`` by block concatenation of the cores.

    Interior ranks of the result are the sums of the input ranks.
    """
    if len(tensors) == 0:
        raise ValueError("need at least one tensor")
    if coefficients is None:
        coefficients = [1.0] * len(tensors)
    modes = tensors[0].mode_sizes
    for t in tensors[1:]:
        if t.mode_sizes != modes:
            raise ValueError(f"mode sizes differ: {modes} vs {t.mode_sizes}")
    if len(tensors) == 1:
        return tt_scale(tensors[0], coefficients[0])
    d = len(modes)
    if d == 1:
        return TtTensor._trusted([sum(c * t.cores[0] for c, t in zip(coefficients, tensors))])
    cores = [np.concatenate([c * t.cores[0] for c, t in zip(coefficients, tensors)], axis=2)]
    for k in range(1, d - 1):
        blocks = [t.cores[k] for t in tensors]
        r0 = sum(b.shape[0] for b in blocks)
        r1 = sum(b.shape[2] for b in blocks)
        core = np.zeros((r0, modes[k], r1))
        i = j = 0
        for b in blocks:
            core[i : i + b.shape[0], :, j : j + b.shape[2]] = b
            i += b.shape[0]
            j += b.shape[2]
        cores.append(core)
    cores.append(np.concatenate([t.cores[-1] for t in tensors], axis=0))
    return TtTensor._trusted(cores)


def tt_axpy(alpha: float, x: TtTensor, y: TtTensor) -> TtTensor:
    """``alpha * x + y`` with no rounding."""
    _check_same_modes(x, y)
    return tt_sum([x, y], [alpha, 1.0])


def tt_inner(x: TtTensor, y: TtTensor) -> float:
    """Frobenius inner product by left-to-right core contraction."""
    _check_same_modes(x, y)
    w = np.ones((1, 1))
    for a, b in zip(x.cores, y.cores):
        # w[a, b] -> sum over a, b, n of w[a,b] * A[a,n,c] * B[b,n,e]
        t = np.tensordot(w, a, axes=(0, 0))  # (rb, n, ra')
        w = np.tensordot(t, b, axes=([0, 1], [0, 1]))  # (ra', rb')
    return float(w[0, 0])


def _left_orthogonalize(cores: list) -> list:
    """Left-to-right QR sweep; the norm ends up in the last core."""
    cores = list(cores)
    for k in range(len(cores) - 1):
        _qr_left(cores, k)
    return cores


def tt_norm(x: TtTensor) -> float:
    cores = _left_orthogonalize(x.cores)
    return float(np.linalg.norm(cores[-1]))


def tt_round(
    x: TtTensor, tolerance: float = 0.0, max_rank: Optional[int] = None
) -> tuple[TtTensor, RoundingReport]:
    """Recompress ``x`` so that ``||x - result||_F <= tolerance * ||x||_F``.

    Right-to-left orthogonalization followed by a left-to-right sweep of
    truncated SVDs with per-mode budget ``tolerance * ||x|| / sqrt(d - 1)``.
    ``max_rank`` caps every output rank and may break the error bound.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    out, report, _ = _round(x, tolerance, max_rank)
    return out, report


def _qr_left(cores: list, k: int) -> None:
    # make core k left-orthonormal, pushing R into core k+1
    r0, n, r1 = cores[k].shape
    q, r = _qr(cores[k].reshape(r0 * n, r1))
    cores[k] = q.reshape(r0, n, -1)
    cores[k + 1] = np.tensordot(r, cores[k + 1], axes=(1, 0))


def _qr_right(cores: list, k: int) -> None:
    # make core k right-orthonormal, pushing R^T into core k-1
    r0, n, r1 = cores[k].shape
    q, r = _qr(cores[k].reshape(r0, n * r1).T)
    cores[k] = q.T.reshape(-1, n, r1)
    cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))


def _round(x: TtTensor, tolerance: float, max_rank: Optional[int]):
    """``tt_round`` that also returns the norm of the result.

    Cores are first orthogonalized from both ends towards a center core;
    boundary QRs are cheap and already cut oversized ranks down to what the
    mode sizes allow, so the large inner core is never factored at its full
    sum rank.  Bonds right of the center are truncated on a left-to-right SVD
    sweep, then the center is brought back and the remaining bonds are
    truncated right-to-left.  Every truncation happens in an orthonormal
    gauge, so each ``eps_k`` is an unfolding tail and the usual TT-SVD bound
    applies.
    """
    d = x.ndim
    if d == 1:
        norm = float(np.linalg.norm(x.cores[0]))
        return x, RoundingReport(x.ranks, x.ranks, (), tolerance, max_rank, norm), norm
    cores = list(x.cores)
    c = d // 2
    for k in range(c):
        _qr_left(cores, k)
    for k in range(d - 1, c, -1):
        _qr_right(cores, k)
    norm = float(np.linalg.norm(cores[c]))
    if norm == 0.0:
        z = tt_zeros(x.mode_sizes)
        return z, RoundingReport(x.ranks, z.ranks, (0.0,) * (d - 1), tolerance, max_rank, 0.0), 0.0
    delta = tolerance * norm / np.sqrt(d - 1)
    errors = [0.0] * (d - 1)
    for k in range(c, d - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(r0 * n, r1))
        r = _truncation_rank(s, delta, max_rank, (r0 * n, r1))
        errors[k] = float(np.sqrt(np.sum(s[r:] ** 2)))
        cores[k] = u[:, :r].reshape(r0, n, r)
        cores[k + 1] = np.tensordot(s[:r, None] * vt[:r], cores[k + 1], axes=(1, 0))
    for k in range(d - 1, c, -1):
        _qr_right(cores, k)
    for k in range(c, 0, -1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(r0, n * r1))
        r = _truncation_rank(s, delta, max_rank, (r0, n * r1))
        errors[k - 1] = float(np.sqrt(np.sum(s[r:] ** 2)))
        cores[k] = vt[:r].reshape(r, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], u[:, :r] * s[:r], axes=(2, 0))
    out = TtTensor._trusted(cores)
    report = RoundingReport(x.ranks, out.ranks, tuple(errors), tolerance, max_rank, norm)
    return out, report, float(np.linalg.norm(cores[0]))


def _apply_to_core(core: np.ndarray, m) -> np.ndarray:
    # mode-2 product of a single core with a (possibly sparse) p x n matrix
    r0, n, r1 = core.shape
    flat = core.transpose(1, 0, 2).reshape(n, r0 * r1)
    out = np.asarray(m @ flat)
    return out.reshape(-1, r0, r1).transpose(1, 0, 2)


def tt_mode_apply(x: TtTensor, mode: int, m) -> TtTensor:
    """``x x_mode m`` for a ``p x n_mode`` matrix (dense or scipy.sparse)."""
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode {mode} out of range for a {x.ndim}-mode tensor")
    if m.ndim != 2 or m.shape[1] != x.mode_sizes[mode]:
        raise ValueError(
            f"matrix of shape {m.shape} cannot act on mode {mode} of size {x.mode_sizes[mode]}"
        )
    cores = list(x.cores)
    cores[mode] = _apply_to_core(cores[mode], m)
    return TtTensor._trusted(cores)
