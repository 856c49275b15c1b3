"""Allocation of queries to pre-clustered groups via a multiterm TT least squares problem.

Each of the ``d`` groups contributes one mode: its ``m_bar`` training columns
are cut into ``ell`` blocks of width ``m``, block ``i`` of group ``j`` being
``A_j^(i)``.  For a query ``f`` we solve ``min ||f kron ... kron f - L x||``
and read the group off the solution (criteria C1, C2), or skip the tensor
problem altogether (C3: plain least squares on the stacked groups, C4:
distance to a truncated-SVD subspace per group).

Groups are 0-based in the API.  Report files number them from 1.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.cluster.vq import kmeans2

from .fileio import load_matrix_market
from .kron import KronSumOperator
from .sketch import (
    SketchOptions,
    default_sketch_size,
    sketch_apply,
    sketch_build,
    sketch_operator,
    two_pass_solve,
)
from .solver import SolveOptions, tt_lsqr, vector_lsqr
from .tt import TtTensor, tt_norm, tt_rank1

__all__ = [
    "C2Model",
    "CRITERIA",
    "EvalReport",
    "GroupedCorpus",
    "build_corpus",
    "build_query_problem",
    "classify_c1",
    "classify_c2",
    "classify_c3",
    "classify_c4",
    "evaluate_harness",
    "kmeans_cluster",
    "load_matrix_market",
    "synthetic_corpus",
]

log = logging.getLogger(__name__)

CRITERIA = ("C1", "C2", "C3", "C4")

# fixed 10 iterations: the stopping tolerance is set out of reach
HARNESS_SOLVE_OPTIONS = SolveOptions(round_tol=1e-4, max_iters=10, ne_resid_tol=1e-300)


def _unit_columns(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=0)
    norms[norms == 0] = 1.0
    return a / norms


@dataclass(frozen=True)
class GroupedCorpus:
    """``groups[j]`` is the ``n x m_bar`` training matrix of group ``j``;
    ``test_queries[j]`` holds that group's held-out columns."""

    groups: tuple
    test_queries: tuple
    ell: int
    m: int

    def __post_init__(self):
        n = {g.shape[0] for g in self.groups} | {t.shape[0] for t in self.test_queries}
        if len(n) != 1:
            raise ValueError("all groups and queries must share the row dimension")
        if any(g.shape[1] != self.ell * self.m for g in self.groups):
            raise ValueError(f"every group needs exactly ell*m = {self.ell * self.m} columns")
        if len(self.test_queries) != len(self.groups):
            raise ValueError("need one query set per group")

    @property
    def d(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return self.groups[0].shape[0]

    @property
    def m_bar(self) -> int:
        return self.ell * self.m

    def block(self, j: int, i: int) -> np.ndarray:
        return self.groups[j][:, i * self.m : (i + 1) * self.m]


def kmeans_cluster(x, k: int, seed: int = 0) -> np.ndarray:
    """Cluster the columns of ``x`` into ``k`` groups (Lloyd, k-means++ start).

    Runs 200 sweeps; once assignments settle further sweeps are no-ops.
    """
    x = x.toarray() if sp.issparse(x) else np.asarray(x, dtype=float)
    if not 1 <= k <= x.shape[1]:
        raise ValueError(f"k must lie in [1, {x.shape[1]}], got {k}")
    with warnings.catch_warnings():
        # an emptied cluster keeps its previous centroid
        warnings.simplefilter("ignore")
        _, labels = kmeans2(x.T, k, iter=200, minit="++", seed=np.random.default_rng(seed))
    return labels


def build_corpus(
    x, labels, m_bar: int, ell: int, test_count: int = 20, d: int = 3
) -> GroupedCorpus:
    """Take the ``d`` largest clusters; per cluster the first ``m_bar`` columns
    train and the next ``test_count`` are queries.  Columns are unit-normalized."""
    if m_bar % ell:
        raise ValueError(f"m_bar={m_bar} is not divisible by ell={ell}")
    x = x.tocsc() if sp.issparse(x) else np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    ids, counts = np.unique(labels, return_counts=True)
    order = np.argsort(-counts, kind="stable")[:d]
    if len(order) < d:
        raise ValueError(f"only {len(order)} clusters, need {d}")
    groups, tests = [], []
    for c in ids[order]:
        cols = np.flatnonzero(labels == c)
        if cols.size < m_bar + test_count:
            raise ValueError(
                f"cluster {c} has {cols.size} columns, need m_bar + test_count = {m_bar + test_count}"
            )
        sub = x[:, cols[: m_bar + test_count]]
        sub = _unit_columns(sub.toarray() if sp.issparse(sub) else np.array(sub))
        groups.append(sub[:, :m_bar])
        tests.append(sub[:, m_bar:])
    return GroupedCorpus(tuple(groups), tuple(tests), ell, m_bar // ell)


def synthetic_corpus(
    n: int,
    d: int = 3,
    m_bar: int = 36,
    ell: int = 6,
    test_count: int = 20,
    leakage: float = 0.0,
    noise: float = 0.0,
    seed: int = 0,
    topics: int = 5,
    background: float = 0.3,
) -> GroupedCorpus:
    """Separable corpus with known labels.

    Every column mixes a background direction shared by all groups (weight
    ``background``) with a nonnegative combination of its group's ``topics``
    atoms.  Atoms of different groups live on disjoint row sets, so the topic
    subspaces are mutually orthogonal.  ``leakage`` adds that fraction of
    other groups' topics, ``noise`` a Gaussian perturbation of that relative
    size.  Without a shared component the tensor right-hand side would be
    orthogonal to the operator's range and C1/C2 would be undefined.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    if n < d * topics:
        raise ValueError(f"need n >= d*topics = {d * topics}")
    bg = rng.uniform(0.5, 1.5, size=n)
    bg /= np.linalg.norm(bg)
    support = np.array_split(rng.permutation(n), d)
    atoms = []
    for rows in support:
        a = np.zeros((n, topics))
        a[rows] = rng.uniform(0.0, 1.0, size=(rows.size, topics)) ** 2
        atoms.append(_unit_columns(a))

    def columns(j, count):
        own = atoms[j] @ rng.uniform(0.2, 1.0, size=(topics, count))
        own = _unit_columns(own)
        cols = background * bg[:, None] + (1 - background) * own
        if leakage:
            others = [atoms[k] for k in range(d) if k != j]
            if others:
                leak = np.hstack(others) @ rng.uniform(0.0, 1.0, size=(topics * len(others), count))
                cols = cols + leakage * _unit_columns(leak)
        if noise:
            g = rng.standard_normal((n, count))
            cols = cols + noise * _unit_columns(g) * np.linalg.norm(cols, axis=0)
        return _unit_columns(cols)

    groups = tuple(columns(j, m_bar) for j in range(d))
    tests = tuple(columns(j, test_count) for j in range(d))
    return GroupedCorpus(groups, tests, ell, m_bar // ell)


def _query_vector(f, n: int) -> np.ndarray:
    f = np.asarray(f.toarray() if sp.issparse(f) else f, dtype=float).ravel()
    if f.size != n:
        raise ValueError(f"query has length {f.size}, corpus rows are {n}")
    nf = np.linalg.norm(f)
    return f / nf if nf > 0 else f


def _operator(corpus: GroupedCorpus) -> KronSumOperator:
    return KronSumOperator([[corpus.block(j, i) for j in range(corpus.d)] for i in range(corpus.ell)])


def build_query_problem(corpus: GroupedCorpus, f) -> tuple[KronSumOperator, TtTensor]:
    """Operator with ``terms[i][j] = A_j^(i)`` and the rank-1 right-hand side
    ``f kron ... kron f`` of the unit-normalized query."""
    f = _query_vector(f, corpus.n)
    return _operator(corpus), tt_rank1([f] * corpus.d)


def _argbest(scores: np.ndarray, largest: bool = True) -> int:
    # first index on ties
    return int(np.argmax(scores) if largest else np.argmin(scores))


def _contract(x: TtTensor, vecs) -> float:
    v = np.ones(1)
    for core, w in zip(x.cores, vecs):
        v = v @ np.tensordot(core, w, axes=(1, 0))
    return float(v[0])


def classify_c1(l: KronSumOperator, x: TtTensor, f, return_scores: bool = False):
    """``argmax_j |(1 kron .. f (slot j) .. kron 1)^T L x|``.

    Contracting ``L x`` with a rank-1 vector equals contracting ``x`` with the
    transposed mode matrices applied to that vector, so ``L x`` is never formed.
    """
    n = l.row_sizes
    f = np.asarray(f, dtype=float).ravel()
    scores = np.zeros(l.num_modes)
    for j in range(l.num_modes):
        w = [f if k == j else np.ones(n[k]) for k in range(l.num_modes)]
        total = 0.0
        for row in l.terms:
            total += _contract(x, [a.T @ wk for a, wk in zip(row, w)])
        scores[j] = abs(total)
    j = _argbest(scores)
    return (j, scores) if return_scores else j


@dataclass(frozen=True)
class C2Model:
    reduced_solution: TtTensor
    mode_bases: tuple


def _mode_unfolding(core: np.ndarray) -> np.ndarray:
    r0, n, r1 = core.shape
    return core.transpose(1, 0, 2).reshape(n, r0 * r1)


def classify_c2(
    l: KronSumOperator, x: TtTensor, f, orthonormalize: bool = True, return_scores: bool = False
):
    """``argmax_j ||f^T U^(j)||`` with ``U^(j)`` from the cores of ``L(x_tilde)``.

    ``x_tilde`` is rank one, built from the leading left singular vector of
    each core's mode unfolding.  ``L(x_tilde)`` (unrounded) has TT-ranks ``ell``
    and its core ``j`` spans ``{A_j^(i) u_j}``; with ``orthonormalize`` that
    span is given an orthonormal basis, otherwise the raw unfolding is used.

    Returns ``(group, C2Model)`` or, with ``return_scores``, ``(group, C2Model, scores)``.
    """
    if tt_norm(x) == 0.0:
        raise ValueError("criterion 2 is undefined for a zero solution")
    f = np.asarray(f, dtype=float).ravel()
    lead = []
    for core in x.cores:
        u, _, _ = np.linalg.svd(_mode_unfolding(core), full_matrices=False)
        lead.append(u[:, 0])
    xt = tt_rank1(lead)
    y = l.apply(xt)
    bases = []
    for core in y.cores:
        g = _mode_unfolding(core)
        bases.append(scipy.linalg.orth(g) if orthonormalize else g)
    scores = np.array([np.linalg.norm(f @ u) for u in bases])
    j = _argbest(scores)
    model = C2Model(xt, tuple(bases))
    return (j, model, scores) if return_scores else (j, model)


def classify_c3(
    corpus: GroupedCorpus, f, tol: float = 1e-8, max_iters: Optional[int] = None, return_scores: bool = False
):
    """``argmax_j ||w_j||`` for ``w = argmin ||f - [A_1 ... A_d] w||`` (vector LSQR)."""
    f = _query_vector(f, corpus.n)
    a = np.hstack(corpus.groups)
    if np.linalg.norm(a.T @ f) <= 1e-12 * np.linalg.norm(a) * np.linalg.norm(f):
        # f is orthogonal to every training column up to roundoff: w = 0
        w, iters = np.zeros(a.shape[1]), 0
    else:
        w, iters = vector_lsqr(a, f, tol=tol, max_iters=max_iters)
    scores = np.array([np.linalg.norm(b) for b in np.split(w, corpus.d)])
    j = _argbest(scores)
    return (j, scores, iters) if return_scores else j


def _c4_bases(corpus: GroupedCorpus, rank: int) -> list:
    if rank > corpus.m_bar:
        raise ValueError(f"rank {rank} exceeds m_bar={corpus.m_bar}")
    bases = []
    for g in corpus.groups:
        u, sv, _ = np.linalg.svd(g, full_matrices=False)
        # singular vectors of numerically zero singular values are arbitrary: drop them
        keep = int(np.count_nonzero(sv > sv[0] * max(g.shape) * np.finfo(float).eps)) if sv.size else 0
        bases.append(u[:, : min(rank, keep)])
    return bases


def classify_c4(corpus: GroupedCorpus, f, rank: int = 10, return_scores: bool = False, bases=None):
    """``argmin_j ||f - U_j U_j^T f||`` with ``U_j`` the top ``rank`` left singular vectors of group ``j``."""
    f = _query_vector(f, corpus.n)
    bases = bases if bases is not None else _c4_bases(corpus, rank)
    scores = np.array([np.linalg.norm(f - u @ (u.T @ f)) for u in bases])
    j = _argbest(scores, largest=False)
    return (j, scores) if return_scores else j


@dataclass
class EvalReport:
    """Success tallies per group and criterion, plus one record per query decision."""

    criteria: tuple
    d: int
    test_count: int
    decisions: list = field(default_factory=list)

    def _select(self, group: Optional[int], criterion: str) -> list:
        return [
            r for r in self.decisions
            if r["criterion"] == criterion and (group is None or r["true_group"] == group)
        ]

    def percent(self, group: Optional[int], criterion: str) -> float:
        rows = self._select(group, criterion)
        if not rows:
            return float("nan")
        return 100.0 * sum(r["decision"] == r["true_group"] for r in rows) / len(rows)

    def avg_iters(self, group: Optional[int], criterion: str) -> float:
        return float(np.mean([r["iters"] for r in self._select(group, criterion)]))

    def avg_seconds(self, group: Optional[int], criterion: str) -> float:
        return float(np.mean([r["seconds"] for r in self._select(group, criterion)]))

    def table(self) -> list:
        return [
            {
                "group": j + 1,
                "criterion": c,
                "percent": self.percent(j, c),
                "avg_iters": self.avg_iters(j, c),
                "avg_seconds": self.avg_seconds(j, c),
            }
            for j in range(self.d)
            for c in self.criteria
        ]

    def write_csv(self, path) -> None:
        _write_rows(path, ("group", "criterion", "percent", "avg_iters", "avg_seconds"), self.table())

    def write_decisions_csv(self, path) -> None:
        rows = [
            dict(r, true_group=r["true_group"] + 1, decision=r["decision"] + 1, degenerate=int(r["degenerate"]))
            for r in self.decisions
        ]
        _write_rows(
            path,
            ("query", "true_group", "criterion", "decision", "degenerate", "iters", "seconds"),
            rows,
        )


def _write_rows(path, header, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    os.replace(tmp, path)


def _degenerate(scores: np.ndarray) -> bool:
    return bool(np.all(scores == scores[0]))


def evaluate_harness(
    corpus: GroupedCorpus,
    criteria: Sequence[str] = CRITERIA,
    solve_opts: Optional[SolveOptions] = None,
    sketch_opts: Optional[SketchOptions] = None,
    c3_tol: float = 1e-8,
    c4_rank: int = 10,
    c2_orthonormalize: bool = True,
) -> EvalReport:
    """Classify every test query with each requested criterion.

    C1 and C2 share one TT solve per query (by default exactly 10 iterations at
    rounding tolerance 1e-4).  With ``sketch_opts`` that solve runs on the
    sketched problem for ``sketch_iters`` iterations, followed by
    ``refine_iters`` full iterations when ``two_pass`` is set.  The operator is
    sketched once; only the query is sketched per solve.  Recorded seconds for
    C1/C2 include the solve.
    """
    criteria = tuple(criteria)
    unknown = set(criteria) - set(CRITERIA)
    if unknown:
        raise ValueError(f"unknown criteria {sorted(unknown)}")
    opts = solve_opts or HARNESS_SOLVE_OPTIONS
    l = _operator(corpus)
    report = EvalReport(criteria, corpus.d, corpus.test_queries[0].shape[1])
    need_tt = any(c in criteria for c in ("C1", "C2"))
    bases = _c4_bases(corpus, c4_rank) if "C4" in criteria else None
    sk = None
    if need_tt and sketch_opts is not None:
        s = min(sketch_opts.size or default_sketch_size(l), corpus.n)
        sk = sketch_build(corpus.n, s, sketch_opts.seed)
        l_hat, _ = sketch_operator(sk, l, [np.zeros(corpus.n)] * corpus.d)

    q = 0
    for j, tests in enumerate(corpus.test_queries):
        for k in range(tests.shape[1]):
            f = _query_vector(tests[:, k], corpus.n)
            rec = {"query": q, "true_group": j}
            if need_tt:
                t0 = time.perf_counter()
                rhs = tt_rank1([f] * corpus.d)
                if sk is None:
                    x, trace, _ = tt_lsqr(l, rhs, opts)
                    iters = len(trace)
                elif sketch_opts.two_pass:
                    x, traces = two_pass_solve(
                        l, rhs, opts, sketch_opts.sketch_iters, sketch_opts.refine_iters,
                        sketch_opts.seed, sk.output_dim,
                    )
                    iters = sum(len(t) for t in traces)
                else:
                    f_hat = tt_rank1([sketch_apply(sk, f)] * corpus.d)
                    x, trace, _ = tt_lsqr(l_hat, f_hat, dataclasses.replace(opts, max_iters=sketch_opts.sketch_iters))
                    iters = len(trace)
                solve_seconds = time.perf_counter() - t0
                for c in ("C1", "C2"):
                    if c not in criteria:
                        continue
                    t1 = time.perf_counter()
                    if tt_norm(x) == 0.0:
                        decision, degen = 0, True
                    elif c == "C1":
                        decision, scores = classify_c1(l, x, f, return_scores=True)
                        degen = _degenerate(scores)
                    else:
                        decision, _, scores = classify_c2(l, x, f, c2_orthonormalize, return_scores=True)
                        degen = _degenerate(scores)
                    report.decisions.append(
                        dict(rec, criterion=c, decision=decision, degenerate=degen, iters=iters,
                             seconds=solve_seconds + time.perf_counter() - t1)
                    )
            if "C3" in criteria:
                t1 = time.perf_counter()
                decision, scores, iters = classify_c3(corpus, f, tol=c3_tol, return_scores=True)
                report.decisions.append(
                    dict(rec, criterion="C3", decision=decision, degenerate=_degenerate(scores),
                         iters=iters, seconds=time.perf_counter() - t1)
                )
            if "C4" in criteria:
                t1 = time.perf_counter()
                decision, scores = classify_c4(corpus, f, c4_rank, return_scores=True, bases=bases)
                report.decisions.append(
                    dict(rec, criterion="C4", decision=decision, degenerate=_degenerate(scores),
                         iters=0, seconds=time.perf_counter() - t1)
                )
            q += 1
    report.decisions.sort(key=lambda r: (CRITERIA.index(r["criterion"]), r["query"]))
    return report
