"""Kronecker-sum operator and QR preconditioner against dense Kronecker oracles."""
import numpy as np
import pytest
import scipy.sparse as sp

from ttlsqr.kron import (
    KronSumOperator,
    PreconditionedOperator,
    RankDeficientError,
    op_apply,
    op_apply_adjoint,
    op_to_dense,
    precond_build,
    precond_solve,
)
from ttlsqr.tt import TtTensor, tt_inner, tt_mode_apply, tt_rank1, tt_to_dense


def vec(a):
    return a.reshape(-1, order="F")


def random_tt(rng, sizes, ranks):
    r = [1, *ranks, 1]
    return TtTensor([rng.standard_normal((r[k], n, r[k + 1])) for k, n in enumerate(sizes)])


def random_operator(rng, ell, rows, cols):
    return KronSumOperator([[rng.standard_normal((n, m)) for n, m in zip(rows, cols)] for _ in range(ell)])


def kron_sum(terms):
    # sum_i A_d kron ... kron A_1
    out = 0
    for row in terms:
        k = np.ones((1, 1))
        for a in row:
            k = np.kron(a.toarray() if sp.issparse(a) else a, k)
        out = out + k
    return out


class TestOperator:
    def test_identity_terms(self):
        rng = np.random.default_rng(0)
        x = random_tt(rng, (3, 4, 2), (2, 2))
        l = KronSumOperator([[np.eye(3), np.eye(4), np.eye(2)]])
        np.testing.assert_allclose(tt_to_dense(op_apply(l, x)), tt_to_dense(x))
        np.testing.assert_allclose(tt_to_dense(op_apply_adjoint(l, x)), tt_to_dense(x))

    def test_apply_matches_dense_kronecker(self):
        rng = np.random.default_rng(1)
        l = random_operator(rng, 2, (4, 4, 4), (2, 2, 2))
        x = random_tt(rng, (2, 2, 2), (2, 2))
        y = op_apply(l, x)
        np.testing.assert_allclose(vec(tt_to_dense(y)), op_to_dense(l) @ vec(tt_to_dense(x)), atol=1e-12)

    def test_adjoint_matches_dense_transpose(self):
        rng = np.random.default_rng(2)
        l = random_operator(rng, 3, (4, 3, 5), (2, 3, 2))
        y = random_tt(rng, (4, 3, 5), (2, 3))
        z = op_apply_adjoint(l, y)
        np.testing.assert_allclose(vec(tt_to_dense(z)), op_to_dense(l).T @ vec(tt_to_dense(y)), atol=1e-12)

    def test_unrounded_ranks_scale_with_terms(self):
        rng = np.random.default_rng(3)
        l = random_operator(rng, 3, (4, 4, 4), (3, 3, 3))
        assert op_apply(l, random_tt(rng, (3, 3, 3), (2, 2))).ranks == (1, 6, 6, 1)

    def test_mode_ordering_first_factor_is_fastest(self):
        # X x_1 A_1 x_2 A_2 equals (A_2 kron A_1) vec(X)
        rng = np.random.default_rng(4)
        a1, a2 = rng.standard_normal((3, 2)), rng.standard_normal((4, 5))
        l = KronSumOperator([[a1, a2]])
        np.testing.assert_allclose(op_to_dense(l), np.kron(a2, a1))
        x = random_tt(rng, (2, 5), (2,))
        expected = tt_to_dense(tt_mode_apply(tt_mode_apply(x, 0, a1), 1, a2))
        np.testing.assert_allclose(tt_to_dense(op_apply(l, x)), expected, atol=1e-12)

    def test_dense_small_identity(self):
        l = KronSumOperator([[np.eye(2), np.eye(3)]])
        np.testing.assert_array_equal(op_to_dense(l), np.eye(6))

    def test_hand_computed_two_by_two(self):
        a, b = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0, 1.0], [1.0, 0.0]])
        l = KronSumOperator([[a, np.eye(2)], [np.eye(2), b]])
        expected = np.array(
            [[1, 2, 1, 0], [3, 4, 0, 1], [1, 0, 1, 2], [0, 1, 3, 4]], dtype=float
        )
        np.testing.assert_array_equal(op_to_dense(l), expected)

    def test_sparse_terms_agree_with_dense(self):
        rng = np.random.default_rng(5)
        dense = [[rng.standard_normal((5, 3)) * (rng.random((5, 3)) < 0.5) for _ in range(3)] for _ in range(2)]
        ld = KronSumOperator(dense)
        ls = KronSumOperator([[sp.csr_matrix(a) for a in row] for row in dense])
        x = random_tt(rng, (3, 3, 3), (2, 2))
        np.testing.assert_allclose(tt_to_dense(op_apply(ls, x)), tt_to_dense(op_apply(ld, x)), atol=1e-12)

    def test_compact_form_agrees(self):
        # shared identity factors make the operator-TT smaller than the term count
        rng = np.random.default_rng(6)
        t = [rng.standard_normal((4, 4)) for _ in range(3)]
        eye = np.eye(4)
        l = KronSumOperator([[eye, eye, t[0]], [eye, t[1], eye], [t[2], eye, eye]])
        assert l.compact_cores is not None
        x = random_tt(rng, (4, 4, 4), (3, 3))
        for adjoint in (False, True):
            f = l.adjoint if adjoint else l.apply
            np.testing.assert_allclose(
                tt_to_dense(f(x, compact=True)), tt_to_dense(f(x)), atol=1e-11
            )

    def test_dimension_mismatch(self):
        l = KronSumOperator([[np.ones((3, 2)), np.ones((3, 2))]])
        with pytest.raises(ValueError):
            op_apply(l, tt_rank1([np.ones(3), np.ones(2)]))

    def test_inconsistent_term_shapes(self):
        with pytest.raises(ValueError):
            KronSumOperator([[np.ones((3, 2))], [np.ones((3, 3))]])

    def test_dense_cap(self):
        l = KronSumOperator([[np.eye(40)] * 3])
        with pytest.raises(ValueError):
            op_to_dense(l)


class TestProperties:
    @pytest.mark.parametrize("seed", range(25))
    def test_adjoint_identity(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 4))
        rows = tuple(rng.integers(1, 5, size=d))
        cols = tuple(rng.integers(1, 4, size=d))
        l = random_operator(rng, int(rng.integers(1, 4)), rows, cols)
        x = random_tt(rng, cols, tuple(rng.integers(1, 3, size=d - 1)))
        y = random_tt(rng, rows, tuple(rng.integers(1, 3, size=d - 1)))
        lhs, rhs = tt_inner(op_apply(l, x), y), tt_inner(x, op_apply_adjoint(l, y))
        assert abs(lhs - rhs) <= 1e-11 * max(abs(lhs), 1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_linearity(self, seed):
        rng = np.random.default_rng(100 + seed)
        l = random_operator(rng, 2, (3, 4, 2), (2, 3, 2))
        x, y = random_tt(rng, (2, 3, 2), (2, 2)), random_tt(rng, (2, 3, 2), (1, 2))
        a = rng.standard_normal()
        from ttlsqr.tt import tt_axpy

        lhs = tt_to_dense(op_apply(l, tt_axpy(a, x, y)))
        rhs = a * tt_to_dense(op_apply(l, x)) + tt_to_dense(op_apply(l, y))
        np.testing.assert_allclose(lhs, rhs, atol=1e-11 * np.abs(rhs).max())


class TestPreconditioner:
    def test_single_matrix_matches_qr(self):
        a = np.random.default_rng(7).standard_normal((6, 3))
        p = precond_build(KronSumOperator([[a]]))
        r = np.linalg.qr(a, mode="r")
        np.testing.assert_allclose(np.abs(p.mode_factors[0]), np.abs(r), atol=1e-12)
        assert np.all(np.diag(p.mode_factors[0]) > 0)

    def test_picks_best_conditioned_term(self):
        rng = np.random.default_rng(8)
        good = np.linalg.qr(rng.standard_normal((6, 3)))[0]
        bad = rng.standard_normal((6, 3)) @ np.diag([1.0, 1e-2, 1e-3])
        l = KronSumOperator([[bad, rng.standard_normal((5, 2))], [good, rng.standard_normal((5, 2))]])
        p = precond_build(l)
        assert p.chosen_term_index[0] == 1
        k = p.condition_estimates[0]
        assert k[p.chosen_term_index[0]] == min(k)

    def test_orthonormal_columns_give_identity(self):
        q = np.linalg.qr(np.random.default_rng(9).standard_normal((5, 3)))[0]
        p = precond_build(KronSumOperator([[q, q]]))
        for r in p.mode_factors:
            np.testing.assert_allclose(r, np.eye(3), atol=1e-12)
        assert p.condition_estimates[0][0] == pytest.approx(1.0)

    def test_solve_round_trip_and_dense_oracle(self):
        rng = np.random.default_rng(10)
        l = random_operator(rng, 2, (5, 6, 4), (3, 2, 3))
        p = precond_build(l)
        x = random_tt(rng, (3, 2, 3), (2, 2))
        z = precond_solve(p, x)
        back = z
        for j, r in enumerate(p.mode_factors):
            back = tt_mode_apply(back, j, r)
        np.testing.assert_allclose(tt_to_dense(back), tt_to_dense(x), atol=1e-11)
        m = kron_sum([p.mode_factors])
        np.testing.assert_allclose(m @ vec(tt_to_dense(z)), vec(tt_to_dense(x)), atol=1e-11)
        zt = precond_solve(p, x, transpose=True)
        np.testing.assert_allclose(m.T @ vec(tt_to_dense(zt)), vec(tt_to_dense(x)), atol=1e-11)

    def test_identity_factors_leave_tensor(self):
        l = KronSumOperator([[np.eye(3), np.eye(2)]])
        x = random_tt(np.random.default_rng(11), (3, 2), (2,))
        np.testing.assert_allclose(tt_to_dense(precond_solve(precond_build(l), x)), tt_to_dense(x))

    def test_rank_deficient_reports_mode_and_term(self):
        a = np.ones((4, 2))
        with pytest.raises(RankDeficientError) as err:
            precond_build(KronSumOperator([[np.eye(3), np.eye(4)[:, :2]], [np.eye(3), a]]))
        assert err.value.mode == 1 and err.value.term == 1

    def test_single_term_preconditioned_matrix_is_orthonormal(self):
        rng = np.random.default_rng(12)
        terms = [[rng.standard_normal((5, 2)), rng.standard_normal((4, 3))]]
        l = KronSumOperator(terms)
        p = precond_build(l)
        m = kron_sum([p.mode_factors])
        a = op_to_dense(l)
        ap = a @ np.linalg.inv(m)
        np.testing.assert_allclose(ap.T @ ap, np.eye(6), atol=1e-11)
        assert np.linalg.cond(ap) <= np.linalg.cond(a) * (1 + 1e-8)

    def test_preconditioned_operator_adjoint(self):
        rng = np.random.default_rng(13)
        l = random_operator(rng, 2, (5, 4), (3, 2))
        op = PreconditionedOperator(l, precond_build(l))
        x, y = random_tt(rng, (3, 2), (2,)), random_tt(rng, (5, 4), (2,))
        assert tt_inner(op.apply(x), y) == pytest.approx(tt_inner(x, op.adjoint(y)), rel=1e-11)
