"""Subsampled Hadamard sketches against dense transforms and least-squares oracles."""
import numpy as np
import pytest
import scipy.linalg

from ttlsqr.kron import KronSumOperator, op_to_dense
from ttlsqr.sketch import (
    default_sketch_size,
    fwht,
    sketch_apply,
    sketch_build,
    sketch_operator,
    two_pass_solve,
)
from ttlsqr.solver import SolveOptions, residual_norms, tt_lsqr
from ttlsqr.tt import TtTensor, tt_rank1, tt_to_dense


def vec(a):
    return a.reshape(-1, order="F")


def dense_sketch(sk):
    # explicit S = scale * J H D restricted to the first n columns
    h = scipy.linalg.hadamard(sk.padded_dim) / np.sqrt(sk.padded_dim)
    s = sk.scale * (h * sk.sign_diagonal)[sk.sampled_rows]
    return s[:, : sk.input_dim]


def small_instance(seed=0, n=16, m=2, ell=2, d=2):
    rng = np.random.default_rng(seed)
    l = KronSumOperator([[rng.standard_normal((n, m)) for _ in range(d)] for _ in range(ell)])
    factors = [rng.standard_normal(n) for _ in range(d)]
    return l, factors


def lstsq_residual(a, b):
    x = np.linalg.lstsq(a, b, rcond=None)[0]
    return x, np.linalg.norm(b - a @ x)


class TestTransform:
    @pytest.mark.parametrize("n", [1, 2, 8, 32])
    def test_fwht_matches_hadamard(self, n):
        a = np.random.default_rng(n).standard_normal((n, 3))
        np.testing.assert_allclose(fwht(a), scipy.linalg.hadamard(n) @ a / np.sqrt(n), atol=1e-12)

    def test_fwht_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            fwht(np.ones(6))


class TestBuild:
    def test_padding(self):
        assert sketch_build(5, 3).padded_dim == 8
        assert sketch_build(8, 3).padded_dim == 8

    def test_determinism(self):
        a, b = sketch_build(100, 20, seed=7), sketch_build(100, 20, seed=7)
        np.testing.assert_array_equal(a.sign_diagonal, b.sign_diagonal)
        np.testing.assert_array_equal(a.sampled_rows, b.sampled_rows)
        c = sketch_build(100, 20, seed=8)
        assert not np.array_equal(a.sign_diagonal, c.sign_diagonal)

    def test_invariants(self):
        sk = sketch_build(37, 11, seed=3)
        assert len(np.unique(sk.sampled_rows)) == 11
        assert np.all((sk.sampled_rows >= 0) & (sk.sampled_rows < sk.padded_dim))
        assert set(np.unique(sk.sign_diagonal)) <= {-1.0, 1.0}

    @pytest.mark.parametrize("n,s", [(5, 6), (5, 0), (0, 1)])
    def test_bad_sizes(self, n, s):
        with pytest.raises(ValueError):
            sketch_build(n, s)

    def test_full_sampling_is_orthogonal(self):
        sk = sketch_build(8, 8, seed=1)
        assert sk.scale == 1.0
        a = np.random.default_rng(2).standard_normal(8)
        assert np.linalg.norm(sketch_apply(sk, a)) == pytest.approx(np.linalg.norm(a), rel=1e-13)


class TestApply:
    def test_matches_explicit_matrix(self):
        sk = sketch_build(13, 6, seed=4)
        a = np.random.default_rng(5).standard_normal((13, 4))
        np.testing.assert_allclose(sketch_apply(sk, a), dense_sketch(sk) @ a, atol=1e-12)

    def test_zero_and_shape(self):
        sk = sketch_build(10, 4)
        out = sketch_apply(sk, np.zeros((10, 3)))
        assert out.shape == (4, 3) and np.all(out == 0)
        assert sketch_apply(sk, np.zeros(10)).shape == (4,)

    def test_linearity(self):
        sk = sketch_build(20, 9, seed=6)
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
        np.testing.assert_allclose(sketch_apply(sk, a + b), sketch_apply(sk, a) + sketch_apply(sk, b), atol=1e-12)

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            sketch_apply(sketch_build(10, 4), np.ones(9))

    def test_norm_preserved_in_expectation(self):
        n = 64
        a = np.random.default_rng(8).standard_normal(n)
        a /= np.linalg.norm(a)
        ratios = [np.linalg.norm(sketch_apply(sketch_build(n, n // 2, seed=t), a)) ** 2 for t in range(200)]
        assert 0.9 <= np.mean(ratios) <= 1.1


class TestOperator:
    def test_shapes_for_default_size(self):
        rng = np.random.default_rng(9)
        l = KronSumOperator([[rng.standard_normal((784, 6)) for _ in range(3)] for _ in range(6)])
        s = default_sketch_size(l)
        assert s == 2 * 3 * 36
        l_hat, f_hat = sketch_operator(sketch_build(784, s), l, [np.ones(784)] * 3)
        assert all(a.shape == (216, 6) for row in l_hat.terms for a in row)
        assert f_hat.mode_sizes == (216, 216, 216) and f_hat.ranks == (1, 1, 1, 1)

    def test_factors_match_dense_kronecker_sketch(self):
        l, factors = small_instance(10, n=6, m=2, d=2)
        sk = sketch_build(6, 4, seed=11)
        l_hat, f_hat = sketch_operator(sk, l, factors)
        s = dense_sketch(sk)
        s2 = np.kron(s, s)
        np.testing.assert_allclose(op_to_dense(l_hat), s2 @ op_to_dense(l), atol=1e-12)
        np.testing.assert_allclose(vec(tt_to_dense(f_hat)), s2 @ np.kron(factors[1], factors[0]), atol=1e-12)

    def test_tt_rhs_equals_factor_form(self):
        l, factors = small_instance(12, n=6, m=2, d=3)
        sk = sketch_build(6, 5, seed=13)
        _, a = sketch_operator(sk, l, factors)
        _, b = sketch_operator(sk, l, tt_rank1(factors))
        np.testing.assert_allclose(tt_to_dense(a), tt_to_dense(b), atol=1e-12)

    def test_general_tt_rhs(self):
        rng = np.random.default_rng(14)
        l, _ = small_instance(14, n=6, m=2, d=2)
        f = TtTensor([rng.standard_normal((1, 6, 2)), rng.standard_normal((2, 6, 1))])
        sk = sketch_build(6, 4, seed=15)
        _, f_hat = sketch_operator(sk, l, f)
        s = dense_sketch(sk)
        np.testing.assert_allclose(vec(tt_to_dense(f_hat)), np.kron(s, s) @ vec(tt_to_dense(f)), atol=1e-12)

    def test_full_sampling_preserves_residual(self):
        l, factors = small_instance(16, n=8, m=2, d=2)
        l_hat, f_hat = sketch_operator(sketch_build(8, 8, seed=17), l, factors)
        b = np.kron(factors[1], factors[0])
        _, r = lstsq_residual(op_to_dense(l), b)
        _, r_hat = lstsq_residual(op_to_dense(l_hat), vec(tt_to_dense(f_hat)))
        assert r_hat == pytest.approx(r, rel=1e-10)

    def test_sketched_solution_quality(self):
        l, factors = small_instance(18, n=64, m=2, d=2)
        a, b = op_to_dense(l), np.kron(factors[1], factors[0])
        _, best = lstsq_residual(a, b)
        l_hat, f_hat = sketch_operator(sketch_build(64, default_sketch_size(l), seed=19), l, factors)
        x_hat, _ = lstsq_residual(op_to_dense(l_hat), vec(tt_to_dense(f_hat)))
        assert np.linalg.norm(b - a @ x_hat) / best <= 1.5

    def test_unequal_rows(self):
        l = KronSumOperator([[np.ones((4, 2)), np.ones((5, 2))]])
        with pytest.raises(ValueError):
            sketch_operator(sketch_build(4, 2), l, [np.ones(4), np.ones(5)])

    def test_sketcher_dimension_mismatch(self):
        l, factors = small_instance(20, n=6)
        with pytest.raises(ValueError):
            sketch_operator(sketch_build(7, 3), l, factors)

    def test_determinism_bitwise(self):
        l, factors = small_instance(21, n=30, m=3, d=3)
        a, _ = sketch_operator(sketch_build(30, 12, seed=5), l, factors)
        b, _ = sketch_operator(sketch_build(30, 12, seed=5), l, factors)
        for ra, rb in zip(a.terms, b.terms):
            for x, y in zip(ra, rb):
                np.testing.assert_array_equal(x, y)


class TestTwoPass:
    OPTS = SolveOptions(round_tol=1e-10, ne_resid_tol=1e-12)

    def test_refine_zero_is_sketched_solution(self):
        l, factors = small_instance(22, n=32, m=2, d=2)
        f = tt_rank1(factors)
        x, traces = two_pass_solve(l, f, self.OPTS, sketch_iters=10, refine_iters=0, seed=3)
        l_hat, f_hat = sketch_operator(sketch_build(32, default_sketch_size(l), seed=3), l, factors)
        x0, _, _ = tt_lsqr(l_hat, f_hat, SolveOptions(round_tol=1e-10, ne_resid_tol=1e-12, max_iters=10))
        np.testing.assert_array_equal(tt_to_dense(x), tt_to_dense(x0))
        assert len(traces[1]) == 0 and len(traces[0]) >= 1

    @pytest.mark.parametrize("seed", range(5))
    def test_refinement_does_not_increase_residual(self, seed):
        l, factors = small_instance(30 + seed, n=32, m=3, d=2)
        f = tt_rank1(factors)
        x0, _ = two_pass_solve(l, f, self.OPTS, sketch_iters=30, refine_iters=0, seed=seed)
        x, _ = two_pass_solve(l, f, self.OPTS, sketch_iters=30, refine_iters=2, seed=seed)
        r0, _ = residual_norms(l, f, x0)
        r, _ = residual_norms(l, f, x)
        assert r <= r0 + 1e-10

    def test_defaults(self):
        import inspect

        sig = inspect.signature(two_pass_solve)
        assert sig.parameters["sketch_iters"].default == 30
        assert sig.parameters["refine_iters"].default == 2
