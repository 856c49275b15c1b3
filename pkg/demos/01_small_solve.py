"""A small multiterm problem solved in TT format and checked against a dense solve."""
import numpy as np

from ttlsqr import KronSumOperator, SolveOptions, op_to_dense, tt_lsqr, tt_rank1, tt_to_dense

rng = np.random.default_rng(0)

# two terms, three modes: L = A3 kron A2 kron A1 + B3 kron B2 kron B1, each factor 6 x 3
l = KronSumOperator([[rng.standard_normal((6, 3)) for _ in range(3)] for _ in range(2)])
f = tt_rank1([rng.standard_normal(6) for _ in range(3)])

# with a tiny rounding tolerance the iterates are those of plain LSQR
res = tt_lsqr(l, f, SolveOptions(round_tol=1e-12, max_iters=100, ne_resid_tol=1e-10))
print("status", res.status.value, "after", res.iterations, "iterations")
print("solution ranks", res.x.ranks)

a = op_to_dense(l)
b = tt_to_dense(f).reshape(-1, order="F")
x_ref = np.linalg.lstsq(a, b, rcond=None)[0]
x = tt_to_dense(res.x).reshape(-1, order="F")
print("relative distance to dense least squares:", np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref))

# the trace records estimated residuals per iteration
for rec in res.trace.records[::5]:
    print(f"  it {rec.iter:3d}  ||r||/||f|| ~ {rec.resid_est:.3e}  ||L^T r|| ~ {rec.ne_resid_est:.3e}  rank {rec.max_rank}")
