"""Convection-diffusion on the unit cube: how far truncated LSQR gets for each rounding tolerance.

The recurrence estimate keeps falling, while the explicitly computed residual
levels off.  Coarser rounding tolerances level off earlier and higher.
Run with a smaller grid (first argument) for a quick look; n = 50 takes minutes.
"""
import sys

import numpy as np

from ttlsqr import build_convection_problem, run_convergence_study

n = int(sys.argv[1]) if len(sys.argv) > 1 else 20
problem = build_convection_problem(n)
print(f"n = {n}: {n**3} unknowns, operator terms {problem.operator.num_terms}")

tols = [1e-4, 1e-6, 1e-8]
traces = run_convergence_study(problem, tols, [n], max_iters=3000, true_residual_every=25, stall_window=200)
for tol, tr in zip(tols, traces):
    true = tr.column("resid_true")
    print(f"tol {tol:g}: {len(tr)} iterations, "
          f"estimate {tr[-1].resid_est:.2e}, explicit {np.nanmin(true):.2e}, max rank {int(tr.column('max_rank').max())}")
