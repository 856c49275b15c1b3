"""Assign held-out documents to groups, with and without sketching the operator."""
import time

from ttlsqr import SketchOptions, evaluate_harness, synthetic_corpus

# three groups of 36 training columns in 6 blocks, 5 queries per group
corpus = synthetic_corpus(2048, d=3, m_bar=36, ell=6, test_count=5, leakage=0.1, noise=0.05, seed=1)

for label, sketch in (("full", None), ("sketched", SketchOptions(seed=0)),
                      ("two-pass", SketchOptions(seed=0, two_pass=True))):
    t0 = time.perf_counter()
    rep = evaluate_harness(corpus, ("C1", "C2"), sketch_opts=sketch)
    print(f"{label:9s} C1 {rep.percent(None, 'C1'):5.1f}%  C2 {rep.percent(None, 'C2'):5.1f}%  "
          f"{rep.avg_seconds(None, 'C2'):.2f} s/query  ({time.perf_counter() - t0:.1f} s total)")

# criteria that do not need the tensor solve
rep = evaluate_harness(corpus, ("C3", "C4"))
for row in rep.table():
    print(row)
