"""
How the three energy terms trade off
====================================

Energy = robustness + alpha * fidelity + beta * sparsity. Here we sweep a
single retention fraction applied to every bin except the boundary bin and
watch each term move.
"""

from protosparse import (
    BlobSpec,
    EnergyEvaluator,
    EnergyWeights,
    PerturbationConfig,
    build_histogram,
    gen_blobs,
    rank_scores,
)

db = gen_blobs(BlobSpec(((0.0, 0.0), (3.0, 1.0)), (1.0, 1.0), 150, seed=4))
k = 5
hist = build_histogram(db, rank_scores(db, k), 3)

# Robustness nudges every prototype by epsilon along each axis and counts
# label flips; fidelity counts leave-self-out misclassifications.
evaluator = EnergyEvaluator(db, hist, k, PerturbationConfig(epsilon=0.5))
weights = EnergyWeights(alpha=1.0, beta=0.05)

print(f"{'fraction':>8} {'size':>5} {'robust':>7} {'fidel':>6} {'total':>8}")
for f in (0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0):
    rep = evaluator.evaluate((f, f, 1.0), weights)
    print(f"{f:8.2f} {rep.db_size:5d} {rep.robustness:7.1f} {rep.fidelity:6.1f} {rep.total:8.2f}")

# With these overlapping classes, cutting the interior too hard opens holes
# that flip labels, so the minimum lands at a moderate fraction. A larger
# beta pushes it lower.
# Plans that round to the same counts are served from a cache:
print("classifier calls so far:", evaluator.classifier_calls)
evaluator.evaluate((0.101, 0.099, 1.0), weights)
print("after a near-duplicate plan:", evaluator.classifier_calls)
