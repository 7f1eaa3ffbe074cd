"""
Shrinking a ray database with the two-level search
==================================================

Binary "rays" of length 32: class 0 is lit up to index 12, class 1 up to
index 20, with 5% of bits flipped. The inner search picks per-bin retention
fractions for fixed weights; the outer search picks the weights by
validation AUC.
"""

import time

from protosparse import (
    OptimizerConfig,
    OuterConfig,
    PerturbationConfig,
    RaySpec,
    build_histogram,
    evaluate_classifier,
    gen_rays,
    optimize_outer,
    rank_scores,
    reduction_report,
    sparsify,
    split,
)

db = gen_rays(RaySpec(length=32, boundaries=(12, 20), flip=0.05, samples_per_class=600, seed=1))
train, val, test = split(db, (0.6, 0.2, 0.2), seed=2)
k = 10
hist = build_histogram(train, rank_scores(train, k), 5)

# Rays are far apart, so almost every score is 0 and the upper bins are
# nearly empty. Empty bins are skipped by the search.
print("bin sizes per class:\n", hist.bin_sizes())

t = time.monotonic()
res = optimize_outer(train, val, hist, k, PerturbationConfig(1.0),
                     OuterConfig(budget=5), OptimizerConfig(max_evaluations=60))
print(f"outer search took {time.monotonic() - t:.1f}s over {len(res.cells)} cells")
for cell in res.cells:
    print(f"  alpha={cell.alpha:7.3f} beta={cell.beta:7.4f} size={cell.db_size:4d} auc={cell.metric:.4f}")
print("chosen:", res.alpha, res.beta, [round(f, 4) for f in res.plan])

s = sparsify(train, hist, res.plan)
print(reduction_report(s).format())
full = evaluate_classifier(train, test, k)
small = evaluate_classifier(s, test, k)
print(f"test accuracy: full {full.accuracy:.3f} ({len(train)} prototypes), "
      f"sparse {small.accuracy:.3f} ({len(s)} prototypes)")
