"""
Ranking prototypes and binning them per class
=============================================

Two overlapping Gaussian classes. Prototypes deep inside their own class get
a rank score of 0; those surrounded by the other class score high. Each
class is then cut into bins at percentiles of its own scores.
"""

import numpy as np

from protosparse import BlobSpec, build_histogram, gen_blobs, rank_all, sparsify

db = gen_blobs(BlobSpec(means=((0.0, 0.0), (2.5, 0.0)), stds=(1.0, 1.0), samples_per_class=200, seed=0))
print(db)

# Score = (#other-class) / max(#same-class, 1) among the 7 nearest neighbours.
scores = rank_all(db, k=7)
values = np.array([s.score for s in scores])
print("score range:", values.min(), "to", values.max())
print("fraction with score 0:", np.mean(values == 0))

# Four bins per class. Many prototypes share score 0, which is why the
# lowest edges often coincide.
hist = build_histogram(db, scores, num_bins=4)
for c, edges, sizes in zip(hist.classes, hist.edges, hist.bin_sizes()):
    print(f"class {c}: edges={np.round(edges, 3).tolist()} sizes={sizes.tolist()}")

# Keep the whole top bin and a tenth of the others. Within a bin the
# highest-scoring prototypes go first.
s = sparsify(db, hist, (0.1, 0.1, 0.1, 1.0))
print(f"kept {len(s)} of {len(db)} prototypes")
print("retained per (class, bin):")
print(s.retained)
