"""Boundary-proximity scores and per-class percentile histograms."""
import math
from dataclasses import dataclass

import numpy as np

from ._knn import drop_self
from .errors import ContractViolation, InsufficientDataError


@dataclass(frozen=True)
class RankScore:
    prototype_id: int
    score: float


def neighbor_class_counts(db, k, n_jobs=1):
    """For every prototype, (#other-class, #same-class) among its k nearest
    neighbours, itself excluded."""
    index = db.index(n_jobs=n_jobs)
    pos, dist = index.query(db.features, k + 1)
    pos, _ = drop_self(pos, dist, db.ids, db.ids, k)
    valid = pos >= 0
    same = (db.classes[np.maximum(pos, 0)] == db.classes[:, None]) & valid
    n_same = same.sum(axis=1)
    return valid.sum(axis=1) - n_same, n_same


def rank_scores(db, k, n_jobs=1):
    """Score array aligned with ``db`` rows: other / max(same, 1)."""
    if k < 1:
        raise ContractViolation("K must be a positive integer")
    if len(db) < 2:
        raise InsufficientDataError("ranking needs at least two prototypes")
    other, same = neighbor_class_counts(db, k, n_jobs)
    return other / np.maximum(same, 1)


def rank_all(db, k, n_jobs=1):
    """Rank every prototype by how many of its k nearest neighbours
    (self excluded) belong to another class, relative to its own class."""
    scores = rank_scores(db, k, n_jobs)
    return [RankScore(int(i), float(s)) for i, s in zip(db.ids, scores)]


def percentile(values, p):
    """Nearest-rank percentile: the ceil(p*n/100)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if len(values) == 0:
        raise ContractViolation("percentile of an empty list")
    if not 0 <= p <= 100:
        raise ContractViolation("p must lie in [0, 100]")
    rank = math.ceil(p * len(values) / 100)
    return float(values[max(rank, 1) - 1])


@dataclass(frozen=True, eq=False)
class RankHistogram:
    """Fixed per-class bin edges over rank scores and per-bin membership.

    ``edges[c]`` has ``num_bins + 1`` entries for class ``classes[c]``;
    ``members[c][b]`` lists ids sorted by descending score, then ascending id.
    """

    num_bins: int
    classes: tuple
    edges: tuple
    members: tuple
    scores: dict

    def __eq__(self, other):
        if not isinstance(other, RankHistogram):
            return NotImplemented
        return (self.num_bins == other.num_bins and self.classes == other.classes
                and self.edges == other.edges and self.scores == other.scores
                and all(np.array_equal(a, b) for x, y in zip(self.members, other.members)
                        for a, b in zip(x, y)))

    __hash__ = None

    def bin_sizes(self):
        return np.array([[len(m) for m in per_class] for per_class in self.members], dtype=np.int64)

    def bin_of(self):
        """Mapping id -> (class_code, bin index)."""
        out = {}
        for c, per_class in zip(self.classes, self.members):
            for b, ids in enumerate(per_class):
                for i in ids.tolist():
                    out[i] = (c, b)
        return out


def _score_array(db, scores):
    if isinstance(scores, np.ndarray):
        arr = np.asarray(scores, dtype=np.float64)
        if arr.shape != (len(db),):
            raise ContractViolation("need one score per prototype")
        return arr
    lookup = {s.prototype_id: s.score for s in scores}
    try:
        return np.array([lookup[int(i)] for i in db.ids], dtype=np.float64)
    except KeyError as e:
        raise ContractViolation(f"prototype {e.args[0]} has no score") from None


def build_histogram(db, scores, num_bins):
    """Bin each class's prototypes at equally spaced nearest-rank percentiles
    of that class's scores. A score equal to an edge goes to the lower bin."""
    if int(num_bins) != num_bins or num_bins < 1:
        raise ContractViolation("number of bins must be a positive integer")
    num_bins = int(num_bins)
    arr = _score_array(db, scores)
    classes, edges, members = [], [], []
    for c in db.class_registry.tolist():
        rows = np.flatnonzero(db.classes == c)
        s = arr[rows]
        e = np.array([percentile(s, 100 * b / num_bins) for b in range(num_bins + 1)])
        # first upper edge >= score; min edge guarantees index >= 0
        b = np.searchsorted(e[1:], s, side="left")
        b = np.minimum(b, num_bins - 1)
        per_class = []
        for k in range(num_bins):
            r = rows[b == k]
            order = np.lexsort((db.ids[r], -arr[r]))
            ids = db.ids[r][order].copy()
            ids.flags.writeable = False
            per_class.append(ids)
        classes.append(int(c))
        edges.append(tuple(float(x) for x in e))
        members.append(tuple(per_class))
    return RankHistogram(
        num_bins=num_bins,
        classes=tuple(classes),
        edges=tuple(edges),
        members=tuple(members),
        scores={int(i): float(s) for i, s in zip(db.ids, arr)},
    )


def write_ranks(db, hist, destination, comment=None):
    """CSV export ``id,class,score,bin``."""
    where = hist.bin_of()
    lines = [f"# {comment}"] if comment else []
    lines.append("id,class,score,bin")
    for i, c in zip(db.ids.tolist(), db.classes.tolist()):
        lines.append(f"{i},{c},{hist.scores[i]!r},{where[i][1]}")
    text = "\n".join(lines) + "\n"
    with open(destination, "w", encoding="utf-8") as fh:
        fh.write(text)


def format_histogram(hist):
    """Per-class bin-edge and bin-size table as plain text."""
    sizes = hist.bin_sizes()
    out = [f"num_bins={hist.num_bins}"]
    for c, e, n in zip(hist.classes, hist.edges, sizes):
        out.append(f"class={c} edges=" + ",".join(repr(x) for x in e)
                   + " sizes=" + ",".join(str(x) for x in n))
    return "\n".join(out) + "\n"
