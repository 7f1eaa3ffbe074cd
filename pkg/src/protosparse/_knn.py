"""Exact Euclidean k-nearest-neighbour engine.

Results are ordered by (distance, id) and are identical to an exhaustive
sort. The search is blocked brute force: a BLAS product gives approximate
squared distances, a rigorous rounding bound turns those into a candidate
set, and the candidates are re-scored with the canonical distance formula
before the final ordering. Duplicate reference rows are stored once with
their sorted id lists and duplicate queries are answered once, which keeps
heavily repeated data (binary rays) cheap.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_EPS = np.finfo(np.float64).eps
_CHUNK_BYTES = 32 * 2**20


def sq_dist_rows(a, b):
    """Canonical squared distance between matching rows of ``a`` and ``b``.

    Every distance in the package goes through this function so that ties are
    decided on bit-identical values.
    """
    d = a - b
    return (d * d).sum(axis=-1)


def row_keys(x):
    """Hashable per-row byte keys; -0.0 and 0.0 map to the same key."""
    x = np.ascontiguousarray(x + 0.0, dtype=np.float64)
    return x.view(np.dtype((np.void, x.dtype.itemsize * x.shape[1]))).ravel()


def unique_rows(x):
    """Return (first_index, inverse) grouping identical rows of ``x``."""
    if len(x) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    _, first, inverse = np.unique(row_keys(x), return_index=True, return_inverse=True)
    return first.astype(np.int64), inverse.reshape(-1).astype(np.int64)


class NeighborIndex:
    """Exact KNN over a fixed reference set.

    ``ids`` only serve as the secondary sort key; queries return positions
    into the reference arrays.
    """

    def __init__(self, features, ids, n_jobs=1):
        features = np.asarray(features, dtype=np.float64)
        ids = np.asarray(ids, dtype=np.int64)
        if features.ndim != 2 or len(features) != len(ids):
            raise ValueError("features must be (n, J) with one id per row")
        self.n = len(ids)
        self.dim = features.shape[1]
        self.n_jobs = max(1, int(n_jobs))
        first, inverse = unique_rows(features)
        self._points = features[first]
        order = np.lexsort((ids, inverse))
        self._members = order
        self._member_ids = ids[order]
        counts = np.bincount(inverse, minlength=len(first)) if self.n else np.zeros(0, np.int64)
        self._mult = counts.astype(np.int64)
        self._offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self._center = self._points.mean(axis=0) if len(first) else np.zeros(self.dim)
        centered = self._points - self._center
        self._sqn = (centered * centered).sum(axis=1)
        self._max_sqn = float(self._sqn.max()) if len(first) else 0.0

    @property
    def n_unique(self):
        return len(self._points)

    def query(self, queries, k):
        """Return (positions, distances), each shaped (n_queries, k).

        Rows with fewer than ``k`` reference entries are padded with -1 and
        ``inf``.
        """
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim == 1:
            queries = queries[None, :]
        nq = len(queries)
        pos = np.full((nq, k), -1, dtype=np.int64)
        dist = np.full((nq, k), np.inf)
        if nq == 0 or self.n == 0 or k < 1:
            return pos, dist
        if queries.shape[1] != self.dim:
            raise ValueError(f"query dimension {queries.shape[1]} != {self.dim}")
        first, inverse = unique_rows(queries)
        uq = queries[first]
        upos = np.full((len(uq), k), -1, dtype=np.int64)
        udist = np.full((len(uq), k), np.inf)
        rows_per_chunk = max(1, _CHUNK_BYTES // (8 * max(self.n_unique, 1)))
        starts = range(0, len(uq), rows_per_chunk)

        def work(s):
            e = min(s + rows_per_chunk, len(uq))
            upos[s:e], udist[s:e] = self._query_block(uq[s:e], k)

        if self.n_jobs > 1 and len(starts) > 1:
            with ThreadPoolExecutor(self.n_jobs) as ex:
                list(ex.map(work, starts))
        else:
            for s in starts:
                work(s)
        return upos[inverse], udist[inverse]

    def _query_block(self, q, k):
        nq, u = len(q), self.n_unique
        qc = q - self._center
        qn = (qc * qc).sum(axis=1)
        approx = qn[:, None] + self._sqn[None, :] - 2.0 * (qc @ (self._points - self._center).T)
        kk = min(k, u)
        kth = np.partition(approx, kk - 1, axis=1)[:, kk - 1]
        # generous bound on gemm rounding plus the canonical formula's rounding
        err = 16.0 * (self.dim + 2) * _EPS * (qn + self._max_sqn) + 1e-300
        rows, cols = np.nonzero(approx <= (kth + err)[:, None])

        d = np.sqrt(sq_dist_rows(self._points[cols], q[rows]))
        order = np.lexsort((d, rows))
        rows, cols, d = rows[order], cols[order], d[order]

        # drop groups beyond the distance at which k entries are already covered
        mult = self._mult[cols]
        row_start = np.searchsorted(rows, np.arange(nq))
        csum = np.cumsum(mult)
        before = np.concatenate(([0], csum))[row_start]
        within = csum - before[rows]
        reached = within >= k
        cut = np.full(nq, np.inf)
        hit_rows = rows[reached]
        hit_d = d[reached]
        if len(hit_rows):
            first_hit = np.concatenate(([True], hit_rows[1:] != hit_rows[:-1]))
            cut[hit_rows[first_hit]] = hit_d[first_hit]
        keep = d <= cut[rows]
        rows, cols, d = rows[keep], cols[keep], d[keep]

        # expand each kept group into its k smallest ids
        take = np.minimum(self._mult[cols], k)
        total = int(take.sum())
        rep = np.repeat(np.arange(len(cols)), take)
        ramp = np.arange(total) - np.repeat(np.cumsum(take) - take, take)
        slot = self._offsets[cols][rep] + ramp
        erow = rows[rep]
        ed = d[rep]
        eid = self._member_ids[slot]
        emem = self._members[slot]
        order = np.lexsort((eid, ed, erow))
        erow, ed, emem = erow[order], ed[order], emem[order]
        start = np.searchsorted(erow, np.arange(nq))
        rank = np.arange(total) - start[erow]
        sel = rank < k

        pos = np.full((nq, k), -1, dtype=np.int64)
        dist = np.full((nq, k), np.inf)
        pos[erow[sel], rank[sel]] = emem[sel]
        dist[erow[sel], rank[sel]] = ed[sel]
        return pos, dist


def drop_self(pos, dist, ids, self_ids, k):
    """Given k+1 neighbour lists, remove each row's own id and keep k.

    ``ids`` maps positions to ids; padded positions (-1) are never self.
    """
    nbr_ids = np.where(pos >= 0, ids[np.maximum(pos, 0)], -1)
    is_self = (nbr_ids == np.asarray(self_ids)[:, None]) & (pos >= 0)
    order = np.argsort(is_self, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(pos, order, axis=1), np.take_along_axis(dist, order, axis=1)
