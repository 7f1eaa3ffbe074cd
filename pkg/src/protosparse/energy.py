"""Robustness + fidelity + sparsity energy of a sparsified database.

The classifier ``f`` is a K-nearest-neighbour majority vote over the retained
prototypes, ties going to the smallest class code. When a query is itself a
retained prototype (or a perturbation of one) it is left out of its own vote.
"""
import math
import sys
from dataclasses import asdict, dataclass

import numpy as np

from ._knn import NeighborIndex, drop_self
from .errors import ContractViolation, EmptySetError
from .sparsifier import SparsificationPlan, SparsifiedDatabase, retained_count, sparsify

SENTINEL = sys.float_info.max


@dataclass(frozen=True)
class EnergyWeights:
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ContractViolation(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class PerturbationConfig:
    """Step ``epsilon`` along coordinate axes; ``dims=None`` means all J axes,
    an integer d picks a fixed seeded subset of d axes (rescaled by J/d)."""

    epsilon: float = 1.0
    dims: int = None
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ContractViolation("epsilon must be a positive finite number")
        if self.dims is not None and self.dims < 1:
            raise ContractViolation("dims must be None or a positive integer")

    def axes(self, j):
        """(axis indices, rescaling factor) for a J-dimensional database."""
        if self.dims is None or self.dims >= j:
            if self.dims is not None and self.dims > j:
                raise ContractViolation(f"dims={self.dims} exceeds dimension {j}")
            return np.arange(j), 1.0
        rng = np.random.default_rng(self.seed)
        return np.sort(rng.choice(j, size=self.dims, replace=False)), j / self.dims


@dataclass(frozen=True)
class EnergyReport:
    robustness: float
    fidelity: float
    sparsity: int
    total: float
    db_size: int
    evaluations: int
    alpha: float
    beta: float
    empty: bool = False

    def to_text(self):
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    def to_fields(self):
        return " ".join(f"{k}={_fmt(v)}" for k, v in asdict(self).items())

    @classmethod
    def from_fields(cls, fields):
        return cls(
            robustness=float(fields["robustness"]),
            fidelity=float(fields["fidelity"]),
            sparsity=int(fields["sparsity"]),
            total=float(fields["total"]),
            db_size=int(fields["db_size"]),
            evaluations=int(fields["evaluations"]),
            alpha=float(fields["alpha"]),
            beta=float(fields["beta"]),
            empty=fields["empty"] in ("1", "True", "true"),
        )


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def combine(robustness, fidelity, sparsity, weights, evaluations=0):
    total = robustness + weights.alpha * fidelity + weights.beta * sparsity
    return EnergyReport(float(robustness), float(fidelity), int(sparsity), float(total),
                        int(sparsity), int(evaluations), weights.alpha, weights.beta)


def sentinel_report(weights, evaluations=0):
    return EnergyReport(0.0, 0.0, 0, SENTINEL, 0, evaluations, weights.alpha, weights.beta, True)


def vote(neighbor_classes, registry):
    """Majority vote per row of class codes (-1 = padding); ties -> smallest code."""
    registry = np.asarray(registry)
    valid = neighbor_classes >= 0
    if not np.all(valid.any(axis=1)):
        raise EmptySetError("a query had no reference prototypes to vote")
    idx = np.searchsorted(registry, np.where(valid, neighbor_classes, registry[0]))
    n, c = len(neighbor_classes), len(registry)
    flat = (np.arange(n)[:, None] * c + idx)[valid]
    counts = np.bincount(flat, minlength=n * c).reshape(n, c)
    return registry[np.argmax(counts, axis=1)], counts


def _as_reference(ref):
    if isinstance(ref, SparsifiedDatabase):
        return ref.parent, ref.selected_ids
    return ref, ref.ids


def classify(ref, query, k, exclude_ids=()):
    """Majority-vote class of ``query`` among its k nearest reference prototypes."""
    parent, selected = _as_reference(ref)
    if len(exclude_ids):
        selected = selected[~np.isin(selected, np.asarray(list(exclude_ids), dtype=np.int64))]
    if len(selected) == 0:
        raise EmptySetError("reference set is empty")
    rows = parent.rows(selected)
    index = NeighborIndex(parent.features[rows], parent.ids[rows])
    pos, _ = index.query(np.asarray(query, dtype=np.float64).reshape(1, -1), k)
    classes = np.where(pos >= 0, parent.classes[rows][np.maximum(pos, 0)], -1)
    return float(vote(classes, parent.class_registry)[0][0])


def classify_batch(parent, selected_rows, queries, self_ids, k, n_jobs=1):
    """Predicted class codes for ``queries`` using ``parent`` rows ``selected_rows``.

    ``self_ids[i]`` (or -1) is left out of query i's vote.
    """
    if len(selected_rows) == 0:
        raise EmptySetError("reference set is empty")
    index = NeighborIndex(parent.features[selected_rows], parent.ids[selected_rows], n_jobs)
    pos, dist = index.query(queries, k + 1)
    pos, _ = drop_self(pos, dist, parent.ids[selected_rows], self_ids, k)
    classes = np.where(pos >= 0, parent.classes[selected_rows][np.maximum(pos, 0)], -1)
    return vote(classes, parent.class_registry)[0]


def _perturbed(features, axes, epsilon):
    m = len(features)
    out = np.repeat(features[None, :, :], len(axes), axis=0)
    out[np.arange(len(axes)), :, axes] += epsilon
    return out.reshape(len(axes) * m, -1)


def _check_ref(db, ref):
    parent, selected = _as_reference(ref)
    if parent is not db and not (parent.dimension == db.dimension):
        raise ContractViolation("reference and database dimensions differ")
    return parent, selected


def fidelity(db, ref, k, n_jobs=1):
    """Sum over all prototypes of (true class - leave-self-out prediction)^2."""
    parent, selected = _check_ref(db, ref)
    pred = classify_batch(parent, parent.rows(selected), db.features, db.ids, k, n_jobs)
    return float(((db.classes - pred) ** 2).sum())


def robustness(db, ref, k, pcfg, n_jobs=1, block=65536):
    """Sum over prototypes and perturbed axes of |f(x) - f(x + eps e_j)|."""
    parent, selected = _check_ref(db, ref)
    rows = parent.rows(selected)
    axes, scale = pcfg.axes(db.dimension)
    base = classify_batch(parent, rows, db.features, db.ids, k, n_jobs)
    total = 0
    step = max(1, block // max(len(axes), 1))
    for s in range(0, len(db), step):
        e = min(s + step, len(db))
        q = _perturbed(db.features[s:e], axes, pcfg.epsilon)
        pred = classify_batch(parent, rows, q, np.tile(db.ids[s:e], len(axes)), k, n_jobs)
        total += int(np.abs(pred.reshape(len(axes), -1) - base[s:e]).sum())
    return float(total * scale)


def evaluate(db, hist, plan, weights, k, pcfg, n_jobs=1):
    """Sparsify with ``plan`` and evaluate all three energy terms."""
    ref = sparsify(db, hist, plan)
    n_axes = len(pcfg.axes(db.dimension)[0])
    if len(ref) == 0:
        return sentinel_report(weights)
    try:
        rob = robustness(db, ref, k, pcfg, n_jobs)
        fid = fidelity(db, ref, k, n_jobs)
    except EmptySetError:
        return sentinel_report(weights)
    return combine(rob, fid, len(ref), weights, evaluations=len(db) * (1 + n_axes))


class EnergyEvaluator:
    """Repeated energy evaluation of many plans over one database.

    Neighbour lists of every query (prototypes and their perturbations)
    against the full database are computed once; a plan's K nearest retained
    neighbours are then the first K retained entries of each list. Rows whose
    truncated list holds too few retained entries fall back to a direct
    search. Terms are cached by retained counts, so plans that round to the
    same selection cost nothing.
    """

    def __init__(self, db, hist, k, pcfg, n_jobs=1, list_length=None, max_cache_bytes=512 * 2**20):
        self.db, self.hist, self.k, self.pcfg, self.n_jobs = db, hist, k, pcfg, n_jobs
        self.axes, self.scale = pcfg.axes(db.dimension)
        m = len(db)
        self._bins = [[db.rows(ids) for ids in per_class] for per_class in hist.members]
        self.queries = np.concatenate([db.features, _perturbed(db.features, self.axes, pcfg.epsilon)])
        self.self_ids = np.tile(db.ids, 1 + len(self.axes))
        n_rows = len(self.queries)
        if list_length is None:
            list_length = min(max(16 * k, 256), max_cache_bytes // max(4 * n_rows, 1))
        self.list_length = int(min(list_length, m - 1))
        self._lists = None
        if self.list_length >= k + 1:
            index = db.index(n_jobs)
            pos, dist = index.query(self.queries, self.list_length + 1)
            pos, _ = drop_self(pos, dist, db.ids, self.self_ids, self.list_length)
            self._lists = pos.astype(np.int32)
        self._cache = {}
        self.classifier_calls = 0

    def counts(self, plan):
        if not isinstance(plan, SparsificationPlan):
            plan = SparsificationPlan(plan)
        if len(plan) != self.hist.num_bins:
            raise ContractViolation("plan length does not match the histogram")
        return tuple(tuple(retained_count(f, len(r)) for f, r in zip(plan.fractions, per_class))
                     for per_class in self._bins)

    def _selected_rows(self, counts):
        parts = [r[:n] for per_class, cnt in zip(self._bins, counts) for r, n in zip(per_class, cnt)]
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)

    def _predict(self, rows):
        db, k = self.db, self.k
        if self._lists is None:
            return classify_batch(db, rows, self.queries, self.self_ids, k, self.n_jobs)
        in_ref = np.zeros(len(db), dtype=bool)
        in_ref[rows] = True
        lists = self._lists
        mask = in_ref[np.maximum(lists, 0)] & (lists >= 0)
        cs = np.cumsum(mask, axis=1)
        take = mask & (cs <= k)
        classes = np.where(take, db.classes[np.maximum(lists, 0)], -1)
        short = cs[:, -1] < k
        if self.list_length < len(db) - 1 and short.any():
            fallback = np.flatnonzero(short)
            sub = NeighborIndex(db.features[rows], db.ids[rows], self.n_jobs)
            pos, dist = sub.query(self.queries[fallback], k + 1)
            pos, _ = drop_self(pos, dist, db.ids[rows], self.self_ids[fallback], k)
            fixed = np.full((len(fallback), lists.shape[1]), -1, dtype=np.int64)
            fixed[:, :k] = np.where(pos >= 0, db.classes[rows][np.maximum(pos, 0)], -1)
            classes[fallback] = fixed
        return vote(classes, db.class_registry)[0]

    def terms(self, plan):
        """(robustness, fidelity, sparsity, classifier calls, empty) for ``plan``.

        The call count is what the plan costs without caching, so reports do
        not depend on evaluation order.
        """
        key = self.counts(plan)
        if key not in self._cache:
            self._cache[key] = self._compute(key)
        return self._cache[key]

    def _compute(self, key):
        rows = self._selected_rows(key)
        m = len(self.db)
        if len(rows) == 0:
            return 0.0, 0.0, 0, 0, True
        try:
            pred = self._predict(rows)
        except EmptySetError:
            return 0.0, 0.0, 0, 0, True
        self.classifier_calls += len(pred)
        base = pred[:m]
        fid = float(((self.db.classes - base) ** 2).sum())
        rob = float(int(np.abs(pred[m:].reshape(len(self.axes), m) - base).sum()) * self.scale)
        return rob, fid, len(rows), len(pred), False

    def evaluate(self, plan, weights):
        r, f, s, calls, empty = self.terms(plan)
        if empty:
            return sentinel_report(weights, calls)
        return combine(r, f, s, weights, calls)
