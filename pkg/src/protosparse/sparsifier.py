"""Deterministic per-bin subsampling of a ranked database."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

ROUNDING = "half-away-from-zero"


def round_half_away(x):
    return math.floor(x + 0.5) if x >= 0 else -math.floor(-x + 0.5)


def retained_count(fraction, size):
    return min(max(round_half_away(fraction * size), 0), size)


@dataclass(frozen=True)
class SparsificationPlan:
    """One retention fraction per bin index, shared by every class."""

    fractions: tuple
    rounding: str = ROUNDING

    def __post_init__(self):
        fr = tuple(float(f) for f in np.asarray(self.fractions, dtype=np.float64).reshape(-1))
        if not fr:
            raise ContractViolation("plan needs at least one fraction")
        if any(not (0.0 <= f <= 1.0) for f in fr):
            raise ContractViolation(f"fractions must lie in [0, 1], got {fr}")
        if self.rounding != ROUNDING:
            raise ContractViolation(f"unknown rounding rule {self.rounding!r}")
        object.__setattr__(self, "fractions", fr)

    def __len__(self):
        return len(self.fractions)

    @classmethod
    def identity(cls, n):
        return cls((1.0,) * n)


@dataclass(frozen=True)
class SparsifiedDatabase:
    parent: object
    selected_ids: np.ndarray
    retained: np.ndarray  # (classes, bins)
    original: np.ndarray  # (classes, bins)
    plan: SparsificationPlan = field(default=None)

    def __len__(self):
        return len(self.selected_ids)

    def database(self):
        """The retained prototypes as a stand-alone database (parent ids kept)."""
        return self.parent.subset(self.selected_ids)


def sparsify(db, hist, plan):
    """Keep, for each (class, bin), the highest-scoring round(f_b * size) members."""
    if not isinstance(plan, SparsificationPlan):
        plan = SparsificationPlan(plan)
    if len(plan) != hist.num_bins:
        raise ContractViolation(f"plan has {len(plan)} fractions, histogram has {hist.num_bins} bins")
    keep, retained, original = [], [], []
    for per_class in hist.members:
        r_row, o_row = [], []
        for f, ids in zip(plan.fractions, per_class):
            n = retained_count(f, len(ids))
            keep.append(ids[:n])
            r_row.append(n)
            o_row.append(len(ids))
        retained.append(r_row)
        original.append(o_row)
    selected = np.sort(np.concatenate(keep)) if keep else np.empty(0, np.int64)
    selected.flags.writeable = False
    return SparsifiedDatabase(db, selected, np.array(retained, dtype=np.int64),
                              np.array(original, dtype=np.int64), plan)


@dataclass(frozen=True)
class ReductionReport:
    per_bin: tuple  # retained fraction per bin index, pooled over classes
    total: float  # |DB(N)| / M
    retained: tuple
    original: tuple

    @property
    def reduction(self):
        return 1.0 - self.total

    def format(self):
        lines = ["bin,original,retained,percent"]
        for b, (o, r, p) in enumerate(zip(self.original, self.retained, self.per_bin)):
            lines.append(f"{b},{o},{r},{100 * p:.4f}")
        lines.append(f"total,{sum(self.original)},{sum(self.retained)},{100 * self.total:.4f}")
        return "\n".join(lines) + "\n"


def reduction_report(s):
    orig = s.original.sum(axis=0)
    kept = s.retained.sum(axis=0)
    per_bin = tuple(float(k / o) if o else float("nan") for k, o in zip(kept, orig))
    m = int(orig.sum())
    return ReductionReport(per_bin, len(s) / m if m else float("nan"),
                           tuple(int(x) for x in kept), tuple(int(x) for x in orig))
