"""Classifier evaluation of a (sparsified) reference database on a test set."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._knn import NeighborIndex
from .energy import _as_reference, vote
from .errors import ContractViolation, EmptySetError


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_accuracy: float
    classes: tuple
    precision: tuple
    recall: tuple
    auc: float  # nan unless the problem is binary
    confusion: np.ndarray  # rows: true class, columns: predicted class
    db_size: int
    n_test: int

    @property
    def sensitivity(self):
        """Recall of the larger class code (binary problems)."""
        return self.recall[-1] if len(self.classes) == 2 else float("nan")

    @property
    def specificity(self):
        return self.recall[0] if len(self.classes) == 2 else float("nan")

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_accuracy": self.macro_accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "auc": self.auc,
            "db_size": self.db_size,
            "n_test": self.n_test,
        }

    def to_text(self):
        lines = [f"{k}={v!r}" for k, v in self.as_dict().items()]
        lines.append("classes=" + ",".join(map(str, self.classes)))
        lines.append("precision=" + ",".join(repr(p) for p in self.precision))
        lines.append("recall=" + ",".join(repr(r) for r in self.recall))
        for c, row in zip(self.classes, self.confusion):
            lines.append(f"confusion[{c}]=" + ",".join(map(str, row)))
        return "\n".join(lines) + "\n"

    def summary_row(self):
        d = self.as_dict()
        return ",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in d.values())

    @staticmethod
    def summary_header():
        return "accuracy,macro_accuracy,sensitivity,specificity,auc,db_size,n_test"


def rank_auc(scores, positive):
    """ROC AUC as the normalised Mann-Whitney rank-sum statistic (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def predict(ref, queries, k, n_jobs=1):
    """(predicted codes, vote counts, class registry) for each query row."""
    parent, selected = _as_reference(ref)
    if len(selected) == 0:
        raise EmptySetError("reference database is empty")
    rows = parent.rows(selected)
    index = NeighborIndex(parent.features[rows], parent.ids[rows], n_jobs)
    pos, _ = index.query(queries, k)
    classes = np.where(pos >= 0, parent.classes[rows][np.maximum(pos, 0)], -1)
    pred, counts = vote(classes, parent.class_registry)
    return pred, counts, parent.class_registry


def evaluate_classifier(ref, test, k, n_jobs=1):
    """Classify every test prototype against ``ref`` (no exclusions)."""
    parent, selected = _as_reference(ref)
    if len(test) == 0:
        raise ContractViolation("test set is empty")
    if test.dimension != parent.dimension:
        raise ContractViolation(f"dimension mismatch: reference {parent.dimension}, test {test.dimension}")
    pred, counts, registry = predict(ref, test.features, k, n_jobs)
    classes = np.union1d(registry, test.class_registry)
    ti = np.searchsorted(classes, test.classes)
    pi = np.searchsorted(classes, pred)
    c = len(classes)
    confusion = np.bincount(ti * c + pi, minlength=c * c).reshape(c, c)
    tp = np.diag(confusion).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = tp / confusion.sum(axis=0)
        recall = tp / confusion.sum(axis=1)
    present = confusion.sum(axis=1) > 0
    auc = float("nan")
    if len(classes) == 2:
        share = counts[:, -1] / counts.sum(axis=1) if len(registry) == 2 else (
            (pred == classes[1]).astype(np.float64))
        auc = rank_auc(share, test.classes == classes[1])
    return MetricReport(
        accuracy=float(tp.sum() / len(test)),
        macro_accuracy=float(recall[present].mean()),
        classes=tuple(int(x) for x in classes),
        precision=tuple(float(x) for x in precision),
        recall=tuple(float(x) for x in recall),
        auc=auc,
        confusion=confusion,
        db_size=len(selected),
        n_test=len(test),
    )
