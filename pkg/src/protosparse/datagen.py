"""Synthetic prototype databases: Gaussian blobs and noisy binary rays."""
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .store import PrototypeDatabase


@dataclass(frozen=True)
class BlobSpec:
    means: tuple  # one mean vector per class
    stds: tuple  # isotropic standard deviation per class
    samples_per_class: int
    seed: int = 0

    @property
    def num_classes(self):
        return len(self.means)

    @property
    def dimension(self):
        return len(self.means[0])


@dataclass(frozen=True)
class RaySpec:
    """Rays of length ``length``; class c is 1 before ``boundaries[c]`` and 0 after."""

    length: int
    boundaries: tuple
    flip: float
    samples_per_class: int
    seed: int = 0


def _shuffled(features, classes, rng):
    order = rng.permutation(len(classes))
    return PrototypeDatabase(features[order], classes[order])


def gen_blobs(spec):
    means = np.asarray(spec.means, dtype=np.float64)
    stds = np.asarray(spec.stds, dtype=np.float64)
    if means.ndim != 2 or len(stds) != len(means):
        raise ContractViolation("need one mean vector and one std per class")
    if np.any(stds <= 0):
        raise ContractViolation("standard deviations must be positive")
    if len(np.unique(means, axis=0)) != len(means):
        raise ContractViolation("class means must be distinct")
    rng = np.random.default_rng(spec.seed)
    n = spec.samples_per_class
    feats = np.concatenate([m + s * rng.standard_normal((n, len(m))) for m, s in zip(means, stds)])
    classes = np.repeat(np.arange(len(means)), n)
    return _shuffled(feats, classes, rng)


def gen_rays(spec):
    j = spec.length
    b = np.asarray(spec.boundaries, dtype=np.int64)
    if np.any(b < 1) or np.any(b > j - 1):
        raise ContractViolation("boundary indices must lie in [1, J-1]")
    if len(np.unique(b)) != len(b):
        raise ContractViolation("boundary indices must be distinct")
    if not 0 <= spec.flip < 0.5:
        raise ContractViolation("flip probability must lie in [0, 0.5)")
    rng = np.random.default_rng(spec.seed)
    n = spec.samples_per_class
    base = (np.arange(j)[None, :] < b[:, None]).astype(np.float64)
    feats = np.repeat(base, n, axis=0)
    flips = rng.random(feats.shape) < spec.flip
    feats[flips] = 1.0 - feats[flips]
    classes = np.repeat(np.arange(len(b)), n)
    return _shuffled(feats, classes, rng)


def split(db, fractions, seed=0):
    """Seeded random partition into len(fractions) databases, ids renumbered from 0."""
    fr = np.asarray(fractions, dtype=np.float64)
    if np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ContractViolation("split fractions must be non-negative and sum to 1")
    order = np.random.default_rng(seed).permutation(len(db))
    cuts = np.round(np.cumsum(fr)[:-1] * len(db)).astype(int)
    parts = []
    for rows in np.split(order, cuts):
        rows = np.sort(rows)
        parts.append(PrototypeDatabase(db.features[rows], db.classes[rows], metric=db.metric))
    return parts
