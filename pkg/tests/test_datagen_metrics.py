import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from oracles import auc_pairs
from oracles import classify as oracle_classify
from protosparse import (
    BlobSpec,
    ContractViolation,
    EmptySetError,
    PrototypeDatabase,
    RaySpec,
    evaluate_classifier,
    gen_blobs,
    gen_rays,
    split,
)
from protosparse.metrics import rank_auc


def test_rays_without_noise_are_exact():
    db = gen_rays(RaySpec(10, (3, 7), 0.0, 5, seed=0))
    for x, c in zip(db.features, db.classes):
        b = (3, 7)[c]
        assert x.tolist() == [1.0] * b + [0.0] * (10 - b)


def test_rays_flip_rate():
    db = gen_rays(RaySpec(32, (12, 20), 0.05, 2000, seed=4))
    clean = np.array([[1.0] * b + [0.0] * (32 - b) for b in (12, 20)])
    rate = (db.features != clean[db.classes]).mean()
    assert abs(rate - 0.05) < 0.003


def test_rays_validation():
    with pytest.raises(ContractViolation):
        gen_rays(RaySpec(10, (0, 5), 0.0, 3))
    with pytest.raises(ContractViolation):
        gen_rays(RaySpec(10, (5, 5), 0.0, 3))
    with pytest.raises(ContractViolation):
        gen_rays(RaySpec(10, (2, 5), 0.5, 3))


def test_generators_are_seeded():
    spec = BlobSpec(((0.0,), (1.0,)), (1.0, 1.0), 10, seed=7)
    assert gen_blobs(spec) == gen_blobs(spec)
    assert not gen_blobs(spec) == gen_blobs(BlobSpec(spec.means, spec.stds, 10, seed=8))


def test_blob_moments():
    db = gen_blobs(BlobSpec(((0.0, 0.0), (5.0, -1.0)), (0.5, 2.0), 4000, seed=1))
    for c, mu, sd in ((0, (0.0, 0.0), 0.5), (1, (5.0, -1.0), 2.0)):
        x = db.features[db.classes == c]
        np.testing.assert_allclose(x.mean(axis=0), mu, atol=4 * sd / math.sqrt(4000))
        np.testing.assert_allclose(x.std(axis=0), sd, rtol=0.05)


def test_blob_validation():
    with pytest.raises(ContractViolation):
        gen_blobs(BlobSpec(((0.0,), (0.0,)), (1.0, 1.0), 3))
    with pytest.raises(ContractViolation):
        gen_blobs(BlobSpec(((0.0,), (1.0,)), (1.0, 0.0), 3))


def test_split_partitions_rows():
    db = gen_blobs(BlobSpec(((0.0,), (3.0,)), (1.0, 1.0), 50, seed=0))
    parts = split(db, (0.6, 0.2, 0.2), seed=3)
    assert [len(p) for p in parts] == [60, 20, 20]
    for p in parts:
        assert p.ids.tolist() == list(range(len(p)))
    rows = sorted(tuple(r) for p in parts for r in p.features.tolist())
    assert rows == sorted(tuple(r) for r in db.features.tolist())
    with pytest.raises(ContractViolation):
        split(db, (0.5, 0.2))


def test_bayes_rate_of_1nn_on_blobs():
    # With many samples, large-K KNN error approaches the Bayes error of
    # two unit Gaussians whose means are 2 apart: Phi(-1).
    db = gen_blobs(BlobSpec(((0.0,), (2.0,)), (1.0, 1.0), 3000, seed=11))
    test = gen_blobs(BlobSpec(((0.0,), (2.0,)), (1.0, 1.0), 3000, seed=12))
    acc = evaluate_classifier(db, test, 101).accuracy
    assert abs((1 - acc) - norm.cdf(-1.0)) < 0.015


def test_metrics_against_oracle(rng):
    ref = PrototypeDatabase(rng.integers(0, 3, size=(60, 2)).astype(float), rng.integers(0, 2, 60))
    test = PrototypeDatabase(rng.integers(0, 3, size=(40, 2)).astype(float), rng.integers(0, 2, 40))
    rep = evaluate_classifier(ref, test, 5)
    pred = [oracle_classify(ref.features.tolist(), ref.ids.tolist(), ref.classes.tolist(), q, 5)
            for q in test.features.tolist()]
    truth = test.classes.tolist()
    assert rep.accuracy == sum(p == t for p, t in zip(pred, truth)) / 40
    tp = sum(p == t == 1 for p, t in zip(pred, truth))
    assert rep.sensitivity == tp / sum(truth)
    assert rep.confusion.sum() == 40
    assert rep.macro_accuracy == pytest.approx((rep.sensitivity + rep.specificity) / 2)


def test_identity_on_perfect_separation(two_blobs):
    rep = evaluate_classifier(two_blobs, two_blobs, 1)
    assert rep.accuracy == rep.auc == rep.sensitivity == rep.specificity == 1.0
    assert rep.to_text().startswith("accuracy=1.0\n")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_rank_auc_matches_pairwise(data):
    scores = [s for s, _ in data]
    labels = [y for _, y in data]
    got = rank_auc(scores, labels)
    if all(labels) or not any(labels):
        assert math.isnan(got)
    else:
        assert got == pytest.approx(auc_pairs(scores, labels), abs=1e-12)


def test_evaluate_errors(two_blobs):
    with pytest.raises(ContractViolation):
        evaluate_classifier(two_blobs, PrototypeDatabase([[0.0, 0.0, 0.0]], [0]), 3)
    empty = two_blobs.subset([])
    with pytest.raises(EmptySetError):
        evaluate_classifier(empty, two_blobs, 3)
