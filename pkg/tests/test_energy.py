import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_db
from oracles import classify as oracle_classify
from oracles import energy_terms
from protosparse import (
    ContractViolation,
    EmptySetError,
    EnergyEvaluator,
    EnergyReport,
    EnergyWeights,
    PerturbationConfig,
    PrototypeDatabase,
    SparsificationPlan,
    build_histogram,
    classify,
    evaluate,
    fidelity,
    rank_scores,
    robustness,
    sparsify,
)
from protosparse.energy import SENTINEL, vote


def test_vote_ties_to_smallest_code():
    pred, counts = vote(np.array([[3, 1, 3, 1], [2, -1, -1, -1]]), [1, 2, 3])
    assert pred.tolist() == [1, 2]
    assert counts.tolist() == [[2, 0, 2], [0, 1, 0]]


def test_vote_without_neighbours():
    with pytest.raises(EmptySetError):
        vote(np.array([[-1, -1]]), [0, 1])


def test_classify_small_cases():
    db = PrototypeDatabase([[0.0], [1.0], [5.0]], [0, 0, 1])
    assert classify(db, [0.4], 1) == 0.0
    assert classify(db, [4.0], 1) == 1.0
    assert classify(db, [4.0], 3) == 0.0
    assert classify(db, [1.0], 1, exclude_ids={1}) == 0.0
    with pytest.raises(EmptySetError):
        classify(db, [0.0], 1, exclude_ids={0, 1, 2})


def test_classify_matches_oracle(rng):
    for _ in range(20):
        db = random_db(rng, int(rng.integers(3, 60)), 3, n_classes=4, integer=True)
        q = rng.integers(0, 3, size=3).astype(float)
        k = int(rng.integers(1, 8))
        exp = oracle_classify(db.features.tolist(), db.ids.tolist(), db.classes.tolist(), q.tolist(), k)
        assert classify(db, q, k) == exp


def test_fidelity_perfect_on_separated_blobs(two_blobs):
    assert fidelity(two_blobs, two_blobs, 3) == 0.0


def test_robustness_flat_when_far_from_boundary(two_blobs):
    assert robustness(two_blobs, two_blobs, 3, PerturbationConfig(0.01)) == 0.0


def test_robustness_counts_boundary_flips():
    # x=3 sees ids 2 and 4 at equal distance, the tie picks id 2 (class 0);
    # pushed by +1 it lands on id 4 (class 1). x=2 lands on id 3. Two flips.
    db = PrototypeDatabase([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]], [0, 0, 0, 1, 1, 1])
    assert robustness(db, db, 1, PerturbationConfig(1.0)) == 2.0


def test_perturbation_axes():
    a, s = PerturbationConfig(1.0).axes(5)
    assert a.tolist() == [0, 1, 2, 3, 4] and s == 1.0
    a, s = PerturbationConfig(1.0, dims=2, seed=3).axes(8)
    assert len(a) == 2 and s == 4.0
    assert a.tolist() == PerturbationConfig(1.0, dims=2, seed=3).axes(8)[0].tolist()
    with pytest.raises(ContractViolation):
        PerturbationConfig(1.0, dims=9).axes(8)
    with pytest.raises(ContractViolation):
        PerturbationConfig(0.0)


@pytest.mark.parametrize("alpha, beta", [(-1.0, 0.0), (0.0, float("inf")), (float("nan"), 1.0)])
def test_weights_validation(alpha, beta):
    with pytest.raises(ContractViolation):
        EnergyWeights(alpha, beta)


def _oracle_report(db, hist, plan, w, k, pcfg):
    sel = sparsify(db, hist, plan).selected_ids.tolist()
    axes, scale = pcfg.axes(db.dimension)
    r, f, s = energy_terms(db.features.tolist(), db.ids.tolist(), db.classes.tolist(), sel, k,
                           pcfg.epsilon, axes.tolist(), scale)
    return r, f, s, r + w.alpha * f + w.beta * s


@pytest.mark.parametrize("dims", [None, 2])
def test_evaluate_matches_oracle(rng, dims):
    for _ in range(6):
        db = random_db(rng, int(rng.integers(8, 40)), 3, n_classes=3, integer=bool(rng.random() < 0.5))
        k = int(rng.integers(1, 5))
        hist = build_histogram(db, rank_scores(db, k), 3)
        plan = tuple(rng.choice([0.3, 0.6, 1.0], size=3))
        w = EnergyWeights(float(rng.uniform(0, 3)), float(rng.uniform(0, 0.1)))
        pcfg = PerturbationConfig(float(rng.choice([0.5, 1.0])), dims=dims, seed=2)
        rep = evaluate(db, hist, plan, w, k, pcfg)
        if rep.empty:
            continue
        r, f, s, t = _oracle_report(db, hist, plan, w, k, pcfg)
        assert (rep.robustness, rep.fidelity, rep.sparsity) == (r, f, s)
        assert rep.total == pytest.approx(t, rel=1e-12)


def test_fixed_small_energy_value():
    db = PrototypeDatabase([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]], [0, 0, 0, 1, 1, 1])
    hist = build_histogram(db, rank_scores(db, 1), 1)
    rep = evaluate(db, hist, (1.0,), EnergyWeights(2.0, 0.5), 1, PerturbationConfig(1.0))
    # two flips, x=3 misclassified by the id tie-break, six prototypes
    assert (rep.robustness, rep.fidelity, rep.sparsity, rep.total) == (2.0, 1.0, 6, 7.0)


def test_energy_decomposition_identity(two_blobs):
    hist = build_histogram(two_blobs, rank_scores(two_blobs, 3), 2)
    w = EnergyWeights(0.7, 0.03)
    rep = evaluate(two_blobs, hist, (0.5, 1.0), w, 3, PerturbationConfig(2.0))
    assert rep.total == pytest.approx(rep.robustness + w.alpha * rep.fidelity + w.beta * rep.sparsity,
                                      rel=1e-12)


def test_empty_plan_gives_sentinel(two_blobs):
    hist = build_histogram(two_blobs, rank_scores(two_blobs, 3), 2)
    rep = evaluate(two_blobs, hist, (0.0, 0.0), EnergyWeights(), 3, PerturbationConfig())
    assert rep.empty and rep.total == SENTINEL and rep.db_size == 0


def test_single_retained_prototype_gives_sentinel():
    # the lone survivor cannot vote for itself
    db = PrototypeDatabase([[0.0], [1.0], [2.0]], [0, 0, 0])
    hist = build_histogram(db, np.array([0.0, 0.0, 1.0]), 1)
    rep = evaluate(db, hist, (0.34,), EnergyWeights(), 1, PerturbationConfig())
    assert rep.empty


def test_report_text_roundtrip(two_blobs):
    hist = build_histogram(two_blobs, rank_scores(two_blobs, 3), 2)
    rep = evaluate(two_blobs, hist, (0.5, 1.0), EnergyWeights(0.7, 0.03), 3, PerturbationConfig())
    fields = dict(kv.split("=") for kv in rep.to_fields().split())
    assert EnergyReport.from_fields(fields) == rep
    assert rep.to_text().splitlines()[0].startswith("robustness=")


def test_sparsity_monotone_in_fractions(two_blobs):
    hist = build_histogram(two_blobs, rank_scores(two_blobs, 3), 2)
    sizes = [evaluate(two_blobs, hist, (f, f), EnergyWeights(), 3, PerturbationConfig()).db_size
             for f in (0.2, 0.5, 0.8, 1.0)]
    assert sizes == sorted(sizes)


@pytest.mark.parametrize("list_length", [None, 3, 6])
def test_evaluator_matches_direct(rng, list_length):
    for _ in range(5):
        db = random_db(rng, int(rng.integers(10, 70)), 2, n_classes=2, integer=bool(rng.random() < 0.5))
        k = int(rng.integers(1, 4))
        pcfg = PerturbationConfig(0.7, dims=1 if rng.random() < 0.5 else None, seed=5)
        hist = build_histogram(db, rank_scores(db, k), 3)
        ev = EnergyEvaluator(db, hist, k, pcfg, list_length=list_length)
        w = EnergyWeights(1.3, 0.02)
        for _ in range(8):
            plan = SparsificationPlan(tuple(rng.uniform(0, 1, size=3)))
            assert ev.evaluate(plan, w).total == evaluate(db, hist, plan, w, k, pcfg).total


def test_evaluator_cache_hits(two_blobs):
    hist = build_histogram(two_blobs, rank_scores(two_blobs, 3), 2)
    ev = EnergyEvaluator(two_blobs, hist, 3, PerturbationConfig())
    first = ev.terms((0.5, 0.5))
    calls = ev.classifier_calls
    again = ev.terms((0.51, 0.49))  # rounds to the same counts
    assert calls == 40 * 3 and ev.classifier_calls == calls
    assert first == again


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_evaluator_property(seed):
    rng = np.random.default_rng(seed)
    db = random_db(rng, int(rng.integers(4, 30)), 2, n_classes=3, integer=True)
    hist = build_histogram(db, rank_scores(db, 2), 2)
    pcfg = PerturbationConfig(1.0)
    ev = EnergyEvaluator(db, hist, 2, pcfg, list_length=4)
    plan = tuple(rng.uniform(0, 1, size=2))
    w = EnergyWeights(1.0, 0.1)
    a, b = ev.evaluate(plan, w), evaluate(db, hist, plan, w, 2, pcfg)
    assert (a.robustness, a.fidelity, a.sparsity, a.empty) == (b.robustness, b.fidelity, b.sparsity, b.empty)
