import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protosparse import (
    BlobSpec,
    ConfigError,
    ContractViolation,
    EnergyEvaluator,
    EnergyWeights,
    OptimizerConfig,
    OuterConfig,
    PerturbationConfig,
    build_histogram,
    gen_blobs,
    minimize_inner,
    optimize_outer,
    rank_scores,
    search_step,
    split,
)
from protosparse.energy import SENTINEL
from protosparse.optimizer import SearchState, TraceRecord, outer_grid


def _fixture(seed, n_bins=3, m=60):
    rng = np.random.default_rng(seed)
    means = tuple(tuple(rng.normal(size=2) * 2) for _ in range(2))
    db = gen_blobs(BlobSpec(means, (1.0, 1.0), m // 2, seed=seed))
    hist = build_histogram(db, rank_scores(db, 3), n_bins)
    return db, hist


def test_search_step_is_strict():
    s = SearchState(np.ones(2), 5.0, 0.25)
    assert not search_step(s, 5.0)
    assert search_step(s, 4.999)
    assert not search_step(s, SENTINEL)


class _Counting:
    """Evaluator proxy recording every plan it is asked to score."""

    def __init__(self, inner):
        self.inner, self.plans = inner, []

    def evaluate(self, plan, weights):
        self.plans.append(tuple(plan))
        return self.inner.evaluate(plan, weights)


def test_trace_invariants():
    db, hist = _fixture(3)
    pcfg = PerturbationConfig(0.5)
    plan, trace = minimize_inner(db, hist, EnergyWeights(1.0, 0.05), 3, pcfg,
                                 OptimizerConfig(max_evaluations=60, restarts=3))
    assert len(trace) <= 60
    inc = trace.incumbents()
    assert all(b <= a for a, b in zip(inc, inc[1:]))
    for r in trace.records:
        assert all(0.0 <= f <= 1.0 for f in r.plan)
    assert trace.best_report.total == min(r.report.total for r in trace.records if r.accepted)
    assert plan == trace.best_plan
    assert trace.best_report.total <= trace.records[0].report.total


def test_identical_runs_give_identical_traces():
    db, hist = _fixture(4)
    cfg = OptimizerConfig(max_evaluations=50, restarts=2, seed=9)
    args = (db, hist, EnergyWeights(0.5, 0.02), 3, PerturbationConfig(0.5))
    a = minimize_inner(*args, cfg)[1].lines()
    b = minimize_inner(*args, cfg)[1].lines()
    assert a == b


def test_trace_line_roundtrip():
    db, hist = _fixture(5)
    _, trace = minimize_inner(db, hist, EnergyWeights(1.0, 0.01), 3, PerturbationConfig(), tag="x")
    for rec in trace.records[:10]:
        assert TraceRecord.from_line(rec.to_line()) == rec


def test_resume_replays_without_recomputing():
    db, hist = _fixture(6)
    cfg = OptimizerConfig(max_evaluations=40)
    w = EnergyWeights(1.0, 0.02)
    pcfg = PerturbationConfig(0.5)
    _, full = minimize_inner(db, hist, w, 3, pcfg, cfg)
    counter = _Counting(EnergyEvaluator(db, hist, 3, pcfg))
    _, resumed = minimize_inner(db, hist, w, 3, pcfg, cfg, evaluator=counter, resume=full.records[:25])
    assert resumed.lines() == full.lines()
    assert len(counter.plans) == len(full) - 25


def test_budget_below_n_plus_one():
    db, hist = _fixture(1)
    with pytest.raises(ContractViolation):
        minimize_inner(db, hist, EnergyWeights(), 3, PerturbationConfig(), OptimizerConfig(max_evaluations=3))


def test_initial_plan_outside_box():
    db, hist = _fixture(1)
    with pytest.raises(ContractViolation):
        minimize_inner(db, hist, EnergyWeights(), 3, PerturbationConfig(),
                       OptimizerConfig(initial_plan=(1.2, 0.5, 0.5)))


def test_empty_bins_are_not_polled():
    # every score ties, so bins 1.. are empty in each class
    db, _ = _fixture(2)
    hist = build_histogram(db, np.zeros(len(db)), 3)
    _, trace = minimize_inner(db, hist, EnergyWeights(1.0, 0.1), 3, PerturbationConfig(),
                              OptimizerConfig(max_evaluations=40))
    assert all(r.plan[1:] == (1.0, 1.0) for r in trace.records)


def test_huge_beta_shrinks_database():
    db, hist = _fixture(8)
    plan, trace = minimize_inner(db, hist, EnergyWeights(0.0, 10.0), 3, PerturbationConfig(0.3))
    assert trace.best_report.db_size < len(db) / 4
    assert not trace.best_report.empty


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_inner_close_to_grid_minimum(seed):
    rng = np.random.default_rng(seed)
    db, hist = _fixture(seed, n_bins=int(rng.integers(1, 3)), m=40)
    w = EnergyWeights(float(rng.uniform(0.1, 5)), float(rng.uniform(0.01, 0.5)))
    pcfg = PerturbationConfig(0.5)
    ev = EnergyEvaluator(db, hist, 3, pcfg)
    grid = np.arange(11) / 10
    gmin = min(ev.evaluate(p, w).total for p in itertools.product(grid, repeat=hist.num_bins))
    _, trace = minimize_inner(db, hist, w, 3, pcfg, OptimizerConfig(max_evaluations=400, restarts=100),
                              evaluator=ev)
    assert trace.best_report.total <= gmin * 1.05 + 1e-12


def test_outer_config_validation():
    with pytest.raises(ConfigError):
        OuterConfig(alpha_range=(1.0, 0.5)).validate()
    with pytest.raises(ConfigError):
        OuterConfig(beta_range=(0.0, 1.0)).validate()
    with pytest.raises(ConfigError):
        OuterConfig(metric="f1").validate()
    OuterConfig(alpha_range=(1.0, 1.0)).validate()


def test_outer_grid_shape():
    coarse, refine = outer_grid(OuterConfig(budget=13))
    assert len(coarse) == 9
    assert coarse[0] == pytest.approx((0.1, 1e-3))
    assert coarse[-1] == pytest.approx((10.0, 0.1))
    extra = refine(1.0, 0.01)
    assert len(extra) == 8
    for a, b in extra:
        assert 0.1 <= a <= 10 and 1e-3 <= b <= 0.1
    point, _ = outer_grid(OuterConfig((2.0, 2.0), (0.5, 0.5), budget=5))
    assert point == [(2.0, 0.5)]


def test_outer_loop_on_blobs():
    db = gen_blobs(BlobSpec(((0.0, 0.0), (3.0, 0.0)), (1.0, 1.0), 80, seed=3))
    train, val = split(db, (0.75, 0.25), seed=1)
    hist = build_histogram(train, rank_scores(train, 5), 3)
    res = optimize_outer(train, val, hist, 5, PerturbationConfig(0.5), OuterConfig(budget=5),
                         OptimizerConfig(max_evaluations=30))
    assert len(res.cells) == 5
    assert res.metric_name == "auc"
    assert res.metric == max(c.metric for c in res.cells)
    tied = [c for c in res.cells if c.metric == res.metric]
    assert res.db_size == min(c.db_size for c in tied)
    assert math.isfinite(res.metric) and 0.5 < res.metric <= 1.0
    assert res.best.plan == res.plan


def test_outer_three_classes_uses_balanced_accuracy():
    db = gen_blobs(BlobSpec(((0.0, 0.0), (4.0, 0.0), (0.0, 4.0)), (1.0, 1.0, 1.0), 30, seed=2))
    train, val = split(db, (0.7, 0.3), seed=0)
    hist = build_histogram(train, rank_scores(train, 3), 2)
    res = optimize_outer(train, val, hist, 3, PerturbationConfig(), OuterConfig(budget=1),
                         OptimizerConfig(max_evaluations=10))
    assert res.metric_name == "macro_accuracy"
    with pytest.raises(ConfigError):
        optimize_outer(train, val, hist, 3, PerturbationConfig(), OuterConfig(budget=1, metric="auc"))
