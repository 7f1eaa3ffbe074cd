"""Derivative-free search over per-bin retention fractions and energy weights.

The inner solver is a bound-constrained compass search: each round probes
every coordinate at -step and +step (clipped to [0, 1]), takes any strict
improvement immediately, halves the step after a round without one and
widens it by half after a round with one. Before polling, an optional survey
evaluates a coarse geometric lattice over the box (corners included) and
polling starts from its best point; seeded random restarts can spend leftover
budget. The energy is piecewise constant in the fractions (they are rounded
to counts), which rules out gradients.
"""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import SENTINEL, EnergyEvaluator, EnergyReport, EnergyWeights
from .errors import ConfigError, ContractViolation
from .metrics import evaluate_classifier
from .sparsifier import sparsify


@dataclass(frozen=True)
class OptimizerConfig:
    max_evaluations: int = 200
    initial_plan: tuple = None
    initial_step: float = 0.25
    min_step: float = 1e-3
    seed: int = 0
    survey: bool = True
    restarts: int = 0

    def validate(self, n):
        if self.max_evaluations < n + 1:
            raise ContractViolation(f"budget {self.max_evaluations} is below N+1={n + 1}")
        if not 0 < self.initial_step <= 1:
            raise ContractViolation("initial_step must lie in (0, 1]")
        if not self.min_step > 0:
            raise ContractViolation("min_step must be positive")
        if self.initial_plan is not None and len(self.initial_plan) != n:
            raise ContractViolation("initial_plan length does not match the number of bins")


@dataclass(frozen=True)
class TraceRecord:
    plan: tuple
    report: EnergyReport
    accepted: bool
    tag: str = ""

    def to_line(self):
        head = f"tag={self.tag} " if self.tag else ""
        plan = ",".join(repr(float(x)) for x in self.plan)
        return f"{head}plan={plan} {self.report.to_fields()} accepted={int(self.accepted)}"

    @classmethod
    def from_line(cls, line):
        fields = dict(tok.split("=", 1) for tok in line.split())
        plan = tuple(float(x) for x in fields["plan"].split(","))
        return cls(plan, EnergyReport.from_fields(fields), fields["accepted"] == "1",
                   fields.get("tag", ""))


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    best_plan: tuple = None
    best_report: EnergyReport = None

    def __len__(self):
        return len(self.records)

    def incumbents(self):
        """Best-so-far total after each record."""
        out, best = [], SENTINEL
        for r in self.records:
            if r.accepted:
                best = min(best, r.report.total)
            out.append(best)
        return out

    def lines(self):
        return [r.to_line() for r in self.records]


@dataclass
class SearchState:
    plan: np.ndarray
    total: float
    step: float


def search_step(state, candidate_total):
    """Accept iff the candidate is strictly better and not the empty sentinel."""
    return candidate_total < SENTINEL and candidate_total < state.total


def _key(plan):
    return tuple(float(x) for x in plan)


class _Budgeted:
    """Evaluates plans for one inner run, records the trace, replays a resume log."""

    def __init__(self, evaluator, weights, budget, replay, tag, on_record=None):
        self.evaluator, self.weights, self.budget, self.tag = evaluator, weights, budget, tag
        self.on_record = on_record
        self.replay = list(replay or [])
        self.trace = OptimizationTrace()

    @property
    def exhausted(self):
        return len(self.trace) >= self.budget

    def __call__(self, plan):
        plan = _key(plan)
        n = len(self.trace)
        if n < len(self.replay) and self.replay[n].plan == plan:
            return self.replay[n].report
        return self.evaluator.evaluate(plan, self.weights)

    def record(self, plan, report, accepted):
        rec = TraceRecord(_key(plan), report, accepted, self.tag)
        self.trace.records.append(rec)
        if self.on_record is not None:
            self.on_record(rec)


def _compass(run, x, fx, cfg, active, lo=0.0, hi=1.0):
    state = SearchState(np.array(x, dtype=np.float64), fx, cfg.initial_step)
    while state.step >= cfg.min_step and not run.exhausted:
        improved = False
        for i in active:
            for sign in (-1.0, 1.0):
                if run.exhausted:
                    return state
                cand = state.plan.copy()
                cand[i] = min(max(cand[i] + sign * state.step, lo), hi)
                if cand[i] == state.plan[i]:
                    continue
                rep = run(cand)
                ok = search_step(state, rep.total)
                run.record(cand, rep, ok)
                if ok:
                    state.plan, state.total = cand, rep.total
                    improved = True
        state.step = min(state.step * 1.5, 1.0) if improved else state.step / 2
    return state


_SURVEY_LEVELS = (
    (0.0, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0),
    (0.0, 1 / 16, 1 / 4, 1 / 2, 1.0),
    (0.0, 1 / 8, 1 / 2, 1.0),
    (0.0, 1 / 4, 1.0),
    (0.0, 1.0),
)


def _lattice(x0, active, limit):
    """Largest geometric lattice over the active coordinates that fits ``limit``.

    Levels are denser near 0 because useful retention fractions are small.
    """
    for levels in _SURVEY_LEVELS:
        if len(active) and len(levels) ** len(active) <= limit:
            break
    else:
        return []
    pts = []
    for idx in itertools.product(levels, repeat=len(active)):
        p = np.array(x0, dtype=np.float64)
        p[active] = idx
        if not np.array_equal(p, x0):
            pts.append(p)
    return pts


def _restart_point(rng, x0, active):
    """Random start biased toward sparse plans: each active fraction is 0 with
    probability 1/4, otherwise log-uniform on [1/64, 1]."""
    p = np.array(x0, dtype=np.float64)
    u = np.exp(rng.uniform(math.log(1 / 64), 0.0, size=len(active)))
    p[active] = np.where(rng.random(len(active)) < 0.25, 0.0, u)
    return p


def minimize_inner(db, hist, weights, k, pcfg, cfg=None, evaluator=None, resume=None, tag="",
                   n_jobs=1, on_record=None):
    """Minimise the energy over retention fractions in [0, 1]^N.

    Returns ``(best_plan, trace)``. ``resume`` is a list of TraceRecord from an
    earlier, interrupted run with identical inputs; those evaluations are
    replayed instead of recomputed.
    """
    cfg = cfg or OptimizerConfig()
    n = hist.num_bins
    cfg.validate(n)
    if not isinstance(weights, EnergyWeights):
        weights = EnergyWeights(*weights)
    evaluator = evaluator or EnergyEvaluator(db, hist, k, pcfg, n_jobs=n_jobs)
    run = _Budgeted(evaluator, weights, cfg.max_evaluations, resume, tag, on_record)

    x0 = np.ones(n) if cfg.initial_plan is None else np.asarray(cfg.initial_plan, dtype=np.float64)
    if np.any((x0 < 0) | (x0 > 1)):
        raise ContractViolation("initial plan lies outside [0, 1]^N")
    rep0 = run(x0)
    run.record(x0, rep0, rep0.total < SENTINEL)
    best_x, best = x0, rep0

    # bins empty in every class cannot change the selection
    active = np.flatnonzero(hist.bin_sizes().sum(axis=0) > 0)
    start, f_start = x0, rep0.total
    if cfg.survey:
        for p in _lattice(x0, active, cfg.max_evaluations // 2):
            if run.exhausted:
                break
            rep = run(p)
            ok = rep.total < SENTINEL and rep.total < f_start
            run.record(p, rep, ok)
            if ok:
                start, f_start = p, rep.total
    _compass(run, start, f_start, cfg, active)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.restarts):
        if run.exhausted:
            break
        start = _restart_point(rng, x0, active)
        rep = run(start)
        run.record(start, rep, rep.total < best_total(run))
        _compass(run, start, rep.total, cfg, active)

    for r in run.trace.records:
        if r.accepted and r.report.total < best.total:
            best_x, best = np.array(r.plan), r.report
    if not (best.total <= rep0.total):
        best_x, best = x0, rep0
    run.trace.best_plan = _key(best_x)
    run.trace.best_report = best
    return run.trace.best_plan, run.trace


def best_total(run):
    acc = [r.report.total for r in run.trace.records if r.accepted]
    return min(acc) if acc else SENTINEL


@dataclass(frozen=True)
class OuterConfig:
    alpha_range: tuple = (0.1, 10.0)
    beta_range: tuple = (1e-3, 1e-1)
    budget: int = 13
    metric: str = "auto"  # auto | auc | macro_accuracy

    def validate(self):
        for name in ("alpha_range", "beta_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi and math.isfinite(hi)):
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi < inf, got {(lo, hi)}")
        if self.budget < 1:
            raise ConfigError("outer budget must be >= 1")
        if self.metric not in ("auto", "auc", "macro_accuracy"):
            raise ConfigError(f"unknown validation metric {self.metric!r}")


@dataclass
class OuterCell:
    alpha: float
    beta: float
    plan: tuple
    report: EnergyReport
    metric: float
    db_size: int
    trace: OptimizationTrace


@dataclass
class OuterResult:
    alpha: float
    beta: float
    plan: tuple
    metric_name: str
    metric: float
    db_size: int
    cells: list

    @property
    def best(self):
        return next(c for c in self.cells if c.alpha == self.alpha and c.beta == self.beta)


def _axis(lo, hi, n):
    if lo == hi or n == 1:
        return [math.sqrt(lo * hi)] if lo != hi else [float(lo)]
    pts = [float(x) for x in np.exp(np.linspace(math.log(lo), math.log(hi), n))]
    pts[0], pts[-1] = float(lo), float(hi)  # exp(log(x)) need not round-trip
    return pts


def outer_grid(outer):
    """Coarse log-spaced grid followed by refinement points around the best
    coarse cell. Returns (coarse points, refine(best_alpha, best_beta))."""
    a_lo, a_hi = outer.alpha_range
    b_lo, b_hi = outer.beta_range
    g = 1
    while (g + 1) ** 2 <= outer.budget and g < 3:
        g += 1
    alphas = _axis(a_lo, a_hi, g if a_lo != a_hi else 1)
    betas = _axis(b_lo, b_hi, g if b_lo != b_hi else 1)
    coarse = [(a, b) for a in alphas for b in betas][: outer.budget]
    la = (math.log(a_hi) - math.log(a_lo)) / (2 * max(len(alphas) - 1, 1))
    lb = (math.log(b_hi) - math.log(b_lo)) / (2 * max(len(betas) - 1, 1))

    def refine(a, b):
        pts = []
        for da in (-1, 0, 1):
            for db_ in (-1, 0, 1):
                if da == db_ == 0:
                    continue
                na = math.exp(math.log(a) + da * la)
                nb = math.exp(math.log(b) + db_ * lb)
                if a_lo <= na <= a_hi and b_lo <= nb <= b_hi and (na, nb) not in pts:
                    pts.append((na, nb))
        return [p for p in pts if p not in coarse]

    return coarse, refine


def validation_metric(report, name):
    if name == "auc":
        return report.auc
    return report.macro_accuracy


def optimize_outer(db_train, db_validate, hist, k, pcfg, outer=None, inner=None, n_jobs=1,
                   evaluator=None, resume=None, on_cell=None, on_record=None):
    """Pick (alpha, beta) whose inner-loop plan maximises a validation metric.

    The metric is ROC AUC of the KNN vote share for binary problems and
    class-balanced accuracy otherwise. Ties go to the smaller database, then
    to the earlier grid cell. A plan with an empty database scores -inf.
    """
    outer = outer or OuterConfig()
    inner = inner or OptimizerConfig()
    outer.validate()
    n_classes = len(np.union1d(db_train.class_registry, db_validate.class_registry))
    name = outer.metric
    if name == "auto":
        name = "auc" if n_classes == 2 else "macro_accuracy"
    if name == "auc":
        if len(db_validate.class_registry) != 2 or n_classes != 2:
            raise ConfigError("AUC needs a validation set with exactly two classes")
    if db_validate.dimension != db_train.dimension:
        raise ConfigError("training and validation dimensions differ")
    evaluator = evaluator or EnergyEvaluator(db_train, hist, k, pcfg, n_jobs=n_jobs)
    resume = resume or []

    cells = []

    def run_cell(alpha, beta):
        tag = f"a{alpha!r}/b{beta!r}"
        prior = [r for r in resume if r.tag == tag]
        plan, trace = minimize_inner(db_train, hist, EnergyWeights(alpha, beta), k, pcfg, inner,
                                     evaluator=evaluator, resume=prior, tag=tag,
                                     on_record=on_record)
        ref = sparsify(db_train, hist, plan)
        if len(ref) == 0:
            score = -math.inf
        else:
            score = validation_metric(evaluate_classifier(ref, db_validate, k, n_jobs=n_jobs), name)
        cell = OuterCell(alpha, beta, plan, trace.best_report, score, len(ref), trace)
        cells.append(cell)
        if on_cell is not None:
            on_cell(cell)
        return cell

    def better(c, incumbent):
        if incumbent is None:
            return True
        if c.metric != incumbent.metric:
            return c.metric > incumbent.metric
        return c.db_size < incumbent.db_size

    coarse, refine = outer_grid(outer)
    best = None
    for a, b in coarse:
        c = run_cell(a, b)
        if better(c, best):
            best = c
    for a, b in refine(best.alpha, best.beta)[: outer.budget - len(coarse)]:
        c = run_cell(a, b)
        if better(c, best):
            best = c
    return OuterResult(best.alpha, best.beta, best.plan, name, best.metric, best.db_size, cells)
