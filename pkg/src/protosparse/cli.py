"""Command-line driver: ``protosparse <command> --config run.ini``.

Exit codes: 0 success, 2 usage/configuration error, 3 data/format error,
4 internal invariant violation.
"""
import argparse
import configparser
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import datagen
from .energy import EnergyEvaluator, EnergyWeights, PerturbationConfig, evaluate
from .errors import (
    ConfigError,
    ContractViolation,
    EmptyInputError,
    EmptySetError,
    FormatError,
    InsufficientDataError,
    LoadError,
)
from .metrics import MetricReport, evaluate_classifier
from .optimizer import OptimizerConfig, OuterConfig, TraceRecord, minimize_inner, optimize_outer
from .ranking import build_histogram, format_histogram, rank_scores, write_ranks
from .sparsifier import SparsificationPlan, reduction_report, sparsify
from .store import read_database, save, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

DEFAULTS = {
    "run": {"seed": "0", "jobs": "1", "output": "out"},
    "data": {"metric": "l2", "split": "", "generator": "", "input": "",
             "train": "", "validate": "", "test": ""},
    "rays": {"length": "32", "boundaries": "12,20", "flip": "0.05", "samples_per_class": "1500"},
    "blobs": {"means": "0,0;4,0", "stds": "1,1", "samples_per_class": "500"},
    "ranking": {"k": "10", "bins": "5"},
    "energy": {"epsilon": "1.0", "dims": "all", "alpha": "1.0", "beta": "0.01", "plan": ""},
    "optimizer": {"max_evaluations": "100", "initial_step": "0.25", "min_step": "0.001",
                  "survey": "true", "restarts": "0"},
    "outer": {"enabled": "false", "alpha_range": "0.1,10", "beta_range": "0.001,0.1",
              "budget": "13", "metric": "auto"},
}


class RunConfig:
    """Validated view over the INI configuration."""

    def __init__(self, parser, base_dir):
        self.p = parser
        self.base = Path(base_dir)
        try:
            self.seed = parser.getint("run", "seed")
            self.jobs = parser.getint("run", "jobs")
            self.k = parser.getint("ranking", "k")
            self.bins = parser.getint("ranking", "bins")
        except ValueError as e:
            raise ConfigError(str(e)) from None
        self.output = self.path(parser.get("run", "output"))
        seeds = np.random.SeedSequence(self.seed).spawn(4)
        self.gen_seed, self.split_seed, self.dims_seed, self.opt_seed = (
            int(s.generate_state(1)[0]) for s in seeds)
        if self.k < 1 or self.bins < 1:
            raise ConfigError("ranking.k and ranking.bins must be positive")

    def get(self, section, key):
        return self.p.get(section, key).strip()

    def number(self, section, key, kind=float):
        try:
            return kind(self.get(section, key))
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected {kind.__name__}") from None

    def floats(self, section, key):
        raw = self.get(section, key)
        try:
            return tuple(float(x) for x in raw.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected comma-separated numbers") from None

    def flag(self, section, key):
        try:
            return self.p.getboolean(section, key)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def path(self, raw):
        p = Path(raw)
        return p if p.is_absolute() else self.base / p

    def existing(self, section, key):
        raw = self.get(section, key)
        if not raw:
            return None
        p = self.path(raw)
        if not p.exists():
            raise ConfigError(f"{section}.{key}: no such file {p}")
        return p

    @property
    def pcfg(self):
        dims = self.get("energy", "dims")
        d = None if dims in ("", "all") else self.number("energy", "dims", int)
        try:
            return PerturbationConfig(self.number("energy", "epsilon"), d, self.dims_seed)
        except ContractViolation as e:
            raise ConfigError(str(e)) from None

    @property
    def weights(self):
        try:
            return EnergyWeights(self.number("energy", "alpha"), self.number("energy", "beta"))
        except ContractViolation as e:
            raise ConfigError(str(e)) from None

    @property
    def optimizer(self):
        return OptimizerConfig(
            max_evaluations=self.number("optimizer", "max_evaluations", int),
            initial_step=self.number("optimizer", "initial_step"),
            min_step=self.number("optimizer", "min_step"),
            seed=self.opt_seed,
            survey=self.flag("optimizer", "survey"),
            restarts=self.number("optimizer", "restarts", int),
        )

    @property
    def outer(self):
        a, b = self.floats("outer", "alpha_range"), self.floats("outer", "beta_range")
        if len(a) != 2 or len(b) != 2:
            raise ConfigError("outer ranges need exactly two endpoints")
        cfg = OuterConfig(a, b, self.number("outer", "budget", int), self.get("outer", "metric"))
        cfg.validate()
        return cfg

    def split_fractions(self):
        fr = self.floats("data", "split")
        if not fr:
            return None
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ConfigError("data.split needs three non-negative fractions summing to 1")
        return fr

    def generate(self):
        kind = self.get("data", "generator")
        if kind == "rays":
            spec = datagen.RaySpec(
                length=self.number("rays", "length", int),
                boundaries=tuple(int(x) for x in self.floats("rays", "boundaries")),
                flip=self.number("rays", "flip"),
                samples_per_class=self.number("rays", "samples_per_class", int),
                seed=self.gen_seed,
            )
            return datagen.gen_rays(spec)
        if kind == "blobs":
            means = tuple(tuple(float(v) for v in m.split(","))
                          for m in self.get("blobs", "means").split(";"))
            spec = datagen.BlobSpec(means, self.floats("blobs", "stds"),
                                    self.number("blobs", "samples_per_class", int), self.gen_seed)
            return datagen.gen_blobs(spec)
        raise ConfigError(f"data.generator must be 'rays' or 'blobs', got {kind!r}")

    def datasets(self):
        """(train, validate, test); the latter two may be None."""
        metric = self.get("data", "metric")
        train = self.existing("data", "train")
        if train is not None:
            out = [read_database(train, metric)]
            for key in ("validate", "test"):
                p = self.existing("data", key)
                out.append(read_database(p, metric) if p else None)
            return tuple(out)
        src = self.existing("data", "input")
        if src is not None:
            db = read_database(src, metric)
        elif self.get("data", "generator"):
            db = self.generate()
        else:
            raise ConfigError("set data.train, data.input or data.generator")
        fr = self.split_fractions()
        if fr is None:
            return db, None, None
        return tuple(p if len(p) else None for p in datagen.split(db, fr, self.split_seed))


def load_config(path, overrides=()):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_dict(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(str(e)) from None
        base = path.parent
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)
    return RunConfig(parser, base)


def _header(cfg):
    return f"seed={cfg.seed}"


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_plan(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read plan {path}: {e}") from None
    for line in text.splitlines():
        if line.startswith("fractions="):
            try:
                return SparsificationPlan(tuple(float(x) for x in line[10:].split(",")))
            except (ValueError, ContractViolation) as e:
                raise ConfigError(f"bad plan in {path}: {e}") from None
    raise ConfigError(f"{path} has no fractions= line")


def _plan_text(cfg, plan, extra=()):
    lines = [f"# {_header(cfg)}", "fractions=" + ",".join(repr(f) for f in plan.fractions),
             f"rounding={plan.rounding}"]
    lines += [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in extra]
    return "\n".join(lines) + "\n"


def _ranked(cfg, train):
    scores = rank_scores(train, cfg.k, cfg.jobs)
    return build_histogram(train, scores, cfg.bins)


def _plan_from(cfg, args):
    if getattr(args, "plan", None):
        return read_plan(args.plan)
    fr = cfg.floats("energy", "plan")
    if fr:
        try:
            return SparsificationPlan(fr)
        except ContractViolation as e:
            raise ConfigError(str(e)) from None
    default = cfg.output / "plan.txt"
    if default.exists():
        return read_plan(default)
    raise ConfigError("no plan: pass --plan, set energy.plan, or run optimize first")


def cmd_gen(cfg, args):
    db = cfg.generate()
    out = _mk(cfg.output)
    write_csv(db, out / "dataset.csv", _header(cfg))
    fr = cfg.split_fractions()
    if fr:
        for name, part in zip(("train", "validate", "test"), datagen.split(db, fr, cfg.split_seed)):
            write_csv(part, out / f"{name}.csv", _header(cfg))
    print(f"generated {len(db)} prototypes (J={db.dimension}) in {out}")


def _mk(p):
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_ingest(cfg, args):
    src = cfg.existing("data", "input") or cfg.existing("data", "train")
    if src is None:
        raise ConfigError("ingest needs data.input")
    db = read_database(src, cfg.get("data", "metric"))
    save(db, _mk(cfg.output) / "prototypes.pdb")
    print(f"M={len(db)} J={db.dimension} classes={','.join(map(str, db.class_registry.tolist()))}")


def cmd_rank(cfg, args):
    train, _, _ = cfg.datasets()
    hist = _ranked(cfg, train)
    _mk(cfg.output)
    write_ranks(train, hist, cfg.output / "ranks.csv", comment=_header(cfg))
    _write(cfg.output / "histogram.txt", f"# {_header(cfg)} k={cfg.k}\n" + format_histogram(hist))
    print(format_histogram(hist), end="")


def cmd_sparsify(cfg, args):
    train, _, _ = cfg.datasets()
    hist = _ranked(cfg, train)
    plan = _plan_from(cfg, args)
    if len(plan) != hist.num_bins:
        raise ConfigError(f"plan has {len(plan)} fractions but ranking.bins={hist.num_bins}")
    s = sparsify(train, hist, plan)
    _mk(cfg.output)
    write_csv(s.database(), cfg.output / "sparse.csv", _header(cfg))
    rep = reduction_report(s)
    _write(cfg.output / "reduction.txt", f"# {_header(cfg)}\n" + rep.format())
    print(rep.format(), end="")


def cmd_optimize(cfg, args):
    train, validate, _ = cfg.datasets()
    hist = _ranked(cfg, train)
    pcfg = cfg.pcfg
    inner = cfg.optimizer
    out = _mk(cfg.output)
    trace_path = out / "trace.log"
    resume = []
    if args.resume and trace_path.exists():
        resume = [TraceRecord.from_line(line) for line in
                  trace_path.read_text(encoding="utf-8").splitlines()
                  if line and not line.startswith("#")]
    evaluator = EnergyEvaluator(train, hist, cfg.k, pcfg, n_jobs=cfg.jobs)

    with open(trace_path, "w", encoding="utf-8", newline="\n") as trace:
        trace.write(f"# {_header(cfg)}\n")

        def on_record(rec):
            trace.write(rec.to_line() + "\n")
            trace.flush()

        summary = []
        if cfg.flag("outer", "enabled"):
            if validate is None:
                raise ConfigError("outer optimisation needs a validation set")
            res = optimize_outer(train, validate, hist, cfg.k, pcfg, cfg.outer, inner,
                                 n_jobs=cfg.jobs, evaluator=evaluator, resume=resume,
                                 on_record=on_record)
            plan, weights = res.plan, EnergyWeights(res.alpha, res.beta)
            exhausted = len(res.best.trace) >= inner.max_evaluations
            summary += [("alpha", res.alpha), ("beta", res.beta),
                        (f"validation_{res.metric_name}", res.metric)]
        else:
            weights = cfg.weights
            plan, trace_obj = minimize_inner(train, hist, weights, cfg.k, pcfg, inner,
                                             evaluator=evaluator, resume=resume,
                                             on_record=on_record)
            exhausted = len(trace_obj) >= inner.max_evaluations

    plan = SparsificationPlan(plan)
    report = evaluate(train, hist, plan, weights, cfg.k, pcfg, n_jobs=cfg.jobs)
    s = sparsify(train, hist, plan)
    red = reduction_report(s)
    _write(out / "plan.txt", _plan_text(cfg, plan, [("alpha", weights.alpha), ("beta", weights.beta)]))
    _write(out / "energy.txt", f"# {_header(cfg)}\n" + report.to_text())
    _write(out / "reduction.txt", f"# {_header(cfg)}\n" + red.format())
    summary += [("db_size", len(s)), ("original_size", len(train)),
                ("reduction", red.reduction), ("budget_exhausted", int(exhausted))]
    text = "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in summary)
    _write(out / "summary.txt", f"# {_header(cfg)}\n" + text)
    print(text, end="")


def cmd_evaluate(cfg, args):
    train, _, test = cfg.datasets()
    if test is None:
        raise ConfigError("evaluate needs a test set (data.test or data.split)")
    hist = _ranked(cfg, train)
    plan = _plan_from(cfg, args)
    if len(plan) != hist.num_bins:
        raise ConfigError(f"plan has {len(plan)} fractions but ranking.bins={hist.num_bins}")
    s = sparsify(train, hist, plan)
    if len(s) == 0:
        raise EmptySetError("the plan retains no prototypes; refusing to evaluate")
    full = evaluate_classifier(train, test, cfg.k, cfg.jobs)
    sparse = evaluate_classifier(s, test, cfg.k, cfg.jobs)
    text = format_comparison(full, sparse)
    body = (f"# {_header(cfg)}\n" + text + "\n[full]\n" + full.to_text()
            + "\n[sparsified]\n" + sparse.to_text())
    _write(_mk(cfg.output) / "metrics.txt", body)
    print(text, end="")


def format_comparison(full, sparse):
    keys = ["sensitivity", "specificity", "accuracy", "macro_accuracy", "auc", "db_size"]
    fd, sd = full.as_dict(), sparse.as_dict()
    lines = [f"{'metric':<16}{'full':>14}{'sparsified':>14}"]
    for k in keys:
        lines.append(f"{k:<16}{_cell(fd[k]):>14}{_cell(sd[k]):>14}")
    lines.append(MetricReport.summary_header())
    lines.append(full.summary_row())
    lines.append(sparse.summary_row())
    return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return str(v)


def cmd_report(cfg, args):
    out = cfg.output
    if not out.exists():
        raise ConfigError(f"output directory {out} does not exist")
    shown = False
    for name in ("summary.txt", "plan.txt", "reduction.txt", "energy.txt", "histogram.txt",
                 "metrics.txt"):
        p = out / name
        if p.exists():
            shown = True
            print(f"== {name}")
            print(p.read_text(encoding="utf-8"), end="")
    if not shown:
        raise ConfigError(f"no artifacts in {out}")


COMMANDS = {
    "ingest": cmd_ingest,
    "gen": cmd_gen,
    "rank": cmd_rank,
    "sparsify": cmd_sparsify,
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="protosparse", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--output", "-o", help="output directory (overrides run.output)")
        if name in ("sparsify", "evaluate"):
            p.add_argument("--plan", help="plan file written by optimize")
        if name == "optimize":
            p.add_argument("--resume", action="store_true",
                           help="replay evaluations already in trace.log")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        overrides = list(args.set)
        if args.output:
            overrides.append(f"run.output={os.path.abspath(args.output)}")
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, ContractViolation) as e:
        print(f"protosparse: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, EmptyInputError, LoadError, EmptySetError, InsufficientDataError) as e:
        print(f"protosparse: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"protosparse: I/O error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        print(f"protosparse: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
