"""Empirical distributions of predict streams and convergence curves.

A curve tracks one metric (KL, KL* or KS) of the running empirical
distribution against an exact answer, sampled on a geometric grid of
cumulative simulations together with the wall-clock time and apply count at
that point.
"""

from __future__ import annotations

import csv
import math
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from .engines import run_engine
from .oracles import gaussian_posterior, load_golden, read_golden
from .rng import RngStream
from .sexpr import Assume, Program, free_symbols, load_program, parse, validate

__all__ = [
    "EmpiricalDist", "ConvergenceCurve", "CurvePoint", "RunSummary", "ExperimentConfig",
    "kl_discrete", "kl_star", "ks_statistic", "geometric_grid", "running_curve",
    "KLMetric", "KLStarMetric", "KSMetric", "metric_for", "permute_lines", "reverse_lines",
    "corpus_path", "load_corpus", "run_experiment", "write_curves_csv", "PARTICLE_LADDER",
]

PARTICLE_LADDER = (2, 5, 10, 20, 50, 100, 200, 500)


class EmpiricalDist:
    """Running empirical distribution; discrete counts or continuous samples."""

    def __init__(self, continuous: bool = False):
        self.continuous = continuous
        self.counts: Counter = Counter()
        self.samples: list = []
        self.total = 0

    def add(self, value) -> None:
        self.total += 1
        if self.continuous:
            self.samples.append(float(value))
        else:
            self.counts[value] += 1

    def extend(self, values) -> None:
        for v in values:
            self.add(v)

    def prob(self, value) -> float:
        return self.counts[value] / self.total if self.total else 0.0

    def probabilities(self) -> dict:
        t = self.total
        return {v: c / t for v, c in self.counts.items()}

    def sorted_samples(self) -> list:
        return sorted(self.samples)


def _as_probs(d) -> dict:
    if isinstance(d, EmpiricalDist):
        return d.probabilities()
    if isinstance(d, dict):
        return d
    return dict(enumerate(d))


def kl_discrete(emp, truth) -> float:
    """D(emp || truth); +inf when emp puts mass where truth has none."""
    p = _as_probs(emp)
    q = _as_probs(truth)
    terms = []
    for v, pv in p.items():
        if pv <= 0.0:
            continue
        qv = q.get(v, 0.0)
        if qv <= 0.0:
            return math.inf
        terms.append(pv * math.log(pv / qv))
    return math.fsum(terms)


def kl_star(emps, truths) -> float:
    """Sum of per-timestep KL divergences; the sequences are aligned."""
    emps, truths = list(emps), list(truths)
    if len(emps) != len(truths):
        raise ValueError("need one empirical distribution per timestep")
    return math.fsum(kl_discrete(e, t) for e, t in zip(emps, truths))


def ks_statistic(samples, cdf, vectorized: bool = False) -> float:
    """sup |F_emp - F|, checked on both sides of every jump of F_emp.

    With ``vectorized`` the cdf is called once on the sorted distinct values.
    """
    xs = sorted(samples)
    n = len(xs)
    if n == 0:
        raise ValueError("KS statistic needs at least one sample")
    # runs of tied values: (value, first index, one past last index)
    runs = []
    i = 0
    while i < n:
        x = xs[i]
        j = i
        while j < n and xs[j] == x:
            j += 1
        runs.append((x, i, j))
        i = j
    if vectorized:
        fs = [float(f) for f in cdf([x for x, _, _ in runs])]
    else:
        fs = [cdf(x) for x, _, _ in runs]
    d = 0.0
    for (x, i, j), f in zip(runs, fs):
        d = max(d, abs(f - i / n), abs(j / n - f))
    return d


# --- metrics over predict streams ------------------------------------------

class KLMetric:
    name = "KL"

    def __init__(self, label: str, truth: dict):
        self.label = label
        self.truth = truth
        self.emp = EmpiricalDist()

    def update(self, label, value):
        if label == self.label:
            self.emp.add(value)

    def labels(self):
        return {self.label}

    def value(self) -> float:
        return kl_discrete(self.emp, self.truth)


class KLStarMetric:
    name = "KL*"

    def __init__(self, truths: dict):
        self.truths = truths
        self.emps = {label: EmpiricalDist() for label in truths}

    def update(self, label, value):
        emp = self.emps.get(label)
        if emp is not None:
            emp.add(value)

    def labels(self):
        return set(self.truths)

    def value(self) -> float:
        return kl_star([self.emps[k] for k in self.truths], self.truths.values())

    def max_l1(self) -> float:
        """Largest per-state L1 distance between empirical and exact marginals."""
        worst = 0.0
        for label, truth in self.truths.items():
            p = self.emps[label].probabilities()
            support = set(truth) | set(p)
            worst = max(worst, math.fsum(abs(p.get(v, 0.0) - truth.get(v, 0.0)) for v in support))
        return worst


class KSMetric:
    name = "KS"

    def __init__(self, label: str, cdf, mean: float | None = None, vectorized: bool = False):
        self.label = label
        self.cdf = cdf
        self.vectorized = vectorized
        self.mean = mean
        self.emp = EmpiricalDist(continuous=True)

    def update(self, label, value):
        if label == self.label:
            self.emp.add(value)

    def labels(self):
        return {self.label}

    def value(self) -> float:
        return ks_statistic(self.emp.samples, self.cdf, vectorized=self.vectorized)

    def mean_error(self) -> float:
        return abs(statistics.fmean(self.emp.samples) - self.mean)


def metric_for(program_name: str, golden_dir=None):
    """The conditional measure used for one of the bundled programs.

    ``golden_dir`` overrides the packaged oracle tables.
    """
    def golden(name):
        if golden_dir is None:
            return load_golden(name)
        return read_golden(Path(golden_dir) / f"{name}.csv")

    if program_name == "hmm":
        return KLStarMetric({k: v for k, v in golden("hmm").items() if k != "trailing"})
    if program_name == "dp-mixture":
        return KLMetric("(K)", golden("dp-mixture")["(K)"])
    if program_name == "branching":
        return KLMetric("r", golden("branching")["r"])
    if program_name == "marsaglia":
        post = gaussian_posterior()
        return KSMetric("mu", post.cdf_many, post.mean, vectorized=True)
    raise ValueError(f"no oracle for program {program_name!r}")


# --- curves ----------------------------------------------------------------

class CurvePoint(NamedTuple):
    simulations: int
    wall_clock_ns: int
    apply_count: int
    value: float


@dataclass
class ConvergenceCurve:
    metric_name: str
    points: list = field(default_factory=list)

    def final(self) -> float:
        return self.points[-1].value if self.points else math.nan


def geometric_grid(ratio: float = 1.5, start: int = 1):
    """Endless increasing integer grid, each point ~ratio times the previous."""
    x = float(start)
    last = 0
    while True:
        v = math.ceil(x)
        if v > last:
            yield v
            last = v
        x *= ratio


def running_curve(stream, metric, grid=None, include_last: bool = False) -> ConvergenceCurve:
    """Evaluate ``metric`` on the running predict distribution along ``grid``.

    A point is taken at the first sweep whose cumulative simulation count
    reaches the next grid value; grid values passed within one sweep collapse
    into that single point.
    """
    grid = iter(geometric_grid() if grid is None else grid)
    curve = ConvergenceCurve(metric.name)
    wanted = metric.labels()
    target = next(grid, None)
    out = None
    taken = False
    first = True
    for out in stream:
        if first:
            seen = {label for particle in out.predicts for label, _ in particle}
            missing = set(wanted) - seen
            if missing:
                raise ValueError(f"predict stream has no label(s) {sorted(missing)} "
                                 f"for the {metric.name} metric")
            first = False
        for particle in out.predicts:
            for label, value in particle:
                if label in wanted:
                    metric.update(label, value)
        taken = False
        if target is not None and out.simulations >= target:
            curve.points.append(CurvePoint(out.simulations, out.t_ns, out.applies, metric.value()))
            taken = True
            while target is not None and target <= out.simulations:
                target = next(grid, None)
    if include_last and out is not None and not taken:
        curve.points.append(CurvePoint(out.simulations, out.t_ns, out.applies, metric.value()))
    return curve


# --- program line permutations ----------------------------------------------

def _dependencies(program: Program):
    assumed = {d.symbol: i for i, d in enumerate(program.directives) if isinstance(d, Assume)}
    deps = []
    for d in program.directives:
        names = free_symbols(d.expr)
        if isinstance(d, Assume):
            names.discard(d.symbol)
        deps.append({assumed[n] for n in names if n in assumed})
    return deps


def _rebuild(program: Program, order, tag: str) -> Program:
    return Program([program.directives[i] for i in order], f"{program.source_name}{tag}")


def permute_lines(program: Program, rng: RngStream) -> Program:
    """Random reordering of directives that keeps the program valid.

    Observes and predicts are shuffled uniformly among themselves. Assumes keep
    their relative order. The two sequences are merged by repeatedly taking
    the next item of a randomly chosen sequence, where a directive can only be
    taken once every assume it references has been placed.
    """
    ds = program.directives
    deps = _dependencies(program)
    assumes = [i for i, d in enumerate(ds) if isinstance(d, Assume)]
    others = [i for i, d in enumerate(ds) if not isinstance(d, Assume)]
    for i in range(len(others) - 1, 0, -1):
        k = rng.randbelow(i + 1)
        others[i], others[k] = others[k], others[i]
    placed: set = set()
    order = []
    a = o = 0
    while a < len(assumes) or o < len(others):
        options = []
        if a < len(assumes):
            options.append("a")
        if o < len(others) and deps[others[o]] <= placed:
            options.append("o")
        pick = options[rng.randbelow(len(options))]
        if pick == "a":
            i = assumes[a]
            a += 1
        else:
            i = others[o]
            o += 1
        placed.add(i)
        order.append(i)
    out = _rebuild(program, order, "")
    assert not validate(out)
    return out


def reverse_lines(program: Program) -> Program:
    """Assumes first in original order, then observes and predicts reversed."""
    ds = program.directives
    assumes = [i for i, d in enumerate(ds) if isinstance(d, Assume)]
    others = [i for i, d in enumerate(ds) if not isinstance(d, Assume)]
    return _rebuild(program, assumes + others[::-1], "")


# --- corpus and experiments -------------------------------------------------

def corpus_path(name: str) -> Path:
    return Path(str(resources.files("probprog") / "programs" / f"{name}.ang"))


def load_corpus(name: str) -> Program:
    return load_program(corpus_path(name))


@dataclass
class RunSummary:
    engine: str
    program: str
    particles: int | None
    curves: dict = field(default_factory=dict)    # seed -> ConvergenceCurve
    errors: dict = field(default_factory=dict)    # seed -> message

    def bands(self):
        """(simulations, q25, median, q75) at every grid point all seeds share."""
        curves = list(self.curves.values())
        if not curves:
            return []
        shared = set.intersection(*({p.simulations for p in c.points} for c in curves))
        out = []
        for sims in sorted(shared):
            vals = [next(p.value for p in c.points if p.simulations == sims) for c in curves]
            if len(vals) == 1:
                q = (vals[0],) * 3
            else:
                q = statistics.quantiles(vals, n=4, method="inclusive")
            out.append((sims, q[0], q[1], q[2]))
        return out

    def final_values(self) -> list:
        return [c.final() for c in self.curves.values()]


@dataclass
class ExperimentConfig:
    program: str                         # bundled corpus name
    engines: tuple = (("pg", 100), ("rdb", None))
    seeds: tuple = tuple(range(25))
    simulations: int = 10_000
    permutations: int = 0                # >0: identity, reversal, then random orders
    particle_ladder: tuple | None = None # replaces engines with pg over this ladder
    grid_ratio: float = 1.5
    workers: int = 1


def _engine_label(engine, particles):
    return engine if particles is None else f"{engine}-{particles}"


def _run_cell(source: str, source_name: str, program_name: str, engine: str,
              particles, seed: int, simulations: int, ratio: float):
    program = parse(source, source_name)
    metric = metric_for(program_name)
    if engine == "rdb":
        stream = run_engine("rdb", program, sweeps=max(simulations - 1, 0), seed=seed)
    else:
        stream = run_engine(engine, program, particles=particles,
                            sweeps=max(simulations // particles, 1), seed=seed)
    return running_curve(stream, metric, geometric_grid(ratio), include_last=True)


def _variants(cfg: ExperimentConfig):
    base = load_corpus(cfg.program)
    if not cfg.permutations:
        return [(cfg.program, base)]
    out = [(f"{cfg.program}#identity", base), (f"{cfg.program}#reversed", reverse_lines(base))]
    rng = RngStream(0x5eed, len(base.directives))
    for i in range(2, cfg.permutations):
        out.append((f"{cfg.program}#perm{i}", permute_lines(base, rng)))
    return out[:cfg.permutations]


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run every (program variant, engine, seed) cell; one RunSummary per
    variant and engine. A failing cell is recorded and the rest continue."""
    engines = cfg.engines
    if cfg.particle_ladder:
        engines = tuple(("pg", L) for L in cfg.particle_ladder)
    jobs = []
    summaries = {}
    for name, program in _variants(cfg):
        source = program.to_source()
        for engine, L in engines:
            key = (name, engine, L)
            summaries[key] = RunSummary(_engine_label(engine, L), name, L)
            for seed in cfg.seeds:
                jobs.append((key, seed, (source, name, cfg.program, engine, L, seed,
                                         cfg.simulations, cfg.grid_ratio)))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [(key, seed, pool.submit(_run_cell, *args)) for key, seed, args in jobs]
            results = []
            for key, seed, fut in futures:
                try:
                    results.append((key, seed, fut.result(), None))
                except Exception as exc:  # one bad cell must not sink the matrix
                    results.append((key, seed, None, f"{type(exc).__name__}: {exc}"))
    else:
        results = []
        for key, seed, args in jobs:
            try:
                results.append((key, seed, _run_cell(*args), None))
            except Exception as exc:
                results.append((key, seed, None, f"{type(exc).__name__}: {exc}"))
    for key, seed, curve, err in results:
        if err is None:
            summaries[key].curves[seed] = curve
        else:
            summaries[key].errors[seed] = err
    return list(summaries.values())


CSV_COLUMNS = ("engine", "program", "seed", "simulations", "wall_clock_ns",
               "apply_count", "metric_name", "value")


def write_curves_csv(path_or_file, summaries, wall_clock: bool = True) -> None:
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in summaries:
            for seed, curve in s.curves.items():
                for p in curve.points:
                    w.writerow([s.engine, s.program, seed, p.simulations,
                                p.wall_clock_ns if wall_clock else 0,
                                p.apply_count, curve.metric_name, repr(float(p.value))])
    finally:
        if own:
            fh.close()
