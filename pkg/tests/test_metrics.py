import csv
import io
import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st
from statistics import NormalDist

from probprog.engines import SweepOutput, run_engine
from probprog.metrics import (EmpiricalDist, ExperimentConfig, KLMetric, KLStarMetric, KSMetric,
                              geometric_grid, kl_discrete, kl_star, ks_statistic, load_corpus,
                              metric_for, permute_lines, reverse_lines, run_experiment,
                              running_curve, write_curves_csv)
from probprog.rng import RngStream
from probprog.sexpr import Assume, Observe, parse, validate

PHI = NormalDist().cdf


# --- KL -------------------------------------------------------------------------

def test_kl_identical_is_zero():
    assert kl_discrete({0: .3, 1: .7}, {0: .3, 1: .7}) == 0.0


def test_kl_known_value():
    assert kl_discrete([.5, .5], [.25, .75]) == pytest.approx(0.14384, abs=1e-5)
    assert kl_discrete([.5, .5], [.25, .75]) == pytest.approx(
        .5 * math.log(2) + .5 * math.log(.5 / .75), abs=1e-15)


def test_kl_unsupported_mass_is_infinite():
    assert kl_discrete({0: .5, 1: .5}, {0: 1.0}) == math.inf


def test_kl_from_empirical():
    emp = EmpiricalDist()
    emp.extend([0, 0, 1, 1])
    assert kl_discrete(emp, {0: .25, 1: .75}) == pytest.approx(0.14384, abs=1e-5)
    assert emp.total == 4 and sum(emp.probabilities().values()) == 1.0


def test_kl_star_additivity():
    truths = [{0: .2, 1: .8}, {0: .5, 1: .5}, {0: .9, 1: .1}]
    emps = [dict(t) for t in truths]
    assert kl_star(emps, truths) == 0.0
    emps[1] = {0: .25, 1: .75}
    assert kl_star(emps, truths) == kl_discrete(emps[1], truths[1])


dists = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6).map(
    lambda ws: [w / sum(ws) for w in ws])


@settings(max_examples=300)
@given(dists, st.data())
def test_kl_nonnegative(p, data):
    q = data.draw(st.lists(st.floats(0.01, 1.0), min_size=len(p), max_size=len(p)))
    q = [w / sum(q) for w in q]
    assert kl_discrete(p, q) >= -1e-12
    assert kl_discrete(p, p) == pytest.approx(0.0, abs=1e-12)


# --- KS -------------------------------------------------------------------------

def test_ks_single_sample():
    assert ks_statistic([0.0], PHI) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("n", [1, 10, 1000])
def test_ks_quantile_samples(n):
    xs = [NormalDist().inv_cdf((i - 0.5) / n) for i in range(1, n + 1)]
    assert ks_statistic(xs, PHI) == pytest.approx(0.5 / n, abs=1e-9)


def test_ks_converges_for_true_samples():
    rng = RngStream(4)
    xs = [NormalDist().inv_cdf(rng.random()) for _ in range(10_000)]
    assert ks_statistic(xs, PHI) < 0.02


def test_ks_ties_and_vectorized_agree():
    xs = [0.0, 0.0, 1.0, -1.0, 1.0]
    assert ks_statistic(xs, PHI) == ks_statistic(xs, lambda v: [PHI(x) for x in v], vectorized=True)
    # a tie of two at 0 jumps by 2/5
    assert ks_statistic([0.0, 0.0], PHI) == pytest.approx(0.5)


def test_ks_needs_samples():
    with pytest.raises(ValueError):
        ks_statistic([], PHI)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-4, 4, allow_nan=False), min_size=1, max_size=40))
def test_ks_range_and_monotone_invariance(xs):
    d = ks_statistic(xs, PHI)
    assert 0.0 <= d <= 1.0
    ys = [math.exp(x) for x in xs]
    d_exp = ks_statistic(ys, lambda y: PHI(math.log(y)))
    assert d_exp == pytest.approx(d, abs=1e-12)


# --- curves -----------------------------------------------------------------------

def test_geometric_grid():
    g = geometric_grid(1.5)
    assert [next(g) for _ in range(8)] == [1, 2, 3, 4, 6, 8, 12, 18]


def test_running_curve_empty_stream():
    curve = running_curve(iter([]), KLMetric("r", {0.0: 1.0}))
    assert curve.points == [] and math.isnan(curve.final())


def test_running_curve_pg_first_point_at_particle_count():
    stream = run_engine("pg", load_corpus("branching"), particles=100, sweeps=3, seed=0)
    curve = running_curve(stream, metric_for("branching"))
    assert curve.points[0].simulations == 100
    sims = [p.simulations for p in curve.points]
    assert sims == sorted(set(sims))


def test_running_curve_rdb_point_per_sweep():
    stream = run_engine("rdb", load_corpus("branching"), sweeps=9, seed=0)
    curve = running_curve(stream, metric_for("branching"), grid=range(1, 11))
    assert [p.simulations for p in curve.points] == list(range(1, 11))
    applies = [p.apply_count for p in curve.points]
    assert applies == sorted(applies)


def test_running_curve_label_mismatch():
    stream = run_engine("rdb", load_corpus("branching"), sweeps=3, seed=0)
    with pytest.raises(ValueError, match="label"):
        running_curve(stream, KLMetric("nope", {0.0: 1.0}))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 60))
def test_running_curve_prefix_consistent(seed, cut):
    prog = load_corpus("hmm")
    full = list(run_engine("rdb", prog, sweeps=60, seed=seed))
    a = running_curve(iter(full), metric_for("hmm"))
    b = running_curve(iter(full[:cut]), metric_for("hmm"))
    assert b.points == a.points[:len(b.points)]


def test_running_curve_include_last():
    outs = [SweepOutput(s, s, s, 0, [[("r", 1.0)]]) for s in range(1, 6)]
    metric = KLMetric("r", {1.0: 1.0})
    curve = running_curve(iter(outs), metric, grid=[2], include_last=True)
    assert [p.simulations for p in curve.points] == [2, 5]
    assert curve.final() == 0.0


def test_kl_star_metric_max_l1():
    m = KLStarMetric({"a": {0.0: .5, 1.0: .5}, "b": {0.0: 1.0}})
    for v in (0.0, 0.0, 0.0, 1.0):
        m.update("a", v)
    m.update("b", 0.0)
    assert m.max_l1() == pytest.approx(0.5)
    assert m.value() == pytest.approx(kl_discrete({0.0: .75, 1.0: .25}, {0.0: .5, 1.0: .5}))


def test_ks_metric_mean_error():
    m = KSMetric("mu", PHI, mean=0.0)
    for v in (-1.0, 2.0):
        m.update("mu", v)
    assert m.mean_error() == pytest.approx(0.5)


# --- permutations ---------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["hmm", "dp-mixture", "branching", "marsaglia"]), st.integers(0, 2**32))
def test_permute_lines_valid_and_same_multiset(name, seed):
    prog = load_corpus(name)
    out = permute_lines(prog, RngStream(seed))
    assert validate(out) == []
    assert Counter(map(repr, out.directives)) == Counter(map(repr, prog.directives))
    assumes = [d for d in out.directives if isinstance(d, Assume)]
    assert assumes == [d for d in prog.directives if isinstance(d, Assume)]


def test_permute_lines_actually_shuffles():
    prog = load_corpus("hmm")
    orders = {tuple(map(repr, permute_lines(prog, RngStream(s)).directives)) for s in range(5)}
    assert len(orders) == 5


def test_permute_single_observe_is_identity():
    prog = parse("[assume a (normal 0 1)]\n[observe (normal a 1) 0]")
    assert permute_lines(prog, RngStream(0)).directives == prog.directives


def test_reverse_lines_hmm():
    prog = load_corpus("hmm")
    rev = reverse_lines(prog)
    assert validate(rev) == []
    obs = [d for d in prog.directives if isinstance(d, Observe)]
    assert [d for d in rev.directives if isinstance(d, Observe)] == obs[::-1]


def test_permuted_program_same_rdb_posterior():
    prog = load_corpus("branching")
    rev = parse("[assume fib (lambda (n) (cond ((= n 0) 1) ((= n 1) 1)"
                " (else (+ (fib (- n 1)) (fib (- n 2))))))]\n"
                "[assume r (poisson 4)]\n[predict r]\n"
                "[assume l (if (< 4 r) 6 (+ (fib (* 3 r)) (poisson 4)))]\n[observe (poisson l) 6]")

    def dist(p):
        c = Counter(s.predicts[0][0][1] for s in run_engine("rdb", p, sweeps=100_000, seed=2))
        n = sum(c.values())
        return {k: v / n for k, v in c.items()}

    a, b = dist(prog), dist(rev)
    assert kl_discrete(b, a) < 0.02


# --- experiments -------------------------------------------------------------------------

def test_run_experiment_single_cell():
    cfg = ExperimentConfig("branching", engines=(("rdb", None),), seeds=(0,), simulations=200)
    (summary,) = run_experiment(cfg)
    assert list(summary.curves) == [0] and not summary.errors
    curve = summary.curves[0]
    assert curve.points[-1].simulations == 200
    assert summary.bands()[-1][1] == summary.bands()[-1][2] == curve.final()


def test_run_experiment_particle_ladder_and_bands():
    cfg = ExperimentConfig("branching", seeds=(0, 1, 2), simulations=200, particle_ladder=(2, 5))
    summaries = run_experiment(cfg)
    assert [s.engine for s in summaries] == ["pg-2", "pg-5"]
    for s in summaries:
        for sims, q25, q50, q75 in s.bands():
            assert q25 <= q50 <= q75


def test_run_experiment_permutations():
    cfg = ExperimentConfig("hmm", engines=(("rdb", None),), seeds=(0,), simulations=50,
                           permutations=3)
    names = [s.program for s in run_experiment(cfg)]
    assert names == ["hmm#identity", "hmm#reversed", "hmm#perm2"]


def test_run_experiment_isolates_failing_cell():
    # L=1 is invalid for particle Gibbs, the rdb cells still run
    cfg = ExperimentConfig("branching", engines=(("pg", 1), ("rdb", None)), seeds=(0,),
                           simulations=20)
    bad, good = run_experiment(cfg)
    assert 0 in bad.errors and not bad.curves
    assert 0 in good.curves


def test_write_curves_csv():
    cfg = ExperimentConfig("branching", engines=(("rdb", None),), seeds=(0,), simulations=30)
    buf = io.StringIO()
    write_curves_csv(buf, run_experiment(cfg), wall_clock=False)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["engine", "program", "seed", "simulations", "wall_clock_ns",
                       "apply_count", "metric_name", "value"]
    assert all(r[0] == "rdb" and r[4] == "0" and r[6] == "KL" for r in rows[1:])
