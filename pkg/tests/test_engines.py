import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from probprog.engines import (DegenerateSweep, _Clock, log_mean_exp, rdb_accept, rdb_propose,
                              resample_multinomial, run_engine, run_pg, run_pimh, run_rdb,
                              run_smc, smc_sweep)
from probprog.interp import InterpState, compile_program, run_directive
from probprog.metrics import load_corpus
from probprog.rng import RngStream
from probprog.sexpr import parse

FLIP = parse("[assume x (flip 0.5)]\n[observe (normal (if x 1 0) 1) 1]\n[predict x]")
# P(x=true | y=1) = N(1;1,1) / (N(1;1,1) + N(1;0,1))
P_TRUE = 1.0 / (1.0 + math.exp(-0.5))


def flip_frequency(stream):
    hits = total = 0
    for sweep in stream:
        for particle in sweep.predicts:
            hits += particle[-1][1] is True
            total += 1
    return hits / total


def bernoulli_kl(p, q):
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


# --- resampling ----------------------------------------------------------------

def test_resample_degenerate_weights():
    picks = resample_multinomial(2, [(-math.inf, "a"), (0.0, "b")], RngStream(0))
    assert picks == [(0.0, "b"), (0.0, "b")]


def test_resample_keeps_original_weights():
    items = [(math.log(1.0), "a"), (math.log(3.0), "b")]
    picks = resample_multinomial(1000, items, RngStream(1))
    assert all((w, s) in items for w, s in picks)


def test_resample_proportion():
    picks = resample_multinomial(100_000, [(0.0, "a"), (math.log(3.0), "b")], RngStream(2))
    assert abs(sum(s == "b" for _, s in picks) / 100_000 - 0.75) < 0.01


def test_resample_uniform_chi_square():
    k, n = 8, 100_000
    picks = resample_multinomial(n, [(0.0, i) for i in range(k)], RngStream(3))
    counts = Counter(s for _, s in picks)
    chi2 = sum((counts[i] - n / k) ** 2 / (n / k) for i in range(k))
    assert chi2 < 24.3  # 0.999 quantile, 7 degrees of freedom


def test_resample_all_zero_raises():
    with pytest.raises(DegenerateSweep):
        resample_multinomial(3, [(-math.inf, 1), (-math.inf, 2)], RngStream(0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.floats(-50, 5), st.just(-math.inf)), min_size=1, max_size=12)
       .filter(lambda ws: max(ws) > -math.inf), st.integers(1, 50), st.integers(0, 2**32))
def test_resample_carries_origin_weights(ws, n, seed):
    items = [(w, i) for i, w in enumerate(ws)]
    picks = resample_multinomial(n, items, RngStream(seed))
    assert len(picks) == n
    assert sorted(w for w, _ in picks) == sorted(ws[i] for _, i in picks)
    assert all(ws[i] > -math.inf for _, i in picks)


def test_log_mean_exp():
    assert log_mean_exp([0.0, 0.0]) == 0.0
    assert log_mean_exp([math.log(1), math.log(3)]) == pytest.approx(math.log(2))
    assert log_mean_exp([-math.inf, -math.inf]) == -math.inf


# --- SMC -------------------------------------------------------------------------

def test_smc_without_observes():
    states, log_z, out = run_smc(parse("[assume a (normal 0 1)]\n[predict a]"), 10, seed=0)
    assert log_z == 0.0 and out.forks == 0 and len(states) == 10
    assert len({s.predicts[0][1] for s in states}) == 10


def test_smc_evidence_small_sample():
    prog = parse("[assume mu (normal 0 1)]\n[observe (normal mu 1) 0]")
    zs = [run_smc(prog, 100, seed=s)[1] for s in range(100)]
    assert sum(zs) / len(zs) == pytest.approx(-0.5 * math.log(2 * math.pi * 2), abs=0.02)


def test_smc_hmm_particles_hold_all_states():
    states, _, _ = run_smc(load_corpus("hmm"), 100, seed=0)
    assert len(states) == 100
    assert all(len(s.db) == 17 and len(s.predicts) == 17 for s in states)


def test_smc_degenerate_reports_observe_index():
    prog = parse("[assume a (normal 0 1)]\n[observe (normal a 1) 0]\n[observe (poisson 3) 0.5]")
    with pytest.raises(DegenerateSweep) as e:
        run_smc(prog, 5, seed=0)
    assert e.value.observe_index == 1


# --- particle Gibbs ----------------------------------------------------------------

def test_pg_needs_two_particles():
    with pytest.raises(ValueError):
        next(run_pg(FLIP, 1, 1))


def test_pg_minimal_particles():
    sweeps = list(run_pg(FLIP, 2, 5, seed=0))
    assert [s.simulations for s in sweeps] == [2, 4, 6, 8, 10]
    assert all(len(s.predicts) == 2 and len(s.records()) == 2 for s in sweeps)


@pytest.mark.parametrize("every", [False, True])
def test_pg_fork_counts(every):
    prog = load_corpus("hmm")
    L = 7
    n_directives = len(prog.directives)
    n_obs = sum(d.kind == "observe" for d in compile_program(prog))
    sweeps = list(run_pg(prog, L, 3, seed=1, fork_every_directive=every))
    # sweep 1 is plain SMC over L particles; later sweeps fork the L-1 fresh ones
    per = n_directives if every else n_obs
    assert sweeps[0].forks == L * per
    assert all(s.forks == (L - 1) * per for s in sweeps[1:])


def test_pg_retained_particle_survives():
    # fresh particles essentially never reach x = 20
    prog = parse("[assume x (poisson 4)]\n[observe (flip (if (= x 20) 1.0 0.0)) true]\n[predict x]")
    compiled = compile_program(prog)
    # a retained trace with x = 20, made by overwriting the stored draw
    retained = InterpState(RngStream(0))
    run_directive(compiled[0], retained)
    ((addr, entry),) = retained.db.entries.items()
    retained.db.entries[addr] = entry._replace(value=20.0)
    states, _ = smc_sweep(compiled, 10, 5, 2, _Clock(), retained=retained)
    assert all(s.globals["x"] == 20.0 for s in states)
    assert all(s.predicts == [("x", 20.0)] for s in states)


@pytest.mark.parametrize("every", [False, True])
def test_pg_flip_posterior(every):
    freq = flip_frequency(run_pg(FLIP, 100, 1000, seed=0, fork_every_directive=every))
    assert bernoulli_kl(freq, P_TRUE) < 0.01
    assert abs(freq - P_TRUE) < 0.01


# --- random database MH ---------------------------------------------------------------

def _forward(prog, seed=0):
    compiled = compile_program(prog)
    s = InterpState(RngStream(seed))
    for cd in compiled:
        run_directive(cd, s)
    return compiled, s


def test_rdb_single_choice():
    compiled, cur = _forward(FLIP)
    prop = rdb_propose(cur, compiled, RngStream(4))
    assert prop.n_old == 1 and prop.forced in cur.db


def test_rdb_marsaglia_cardinality():
    prog = load_corpus("marsaglia")
    for seed in range(2000):
        compiled, cur = _forward(prog, seed)
        if len(cur.db) == 6:
            break
    else:
        pytest.fail("no three-round trace found")
    rng = RngStream(8)
    chosen = Counter(rdb_propose(cur, compiled, rng).forced for _ in range(6000))
    assert set(chosen) == set(cur.db.entries)
    assert all(abs(c / 6000 - 1 / 6) < 0.03 for c in chosen.values())


def test_rdb_branching_shrinks_r_samples_inner_poisson():
    prog = load_corpus("branching")
    for seed in range(500):
        compiled, cur = _forward(prog, seed)
        if cur.globals["r"] > 4:
            break
    rng = RngStream(3)
    for _ in range(500):
        prop = rdb_propose(cur, compiled, rng)
        if prop.state is not None and prop.state.globals["r"] <= 4:
            assert prop.n_new == 2 and len(prop.state.db) == 2
            return
    pytest.fail("no proposal moved r below 5")


def test_rdb_identical_trace_accepts():
    # a choice whose resample cannot change anything: zero-variance flip
    compiled, cur = _forward(parse("[assume x (flip 1.0)]\n[observe (normal 0 1) 0.3]"))
    rng = RngStream(0)
    for _ in range(50):
        prop = rdb_propose(cur, compiled, rng)
        assert prop.log_alpha == pytest.approx(0.0, abs=1e-12)
        assert rdb_accept(prop, rng)


def test_rdb_minus_infinity_never_accepts():
    prog = parse("[assume x (flip 0.5)]\n[observe (flip (if x 1.0 0.0)) true]")
    compiled = compile_program(prog)
    for seed in range(100):
        compiled, cur = _forward(prog, seed)
        if cur.globals["x"] is True:
            break
    rng = RngStream(1)
    for _ in range(200):
        prop = rdb_propose(cur, compiled, rng)
        if prop.state is not None and prop.state.globals["x"] is False:
            assert prop.log_alpha == -math.inf
            assert not rdb_accept(prop, rng)


def test_rdb_zero_sweeps_is_forward_sample():
    (only,) = list(run_rdb(FLIP, 0, seed=3))
    assert only.simulations == 1 and only.sweep == 0


def test_rdb_simulation_count():
    sims = [s.simulations for s in run_rdb(FLIP, 5, seed=0)]
    assert sims == [1, 2, 3, 4, 5, 6]


def test_rdb_flip_posterior():
    assert abs(flip_frequency(run_rdb(FLIP, 100_000, seed=1)) - P_TRUE) < 0.01


def test_rdb_detailed_balance():
    compiled = compile_program(FLIP)
    states = {}
    for seed in range(50):
        _, s = _forward(FLIP, seed)
        states.setdefault(s.globals["x"], s)
    rng = RngStream(7)
    n = 500_000
    moves = {}
    for x, cur in states.items():
        k = 0
        for _ in range(n):
            prop = rdb_propose(cur, compiled, rng)
            if rdb_accept(prop, rng) and prop.state.globals["x"] != x:
                k += 1
        moves[x] = k / n
    pi = {True: P_TRUE, False: 1 - P_TRUE}
    lhs, rhs = pi[True] * moves[True], pi[False] * moves[False]
    se = math.sqrt(pi[True] ** 2 * moves[True] * (1 - moves[True]) / n
                   + pi[False] ** 2 * moves[False] * (1 - moves[False]) / n)
    assert abs(lhs - rhs) < 3 * se


# --- PIMH -------------------------------------------------------------------------------

def test_pimh_deterministic_program_always_accepts():
    prog = parse("[assume a (+ 1 2)]\n[observe (normal a 1) 3]\n[predict a]")
    sweeps = list(run_pimh(prog, 5, 20, seed=0))
    assert all(s.accepted for s in sweeps)
    assert all(s.predicts == [[("a", 3.0)]] for s in sweeps)


def test_pimh_large_population_accepts_often():
    sweeps = list(run_pimh(load_corpus("branching"), 1000, 20, seed=0))
    assert sum(s.accepted for s in sweeps) / len(sweeps) > 0.7


# --- reproducibility ----------------------------------------------------------------------

@pytest.mark.parametrize("engine", ["smc", "pg", "rdb", "pimh"])
@pytest.mark.parametrize("name", ["hmm", "dp-mixture", "branching", "marsaglia"])
def test_engines_bit_identical(engine, name):
    prog = load_corpus(name)

    def outputs():
        sweeps = 20 if engine == "rdb" else 3
        return [(s.sweep, s.simulations, s.applies, s.predicts, s.log_evidence, s.accepted)
                for s in run_engine(engine, prog, particles=10, sweeps=sweeps, seed=11)]

    assert outputs() == outputs()


def test_unknown_engine():
    with pytest.raises(ValueError):
        run_engine("gibbs", FLIP)
