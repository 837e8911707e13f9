"""Posterior samplers over execution traces.

Four engines share the interpreter: sequential Monte Carlo, particle Gibbs
(conditional SMC with a retained trace), single-site Metropolis-Hastings on
the random database, and particle independent Metropolis-Hastings.

Every engine yields one ``SweepOutput`` per sweep. Predict values are taken
from the particles at the end of the sweep, so a predict that appears before
some observes still reports the fully conditioned value.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .interp import InterpState, compile_program, fork, run_directive
from .rng import RngStream
from .trace import RandomDB, ZeroProbability

__all__ = [
    "DegenerateSweep", "SweepOutput", "Particle",
    "resample_multinomial", "log_mean_exp", "run_smc", "smc_sweep", "run_pg",
    "rdb_propose", "rdb_accept", "run_rdb", "run_pimh", "run_engine", "ENGINES",
]

# sub-stream tags under the run seed
_CONTROL, _PARTICLE, _RDB = 0, 1, 2


class DegenerateSweep(RuntimeError):
    """Every particle has zero weight at some observe."""

    def __init__(self, observe_index: int, sweep: int = 0):
        super().__init__(f"all particle weights are zero at observe {observe_index} (sweep {sweep})")
        self.observe_index = observe_index
        self.sweep = sweep


@dataclass
class Particle:
    state: InterpState
    log_weight: float = 0.0
    retained: bool = False


@dataclass
class SweepOutput:
    sweep: int
    simulations: int          # cumulative complete program interpretations
    applies: int              # cumulative procedure applications
    t_ns: int                 # cumulative engine wall-clock time
    predicts: list            # one list of (label, value) per emitting particle
    log_evidence: float | None = None
    accepted: bool | None = None
    forks: int = 0            # fork calls made during this sweep

    def records(self):
        """Flatten into (sweep, sim, label, value, applies, t_ns) tuples."""
        return [(self.sweep, self.simulations, label, value, self.applies, self.t_ns)
                for particle in self.predicts for label, value in particle]


@dataclass
class _Clock:
    applies: int = 0
    t_ns: int = 0
    forks: int = 0
    _start: int = field(default=0, repr=False)

    def start(self):
        self._start = time.monotonic_ns()

    def stop(self):
        self.t_ns += time.monotonic_ns() - self._start


def log_mean_exp(ws) -> float:
    m = max(ws)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(w - m) for w in ws) / len(ws))


def resample_multinomial(n: int, items, rng: RngStream, observe_index: int = 0):
    """Draw ``n`` items i.i.d. with probability proportional to exp(weight).

    ``items`` is a sequence of (log_weight, payload) pairs. Each draw is
    returned with its original unnormalised weight.
    """
    items = list(items)
    m = max(w for w, _ in items) if items else -math.inf
    if m == -math.inf or m != m:
        raise DegenerateSweep(observe_index)
    cum = []
    total = 0.0
    for w, _ in items:
        total += math.exp(w - m)
        cum.append(total)
    # sorted uniforms let one pass over the cumulative weights serve all draws
    us = sorted(rng.random() * total for _ in range(n))
    picks = []
    j = 0
    last = len(items) - 1
    for u in us:
        while j < last and cum[j] < u:
            j += 1
        picks.append(items[j])
    return picks


def _advance(cd, states, clock: _Clock, pool):
    """Run one directive on every state; returns the directive results."""
    before = sum(st.applies for st in states)
    if pool is None:
        results = [run_directive(cd, st) for st in states]
    else:
        results = list(pool.map(lambda st: run_directive(cd, st), states))
    clock.applies += sum(st.applies for st in states) - before
    return results


def _fork(parent: InterpState, clock: _Clock) -> InterpState:
    clock.forks += 1
    return fork(parent)


def smc_sweep(compiled, L: int, seed: int, sweep: int, clock: _Clock,
              retained: InterpState | None = None, fork_every_directive: bool = False,
              pool=None):
    """One SMC pass over the program; conditional on ``retained`` when given.

    Returns (final states, log evidence estimate). With a retained trace the
    first L-1 states are the fresh ones and the last is the replayed trace.
    """
    ctl = RngStream(seed, _CONTROL, sweep)
    n_fresh = L if retained is None else L - 1
    fresh = [InterpState(RngStream(seed, _PARTICLE, sweep, i)) for i in range(n_fresh)]
    ret = None
    if retained is not None:
        ret = InterpState(RngStream(seed, _PARTICLE, sweep, L - 1),
                          RandomDB(source=retained.db.entries))
    log_z = 0.0
    n_obs = 0
    for cd in compiled:
        if fork_every_directive:
            fresh = [_fork(st, clock) for st in fresh]
        results = _advance(cd, fresh, clock, pool)
        if ret is not None:
            r = _advance(cd, [ret], clock, None)[0]
        if cd.kind != "observe":
            continue
        items = [(res.log_weight, st) for res, st in zip(results, fresh)]
        if ret is not None:
            items.append((r.log_weight, ret))
        log_z += log_mean_exp([w for w, _ in items])
        try:
            picks = resample_multinomial(n_fresh, items, ctl, n_obs)
        except DegenerateSweep:
            raise DegenerateSweep(n_obs, sweep) from None
        if fork_every_directive:
            # the forks made before the next directive separate duplicates
            fresh = [st for _, st in picks]
        else:
            fresh = [_fork(st, clock) for _, st in picks]
        n_obs += 1
    if ret is not None:
        ret.db.finish_replay()
        fresh.append(ret)
    return fresh, log_z


def _pool(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def run_smc(program, L: int, seed: int = 0, threads: int = 1):
    """Single SMC pass; returns (final states, log evidence, SweepOutput)."""
    if L < 1:
        raise ValueError("SMC needs at least one particle")
    compiled = compile_program(program)
    clock = _Clock()
    pool = _pool(threads)
    try:
        clock.start()
        states, log_z = smc_sweep(compiled, L, seed, 1, clock, pool=pool)
        clock.stop()
    finally:
        if pool is not None:
            pool.shutdown()
    out = SweepOutput(1, L, clock.applies, clock.t_ns, [st.predicts for st in states],
                      log_z, None, clock.forks)
    return states, log_z, out


def run_pg(program, L: int, S: int, seed: int = 0, fork_every_directive: bool = False,
           threads: int = 1):
    """Particle Gibbs: yields one SweepOutput per sweep, all L particles emit."""
    if L < 2:
        raise ValueError("particle Gibbs needs at least two particles")
    compiled = compile_program(program)
    clock = _Clock()
    ctl = RngStream(seed, _CONTROL, 0)
    retained = None
    pool = _pool(threads)
    try:
        for s in range(1, S + 1):
            forks_before = clock.forks
            clock.start()
            states, log_z = smc_sweep(compiled, L, seed, s, clock, retained,
                                      fork_every_directive, pool)
            retained = states[ctl.randbelow(L)]
            clock.stop()
            yield SweepOutput(s, L * s, clock.applies, clock.t_ns,
                              [st.predicts for st in states],
                              log_z if s == 1 else None, None, clock.forks - forks_before)
    finally:
        if pool is not None:
            pool.shutdown()


# --- random-database Metropolis-Hastings -----------------------------------

@dataclass
class RdbProposal:
    state: InterpState | None     # None when replay hit a zero-probability value
    log_alpha: float
    n_old: int
    n_new: int
    forced: object


def _run_trace(compiled, st: InterpState):
    for cd in compiled:
        run_directive(cd, st)
    return st


def rdb_propose(current: InterpState, compiled, rng: RngStream) -> RdbProposal:
    """Resample one uniformly chosen choice and replay the rest of the program."""
    db = current.db
    keys = list(db.entries)
    n_old = len(keys)
    if n_old == 0:
        return RdbProposal(current, 0.0, 0, 0, None)
    addr = keys[rng.randbelow(n_old)]
    st = InterpState(rng.split(), RandomDB(source=db.entries, forced=addr))
    try:
        _run_trace(compiled, st)
    except ZeroProbability:
        return RdbProposal(None, -math.inf, n_old, 0, addr)
    new = st.db
    n_new = len(new.entries)
    ll_new = new.log_likelihood()
    if ll_new == -math.inf:
        log_alpha = -math.inf
    else:
        log_alpha = (ll_new + new.log_prior() - db.log_likelihood() - db.log_prior()
                     + math.log(n_old) - math.log(n_new)
                     + new.dropped_log_p() - new.fresh_log_p())
    new.finish_replay()
    return RdbProposal(st, log_alpha, n_old, n_new, addr)


def rdb_accept(proposal: RdbProposal, rng: RngStream) -> bool:
    if proposal.state is None or proposal.log_alpha == -math.inf:
        return False
    if proposal.log_alpha >= 0.0:
        return True
    return math.log(rng.random()) < proposal.log_alpha


def run_rdb(program, S: int, seed: int = 0):
    """Single-site MH over the random database.

    Sweep 0 is the forward sample; each later sweep is one proposal. Every
    sweep emits the current trace's predicts.
    """
    compiled = compile_program(program)
    clock = _Clock()
    rng = RngStream(seed, _RDB)
    clock.start()
    current = _run_trace(compiled, InterpState(RngStream(seed, _PARTICLE, 0, 0)))
    clock.stop()
    clock.applies = current.applies
    yield SweepOutput(0, 1, clock.applies, clock.t_ns, [current.predicts], None, True)
    for s in range(1, S + 1):
        clock.start()
        prop = rdb_propose(current, compiled, rng)
        accepted = rdb_accept(prop, rng)
        if prop.state is not None:
            clock.applies += prop.state.applies
        if accepted:
            current = prop.state
        clock.stop()
        yield SweepOutput(s, s + 1, clock.applies, clock.t_ns, [current.predicts], None, accepted)


def run_pimh(program, L: int, S: int, seed: int = 0, threads: int = 1):
    """Particle independent MH: each sweep proposes a whole new SMC run."""
    if L < 1:
        raise ValueError("PIMH needs at least one particle")
    compiled = compile_program(program)
    clock = _Clock()
    ctl = RngStream(seed, _CONTROL, 0)
    current, current_z = None, -math.inf
    pool = _pool(threads)
    try:
        for s in range(1, S + 1):
            clock.start()
            states, log_z = smc_sweep(compiled, L, seed, s, clock, pool=pool)
            u = ctl.random()
            accepted = current is None or log_z >= current_z or math.log(u) < log_z - current_z
            if accepted:
                current, current_z = states, log_z
            # particles are equally weighted after the final resampling step
            pick = current[ctl.randbelow(len(current))]
            clock.stop()
            yield SweepOutput(s, L * s, clock.applies, clock.t_ns, [pick.predicts],
                              log_z, accepted)
    finally:
        if pool is not None:
            pool.shutdown()


def _smc_stream(program, L, S, seed=0, threads=1):
    # repeated independent SMC runs, one per sweep
    compiled = compile_program(program)
    clock = _Clock()
    pool = _pool(threads)
    try:
        for s in range(1, S + 1):
            clock.start()
            states, log_z = smc_sweep(compiled, L, seed, s, clock, pool=pool)
            clock.stop()
            yield SweepOutput(s, L * s, clock.applies, clock.t_ns,
                              [st.predicts for st in states], log_z)
    finally:
        if pool is not None:
            pool.shutdown()


ENGINES = ("smc", "pg", "rdb", "pimh")


def run_engine(engine: str, program, particles: int = 100, sweeps: int = 1000,
               seed: int = 0, threads: int = 1, **options):
    """Uniform entry point returning an iterator of SweepOutput."""
    if engine == "pg":
        return run_pg(program, particles, sweeps, seed, threads=threads, **options)
    if engine == "rdb":
        return run_rdb(program, sweeps, seed)
    if engine == "pimh":
        return run_pimh(program, particles, sweeps, seed, threads=threads)
    if engine == "smc":
        return _smc_stream(program, particles, sweeps, seed, threads)
    raise ValueError(f"unknown engine {engine!r}; expected one of {', '.join(ENGINES)}")
