"""Addressed database of the random choices made by one execution trace."""

from __future__ import annotations

import math
from typing import NamedTuple

from .sexpr import to_source

__all__ = ["Address", "TraceEntry", "RandomDB", "ZeroProbability", "trace_log_joint", "rescore"]


class Address(NamedTuple):
    """(lexical site id, occurrence of that site within the trace)."""
    site: int
    occurrence: int

    def __str__(self):
        return f"{self.site}:{self.occurrence}"


class TraceEntry(NamedTuple):
    address: Address
    erp: object          # an Erp singleton, or the XRP kind string
    params: object       # ERP parameter tuple, or the XRP state before absorbing
    value: object
    log_p: float


class ZeroProbability(Exception):
    """A replayed value has zero probability under its new parameters."""


def _entry_log_p(e: TraceEntry) -> float:
    if isinstance(e.erp, str):
        return e.params.log_predictive(e.value)
    return e.erp.log_pdf(e.params, e.value)


class RandomDB:
    """Ordered map from addresses to trace entries, plus observe likelihoods.

    When ``source`` is set the database is being rebuilt by replaying an older
    trace: choices found in ``source`` with an unchanged primitive type are
    reused and rescored, everything else is sampled afresh. ``forced`` names an
    address that must be resampled even though it is present in the source.
    """

    __slots__ = ("entries", "observe_log_likes", "source", "forced", "reused", "fresh")

    def __init__(self, entries=None, observe_log_likes=None, source=None, forced=None):
        self.entries: dict = {} if entries is None else entries
        self.observe_log_likes: list = [] if observe_log_likes is None else observe_log_likes
        self.source: dict | None = source
        self.forced = forced
        self.reused: set = set()
        self.fresh: list = []

    def __len__(self):
        return len(self.entries)

    def __contains__(self, addr):
        return addr in self.entries

    def __iter__(self):
        return iter(self.entries.values())

    def copy(self, keep_replay: bool = True) -> "RandomDB":
        db = RandomDB(dict(self.entries), list(self.observe_log_likes))
        if keep_replay and self.source is not None:
            db.source = self.source
            db.forced = self.forced
            db.reused = set(self.reused)
            db.fresh = list(self.fresh)
        return db

    def record_or_replay(self, addr, erp, params, rng):
        """Return the value for ``addr``, reusing a stored one when allowed."""
        src = self.source
        if src is not None and addr != self.forced:
            old = src.get(addr)
            if old is not None and old.erp is erp:
                value = old.value
                lp = erp.log_pdf(params, value)
                if lp == -math.inf:
                    raise ZeroProbability(addr)
                self.entries[addr] = TraceEntry(addr, erp, params, value, lp)
                self.reused.add(addr)
                return value
        value = erp.sample(params, rng)
        lp = erp.log_pdf(params, value)
        self.entries[addr] = TraceEntry(addr, erp, params, value, lp)
        if src is not None:
            self.fresh.append(lp)
        return value

    def record_or_replay_xrp(self, addr, state, rng):
        """Draw from an exchangeable primitive; returns (value, absorbed state)."""
        src = self.source
        kind = state.kind
        if src is not None and addr != self.forced:
            old = src.get(addr)
            if old is not None and old.erp == kind:
                value = old.value
                lp = state.log_predictive(value)
                if lp == -math.inf:
                    raise ZeroProbability(addr)
                self.entries[addr] = TraceEntry(addr, kind, state, value, lp)
                self.reused.add(addr)
                return value, state.absorb(value)
        value = state.sample(rng)
        lp = state.log_predictive(value)
        self.entries[addr] = TraceEntry(addr, kind, state, value, lp)
        if src is not None:
            self.fresh.append(lp)
        return value, state.absorb(value)

    def add_observe(self, log_like: float) -> None:
        self.observe_log_likes.append(log_like)

    # --- quantities needed for the MH acceptance ratio ---------------------

    def log_prior(self) -> float:
        return math.fsum(e.log_p for e in self.entries.values())

    def log_likelihood(self) -> float:
        lls = self.observe_log_likes
        if any(ll == -math.inf for ll in lls):
            return -math.inf
        return math.fsum(lls)

    def fresh_log_p(self) -> float:
        """log p(x' \\ x | x' and x): choices sampled rather than reused."""
        return math.fsum(self.fresh)

    def dropped_log_p(self) -> float:
        """log p(x \\ x' | x and x'): source choices that were not reused."""
        if self.source is None:
            return 0.0
        reused = self.reused
        return math.fsum(e.log_p for a, e in self.source.items() if a not in reused)

    def finish_replay(self) -> None:
        self.source = None
        self.forced = None

    def dump(self) -> str:
        """Text listing of all entries, one per line, for golden-file tests."""
        lines = []
        for e in self.entries.values():
            name = e.erp if isinstance(e.erp, str) else e.erp.name
            params = e.params if isinstance(e.erp, str) else tuple(e.params)
            lines.append(f"{e.address}\t{name}\t{params!r}\t{to_source(e.value)}\t{e.log_p!r}")
        for i, ll in enumerate(self.observe_log_likes):
            lines.append(f"observe[{i}]\t{ll!r}")
        return "\n".join(lines) + ("\n" if lines else "")


def trace_log_joint(db: RandomDB) -> float:
    """log p(y, x): observe log-likelihoods plus every choice's log density."""
    ll = db.log_likelihood()
    if ll == -math.inf:
        return ll
    return ll + db.log_prior()


def rescore(db: RandomDB) -> float:
    """Recompute the joint from scratch using each entry's stored parameters."""
    total = math.fsum(_entry_log_p(e) for e in db.entries.values())
    return total + db.log_likelihood()
