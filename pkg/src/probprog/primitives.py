"""Random primitives.

Elementary random primitives (ERPs) are stateless distributions with a
sampler and an exact log density. Exchangeable random primitives (XRPs) are
stateful: ``produce`` gives the predictive distribution of the next draw and
``absorb`` returns the state updated with an observed draw. XRP states are
immutable so that interpreter forks can share them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

from .rng import RngStream

__all__ = [
    "ParameterError", "Erp", "ERPS", "erp_sample", "erp_log_pdf",
    "CRP", "BetaBernoulli", "NEW_TABLE", "xrp_produce", "xrp_absorb", "xrp_unabsorb",
]

NEG_INF = -math.inf
_LOG_2PI = math.log(2.0 * math.pi)
_std_normal_ppf = NormalDist().inv_cdf
_lgamma = math.lgamma


class ParameterError(ValueError):
    """Raised for distribution parameters outside their domain."""


def _real(x, what: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ParameterError(f"{what} must be a number, got {x!r}")
    return float(x)


def _weights(ws, what: str) -> tuple:
    if not isinstance(ws, (tuple, list)) or not ws:
        raise ParameterError(f"{what} must be a non-empty list of weights")
    out = tuple(_real(w, what) for w in ws)
    if any(w < 0 or not math.isfinite(w) for w in out) or sum(out) <= 0:
        raise ParameterError(f"{what} must be nonnegative with positive sum")
    return out


def _is_count(v) -> bool:
    return not isinstance(v, bool) and isinstance(v, (int, float)) and v >= 0 and float(v).is_integer()


# --- samplers --------------------------------------------------------------

def _std_normal(rng: RngStream) -> float:
    return _std_normal_ppf(rng.random())


def _std_gamma(shape: float, rng: RngStream) -> float:
    # Marsaglia & Tsang; boosted for shape < 1
    if shape < 1.0:
        return _std_gamma(shape + 1.0, rng) * rng.random() ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _std_normal(rng)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.random()
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v


def _poisson(lam: float, rng: RngStream) -> float:
    if lam < 30.0:
        # sequential inversion
        u = rng.random()
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u > cdf:
            k += 1
            p *= lam / k
            if p == 0.0:
                break
            cdf += p
        return float(k)
    # transformed rejection with squeeze (Hormann's PTRS)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return float(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - _lgamma(k + 1.0)):
            return float(k)


# --- elementary random primitives -----------------------------------------

class Erp:
    """Base for elementary random primitives; subclasses are singletons."""
    name = "erp"

    def check(self, args) -> tuple:
        raise NotImplementedError

    def sample(self, params: tuple, rng: RngStream):
        raise NotImplementedError

    def log_pdf(self, params: tuple, value) -> float:
        raise NotImplementedError

    def __repr__(self):
        return f"<erp {self.name}>"

    def _arity(self, args, n):
        if len(args) != n:
            raise ParameterError(f"{self.name} takes {n} argument(s), got {len(args)}")


class Normal(Erp):
    name = "normal"

    def check(self, args):
        self._arity(args, 2)
        mu, sd = _real(args[0], "normal mean"), _real(args[1], "normal std")
        if not sd > 0 or not math.isfinite(sd):
            raise ParameterError("normal std must be > 0")
        return (mu, sd)

    def sample(self, params, rng):
        return params[0] + params[1] * _std_normal_ppf(rng.random())

    def log_pdf(self, params, value):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return NEG_INF
        z = (value - params[0]) / params[1]
        return -0.5 * z * z - math.log(params[1]) - 0.5 * _LOG_2PI


class Gamma(Erp):
    """Gamma with shape and rate."""
    name = "gamma"

    def check(self, args):
        self._arity(args, 2)
        a, b = _real(args[0], "gamma shape"), _real(args[1], "gamma rate")
        if not a > 0 or not b > 0:
            raise ParameterError("gamma shape and rate must be > 0")
        return (a, b)

    def sample(self, params, rng):
        return _std_gamma(params[0], rng) / params[1]

    def log_pdf(self, params, value):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            return NEG_INF
        a, b = params
        return a * math.log(b) - _lgamma(a) + (a - 1.0) * math.log(value) - b * value


class Beta(Erp):
    name = "beta"

    def check(self, args):
        self._arity(args, 2)
        a, b = _real(args[0], "beta alpha"), _real(args[1], "beta beta")
        if not a > 0 or not b > 0:
            raise ParameterError("beta parameters must be > 0")
        return (a, b)

    def sample(self, params, rng):
        x = _std_gamma(params[0], rng)
        y = _std_gamma(params[1], rng)
        return x / (x + y)

    def log_pdf(self, params, value):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 < value < 1:
            return NEG_INF
        a, b = params
        return (_lgamma(a + b) - _lgamma(a) - _lgamma(b)
                + (a - 1.0) * math.log(value) + (b - 1.0) * math.log1p(-value))


class Poisson(Erp):
    name = "poisson"

    def check(self, args):
        self._arity(args, 1)
        lam = _real(args[0], "poisson rate")
        if not lam > 0 or not math.isfinite(lam):
            raise ParameterError("poisson rate must be > 0")
        return (lam,)

    def sample(self, params, rng):
        return _poisson(params[0], rng)

    def log_pdf(self, params, value):
        if not _is_count(value):
            return NEG_INF
        lam = params[0]
        return value * math.log(lam) - lam - _lgamma(value + 1.0)


class Flip(Erp):
    name = "flip"

    def check(self, args):
        if len(args) == 0:
            return (0.5,)
        self._arity(args, 1)
        p = _real(args[0], "flip probability")
        if not 0.0 <= p <= 1.0:
            raise ParameterError("flip probability must lie in [0, 1]")
        return (p,)

    def sample(self, params, rng):
        return rng.random() < params[0]

    def log_pdf(self, params, value):
        if not isinstance(value, bool):
            return NEG_INF
        p = params[0] if value else 1.0 - params[0]
        return math.log(p) if p > 0 else NEG_INF


class Discrete(Erp):
    """Draws a 0-based index with probability proportional to the weights."""
    name = "discrete"

    def __init__(self):
        self._checked = {}

    def check(self, args):
        self._arity(args, 1)
        raw = args[0]
        try:
            return self._checked[raw]
        except (KeyError, TypeError):
            pass
        ws = _weights(raw, "discrete weights")
        params = (ws, sum(ws))
        if isinstance(raw, tuple) and len(self._checked) < 4096:
            self._checked[raw] = params
        return params

    def sample(self, params, rng):
        ws, total = params
        u = rng.random() * total
        acc = 0.0
        last = 0
        for i, w in enumerate(ws):
            if w > 0:
                acc += w
                last = i
                if u < acc:
                    return float(i)
        return float(last)

    def log_pdf(self, params, value):
        ws, total = params
        if not _is_count(value) or value >= len(ws):
            return NEG_INF
        w = ws[int(value)]
        return math.log(w / total) if w > 0 else NEG_INF


class Categorical(Erp):
    """Draws a value from explicit ``(value weight)`` pairs."""
    name = "categorical"

    def check(self, args):
        self._arity(args, 1)
        pairs = args[0]
        if not isinstance(pairs, (tuple, list)) or not pairs:
            raise ParameterError("categorical needs a non-empty list of (value weight) pairs")
        values, ws = [], []
        for pair in pairs:
            if not isinstance(pair, (tuple, list)) or len(pair) != 2:
                raise ParameterError("categorical entries must be (value weight) pairs")
            values.append(pair[0])
            ws.append(pair[1])
        ws = _weights(ws, "categorical weights")
        return (tuple(values), ws, sum(ws))

    def sample(self, params, rng):
        values, ws, total = params
        u = rng.random() * total
        acc = 0.0
        last = values[0]
        for v, w in zip(values, ws):
            if w > 0:
                acc += w
                last = v
                if u < acc:
                    return v
        return last

    def log_pdf(self, params, value):
        values, ws, total = params
        mass = sum(w for v, w in zip(values, ws) if v == value and type(v) is type(value))
        return math.log(mass / total) if mass > 0 else NEG_INF


class UniformContinuous(Erp):
    name = "uniform-continuous"

    def check(self, args):
        self._arity(args, 2)
        lo, hi = _real(args[0], "uniform lower bound"), _real(args[1], "uniform upper bound")
        if not lo < hi:
            raise ParameterError("uniform-continuous needs lo < hi")
        return (lo, hi)

    def sample(self, params, rng):
        lo, hi = params
        return lo + (hi - lo) * rng.random()

    def log_pdf(self, params, value):
        lo, hi = params
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not lo <= value <= hi:
            return NEG_INF
        return -math.log(hi - lo)


ERPS: dict[str, Erp] = {e.name: e for e in (
    Normal(), Gamma(), Poisson(), Flip(), Discrete(), Categorical(), UniformContinuous(), Beta())}


def erp_sample(name: str, args, rng: RngStream):
    erp = ERPS[name]
    return erp.sample(erp.check(args), rng)


def erp_log_pdf(name: str, args, value) -> float:
    erp = ERPS[name]
    return erp.log_pdf(erp.check(args), value)


# --- exchangeable random primitives ---------------------------------------

class _NewTable:
    def __repr__(self):
        return "NEW_TABLE"


NEW_TABLE = _NewTable()


@dataclass(frozen=True)
class CRP:
    """Chinese restaurant process seating state.

    Table ids are allocation-order integers, so ``counts[k]`` is the number of
    customers at table ``k`` and the next new table gets id ``len(counts)``.
    """
    alpha: float
    counts: tuple = ()

    kind = "crp"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError("crp concentration must be > 0")

    @property
    def customers(self) -> int:
        return sum(self.counts)

    def produce(self) -> dict:
        n = self.customers + self.alpha
        dist = {float(k): c / n for k, c in enumerate(self.counts) if c > 0}
        dist[NEW_TABLE] = self.alpha / n
        return dist

    def log_predictive(self, value) -> float:
        if not _is_count(value):
            return NEG_INF
        k = int(value)
        n = self.customers + self.alpha
        if k < len(self.counts) and self.counts[k] > 0:
            return math.log(self.counts[k] / n)
        if k == len(self.counts):
            return math.log(self.alpha / n)
        return NEG_INF

    def sample(self, rng: RngStream) -> float:
        u = rng.random() * (self.customers + self.alpha)
        acc = 0.0
        for k, c in enumerate(self.counts):
            acc += c
            if u < acc:
                return float(k)
        return float(len(self.counts))

    def absorb(self, value) -> "CRP":
        if value is NEW_TABLE:
            return CRP(self.alpha, self.counts + (1,))
        if not _is_count(value):
            raise ParameterError(f"crp cannot absorb {value!r}")
        k = int(value)
        if k < len(self.counts) and self.counts[k] > 0:
            counts = list(self.counts)
            counts[k] += 1
            return CRP(self.alpha, tuple(counts))
        if k == len(self.counts):
            return CRP(self.alpha, self.counts + (1,))
        raise ParameterError(f"crp cannot absorb unknown table {k}")

    def unabsorb(self, value) -> "CRP":
        k = int(value)
        if not (0 <= k < len(self.counts)) or self.counts[k] == 0:
            raise ParameterError(f"crp has no customer at table {k}")
        counts = list(self.counts)
        counts[k] -= 1
        while counts and counts[-1] == 0:
            counts.pop()
        return CRP(self.alpha, tuple(counts))


@dataclass(frozen=True)
class BetaBernoulli:
    a: float
    b: float
    heads: int = 0
    tails: int = 0

    kind = "beta-bernoulli"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ParameterError("beta-bernoulli parameters must be > 0")

    def p_true(self) -> float:
        return (self.a + self.heads) / (self.a + self.b + self.heads + self.tails)

    def produce(self) -> dict:
        p = self.p_true()
        return {True: p, False: 1.0 - p}

    def log_predictive(self, value) -> float:
        if not isinstance(value, bool):
            return NEG_INF
        p = self.p_true()
        return math.log(p if value else 1.0 - p)

    def sample(self, rng: RngStream) -> bool:
        return rng.random() < self.p_true()

    def absorb(self, value) -> "BetaBernoulli":
        if not isinstance(value, bool):
            raise ParameterError(f"beta-bernoulli cannot absorb {value!r}")
        if value:
            return BetaBernoulli(self.a, self.b, self.heads + 1, self.tails)
        return BetaBernoulli(self.a, self.b, self.heads, self.tails + 1)

    def unabsorb(self, value) -> "BetaBernoulli":
        if value and self.heads > 0:
            return BetaBernoulli(self.a, self.b, self.heads - 1, self.tails)
        if value is False and self.tails > 0:
            return BetaBernoulli(self.a, self.b, self.heads, self.tails - 1)
        raise ParameterError(f"beta-bernoulli has no {value!r} to remove")


def xrp_produce(x):
    return x.produce()


def xrp_absorb(x, value):
    return x.absorb(value)


def xrp_unabsorb(x, value):
    return x.unabsorb(value)


XRP_CONSTRUCTORS = {
    "crp": lambda alpha: CRP(_real(alpha, "crp concentration")),
    "beta-bernoulli": lambda a, b: BetaBernoulli(_real(a, "beta-bernoulli a"), _real(b, "beta-bernoulli b")),
}
