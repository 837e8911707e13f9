"""Exact posteriors for the four bundled conditioning programs.

Nothing here touches the interpreter or the engines. Each oracle is a direct
computation over the model written out by hand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from statistics import NormalDist

__all__ = [
    "HmmSpec", "DpSpec", "BranchingSpec", "GaussSpec",
    "hmm_marginals", "hmm_trailing_marginal", "dp_cluster_count_posterior",
    "dp_cluster_count_posterior_recursive", "dp_block_log_marginal", "crp_log_prior",
    "count_partitions", "branching_posterior", "gaussian_posterior", "GaussianPosterior",
    "fib", "write_golden", "read_golden", "load_golden",
]


# --- hidden Markov model ---------------------------------------------------

@dataclass(frozen=True)
class HmmSpec:
    initial: tuple = (1 / 3, 1 / 3, 1 / 3)
    transitions: tuple = ((.1, .5, .4), (.2, .2, .6), (.15, .15, .7))
    means: tuple = (-1.0, 1.0, 0.0)
    std: float = 1.0
    observations: tuple = (.9, .8, .7, 0, -.025, 5, 2, .1, 0, .13, .45, 6, .2, .3, -1, -1)


def _normalize(v):
    z = math.fsum(v)
    return [x / z for x in v]


def _hmm_smooth(spec: HmmSpec):
    """Forward-backward over states 0..n; state i>0 emits observation i-1."""
    k = len(spec.initial)
    T = spec.transitions
    lik = [[NormalDist(m, spec.std).pdf(y) for m in spec.means] for y in spec.observations]
    n = len(spec.observations)
    alpha = [list(spec.initial)]
    for i in range(1, n + 1):
        pred = [math.fsum(alpha[-1][a] * T[a][b] for a in range(k)) for b in range(k)]
        alpha.append(_normalize([pred[b] * lik[i - 1][b] for b in range(k)]))
    beta = [[1.0] * k for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        beta[i] = _normalize([math.fsum(T[a][b] * lik[i][b] * beta[i + 1][b] for b in range(k))
                              for a in range(k)])
    return [_normalize([alpha[i][s] * beta[i][s] for s in range(k)]) for i in range(n + 1)]


def hmm_marginals(spec: HmmSpec = HmmSpec()) -> list:
    """Smoothed marginals for states 0..n (n = number of observations)."""
    return _hmm_smooth(spec)


def hmm_trailing_marginal(spec: HmmSpec = HmmSpec()) -> list:
    """Predictive marginal of the unobserved state after the last one."""
    last = _hmm_smooth(spec)[-1]
    k = len(last)
    return _normalize([math.fsum(last[a] * spec.transitions[a][b] for a in range(k))
                       for b in range(k)])


# --- Dirichlet process mixture ---------------------------------------------

@dataclass(frozen=True)
class DpSpec:
    alpha: float = 1.72
    data: tuple = (1.0, 1.1, 1.2, -10, -15, -20, .01, .1, .05, 0)
    mu0: float = 0.0
    kappa: float = 0.1
    a: float = 1.0
    b: float = 10.0   # rate


def dp_block_log_marginal(ys, spec: DpSpec = DpSpec()) -> float:
    """log p(ys) with mean and precision integrated out (normal-gamma prior)."""
    n = len(ys)
    if n == 0:
        return 0.0
    ybar = math.fsum(ys) / n
    ss = math.fsum((y - ybar) ** 2 for y in ys)
    kn = spec.kappa + n
    an = spec.a + n / 2
    bn = spec.b + ss / 2 + spec.kappa * n * (ybar - spec.mu0) ** 2 / (2 * kn)
    return (math.lgamma(an) - math.lgamma(spec.a) + spec.a * math.log(spec.b) - an * math.log(bn)
            + 0.5 * math.log(spec.kappa / kn) - n / 2 * math.log(2 * math.pi))


def crp_log_prior(block_sizes, alpha: float) -> float:
    """log probability of one set partition with these block sizes."""
    n = sum(block_sizes)
    return (len(block_sizes) * math.log(alpha) + math.lgamma(alpha) - math.lgamma(alpha + n)
            + math.fsum(math.lgamma(m) for m in block_sizes))


def _restricted_growth(n):
    """All set partitions of range(n) as restricted-growth label strings."""
    labels = [0] * n
    maxes = [0] * n

    def rec(i):
        if i == n:
            yield labels
            return
        top = maxes[i - 1] + 1 if i else 0
        for lab in range(top + 1):
            labels[i] = lab
            maxes[i] = max(maxes[i - 1], lab) if i else lab
            yield from rec(i + 1)

    if n == 0:
        yield []
        return
    labels[0] = 0
    maxes[0] = 0
    yield from rec(1)


def count_partitions(n: int) -> int:
    return sum(1 for _ in _restricted_growth(n))


def dp_cluster_count_posterior(spec: DpSpec = DpSpec(), return_count: bool = False):
    """P(K = k | data) by enumerating every set partition of the data.

    Block marginals are precomputed for all nonempty subsets (bitmasks).
    """
    ys = spec.data
    n = len(ys)
    block = [0.0] * (1 << n)
    size = [0] * (1 << n)
    for mask in range(1, 1 << n):
        members = [ys[i] for i in range(n) if mask >> i & 1]
        size[mask] = len(members)
        block[mask] = dp_block_log_marginal(members, spec)
    lg = [math.lgamma(m) if m else 0.0 for m in range(n + 1)]
    log_a = math.log(spec.alpha)
    const = math.lgamma(spec.alpha) - math.lgamma(spec.alpha + n)
    terms = {}
    count = 0
    for labels in _restricted_growth(n):
        count += 1
        k = max(labels) + 1
        masks = [0] * k
        for i, lab in enumerate(labels):
            masks[lab] |= 1 << i
        lw = const + k * log_a
        for m in masks:
            lw += block[m] + lg[size[m]]
        terms.setdefault(k, []).append(lw)
    top = max(max(v) for v in terms.values())
    mass = {k: math.fsum(math.exp(w - top) for w in v) for k, v in terms.items()}
    z = math.fsum(mass.values())
    post = {k: mass.get(k, 0.0) / z for k in range(1, n + 1)}
    return (post, count) if return_count else post


def _student_t_log_predictive(y, n, mean, kappa, a, b):
    # predictive of a normal-gamma posterior: Student t with 2a dof
    nu = 2 * a
    scale2 = b * (kappa + 1) / (a * kappa)
    z = (y - mean) ** 2 / scale2
    return (math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)
            - 0.5 * math.log(nu * math.pi * scale2) - (nu + 1) / 2 * math.log1p(z / nu))


def _block_log_marginal_sequential(ys, spec: DpSpec) -> float:
    mean, kappa, a, b = spec.mu0, spec.kappa, spec.a, spec.b
    total = 0.0
    for i, y in enumerate(ys):
        total += _student_t_log_predictive(y, i, mean, kappa, a, b)
        b += kappa * (y - mean) ** 2 / (2 * (kappa + 1))
        mean = (kappa * mean + y) / (kappa + 1)
        kappa += 1
        a += 0.5
    return total


def dp_cluster_count_posterior_recursive(spec: DpSpec = DpSpec()):
    """Same posterior by a subset recursion with sequential block marginals.

    Z_k(S) sums over partitions of S into k blocks; the block holding the
    lowest element of S is peeled off first, so each partition is counted once.
    """
    ys = spec.data
    n = len(ys)
    full = (1 << n) - 1
    weight = {}
    for mask in range(1, full + 1):
        members = [ys[i] for i in range(n) if mask >> i & 1]
        m = len(members)
        weight[mask] = math.exp(_block_log_marginal_sequential(members, spec)
                                + math.log(spec.alpha) + math.lgamma(m))
    memo = {0: {0: 1.0}}

    def z(mask):
        if mask in memo:
            return memo[mask]
        low = mask & -mask
        rest = mask ^ low
        out = {}
        sub = rest
        while True:
            blk = sub | low
            w = weight[blk]
            for k, v in z(mask ^ blk).items():
                out[k + 1] = out.get(k + 1, 0.0) + w * v
            if sub == 0:
                break
            sub = (sub - 1) & rest
        memo[mask] = out
        return out

    zs = z(full)
    total = math.fsum(zs.values())
    return {k: zs.get(k, 0.0) / total for k in range(1, n + 1)}


# --- branching -------------------------------------------------------------

def fib(n: int) -> int:
    a, b = 1, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def _poisson_logpmf(k: int, lam: float) -> float:
    return k * math.log(lam) - lam - math.lgamma(k + 1)


@dataclass(frozen=True)
class BranchingSpec:
    rate: float = 4.0
    inner_rate: float = 4.0
    threshold: int = 4
    constant: int = 6
    y: int = 6
    tail: float = 1e-14


def _poisson_support(lam: float, tail: float) -> int:
    """Smallest k_max with P(X > k_max) < tail."""
    k, cdf = 0, 0.0
    while True:
        cdf += math.exp(_poisson_logpmf(k, lam))
        if 1.0 - cdf < tail and k > lam:
            return k
        k += 1


def branching_posterior(spec: BranchingSpec = BranchingSpec(), return_truncation: bool = False):
    """Posterior over r; support cut where the remaining prior mass < spec.tail."""
    r_max = _poisson_support(spec.rate, spec.tail)
    k_max = _poisson_support(spec.inner_rate, spec.tail)
    weights = {}
    for r in range(r_max + 1):
        prior = math.exp(_poisson_logpmf(r, spec.rate))
        if r > spec.threshold:
            like = math.exp(_poisson_logpmf(spec.y, spec.constant))
        else:
            base = fib(3 * r)
            like = math.fsum(math.exp(_poisson_logpmf(k, spec.inner_rate)
                                      + _poisson_logpmf(spec.y, base + k))
                             for k in range(k_max + 1))
        weights[r] = prior * like
    z = math.fsum(weights.values())
    post = {r: w / z for r, w in weights.items()}
    if return_truncation:
        # unnormalised mass beyond r_max, bounded by the l=constant branch
        beyond = (1.0 - math.fsum(math.exp(_poisson_logpmf(r, spec.rate)) for r in range(r_max + 1)))
        return post, max(beyond, 0.0) * math.exp(_poisson_logpmf(spec.y, spec.constant)) / z
    return post


# --- Gaussian with unknown mean --------------------------------------------

@dataclass(frozen=True)
class GaussSpec:
    prior_mean: float = 1.0
    prior_var: float = 5.0
    like_var: float = 2.0
    observations: tuple = (9.0, 8.0)


@dataclass(frozen=True)
class GaussianPosterior:
    mean: float
    variance: float

    def cdf(self, x: float) -> float:
        return NormalDist(self.mean, math.sqrt(self.variance)).cdf(x)

    def cdf_many(self, xs) -> list:
        f = NormalDist(self.mean, math.sqrt(self.variance)).cdf
        return [f(x) for x in xs]


def gaussian_posterior(spec: GaussSpec = GaussSpec()) -> GaussianPosterior:
    prec = 1 / spec.prior_var + len(spec.observations) / spec.like_var
    mean = (spec.prior_mean / spec.prior_var + math.fsum(spec.observations) / spec.like_var) / prec
    return GaussianPosterior(mean, 1 / prec)


# --- golden files ----------------------------------------------------------

def write_golden(path, rows) -> None:
    """rows: iterable of (label, support value, probability)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "value", "probability"])
        for label, value, p in rows:
            w.writerow([label, value, repr(float(p))])


def read_golden(path) -> dict:
    """label -> {value: probability}; numeric values come back as floats."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                value = float(row["value"])
            except ValueError:
                value = row["value"]
            out.setdefault(row["label"], {})[value] = float(row["probability"])
    return out


def load_golden(name: str) -> dict:
    """Read a golden file shipped with the package (e.g. "hmm")."""
    ref = resources.files("probprog") / "golden" / f"{name}.csv"
    with resources.as_file(ref) as p:
        return read_golden(p)
