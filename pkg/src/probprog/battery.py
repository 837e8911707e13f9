"""Three-tier test battery: unit programs, measure tests, conditional tests.

Each tier returns a list of ``Check`` rows so the CLI and the test suite can
report the same observed statistics.
"""

from __future__ import annotations

import math
import time
from typing import NamedTuple

from .engines import run_engine
from .interp import InterpState, compile_program, new_state, run_directive, run_program
from .metrics import kl_discrete, ks_statistic, load_corpus, metric_for, running_curve
from .primitives import ERPS
from .rng import RngStream
from .sexpr import Symbol, parse

__all__ = ["Check", "UNIT_PROGRAMS", "MEASURE_PROGRAMS", "unit_tier", "measure_tier",
           "conditional_tier", "TIERS"]


class Check(NamedTuple):
    tier: str
    name: str
    passed: bool
    observed: object
    threshold: object
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.tier}/{self.name}: observed={self.observed} threshold={self.threshold}"


# (name, program text, value of the last predict)
UNIT_PROGRAMS = [
    ("add", "[predict (+ 1 2)]", 3.0),
    ("nested-arith", "[predict (- (* 2 (+ 3 4)) (/ 10 4))]", 11.5),
    ("division", "[predict (/ 1 4)]", 0.25),
    ("unary-minus", "[predict (- 5)]", -5.0),
    ("comparison", "[predict (list (< 1 2) (> 1 2) (<= 2 2) (>= 1 2) (= 3 3))]",
     (True, False, True, False, True)),
    ("boolean-logic", "[predict (list (and true false) (or false true) (not false))]",
     (False, True, True)),
    ("if", "[assume r 5]\n[predict (if (< 4 r) 6 7)]", 6.0),
    ("cond", "[assume f (lambda (s) (cond ((= s 0) 10) ((= s 1) 20) (else 30)))]\n"
             "[predict (list (f 0) (f 1) (f 2))]", (10.0, 20.0, 30.0)),
    ("lambda-apply", "[predict ((lambda (x) (* x x)) 3)]", 9.0),
    ("closure-capture", "[assume make-adder (lambda (n) (lambda (x) (+ x n)))]\n"
                        "[assume add5 (make-adder 5)]\n[predict (add5 10)]", 15.0),
    ("higher-order", "[assume twice (lambda (f x) (f (f x)))]\n"
                     "[predict (twice (lambda (y) (* 2 y)) 3)]", 12.0),
    ("let", "[predict (let ((a 2) (b 3)) (* a b))]", 6.0),
    ("let-shadow", "[assume x 1]\n[predict (let ((x 10)) (+ x 1))]", 11.0),
    ("begin", "[predict (begin 1 2 3)]", 3.0),
    ("internal-define", "[assume f (lambda (x) (define y (* x 2)) (define z (+ y 1)) z)]\n"
                        "[predict (f 4)]", 9.0),
    ("define-function", "[assume f (lambda (n) (define (g k) (* k k)) (g n))]\n[predict (f 7)]", 49.0),
    ("quote-symbol", "[predict (quote abc)]", Symbol("abc")),
    ("quote-list", "[predict (quote (1 2 3))]", (1.0, 2.0, 3.0)),
    ("recursion-factorial", "[assume fact (lambda (n) (if (= n 0) 1 (* n (fact (- n 1)))))]\n"
                            "[predict (fact 10)]", 3628800.0),
    ("recursion-fib", "[assume fib (lambda (n) (cond ((= n 0) 1) ((= n 1) 1)"
                      " (else (+ (fib (- n 1)) (fib (- n 2))))))]\n[predict (fib 12)]", 233.0),
    ("mutual-recursion", "[assume ev? (lambda (n)"
                         " (define (e k) (if (= k 0) true (o (- k 1))))"
                         " (define (o k) (if (= k 0) false (e (- k 1))))"
                         " (e n))]\n[predict (list (ev? 10) (ev? 7))]", (True, False)),
    ("mem-deterministic", "[assume sq (mem (lambda (x) (* x x)))]\n[predict (+ (sq 3) (sq 3))]", 18.0),
    ("mem-random-stable", "[assume coin (mem (lambda (i) (flip 0.5)))]\n"
                          "[predict (= (coin 1) (coin 1))]", True),
    ("list-ops", "[predict (list (car (list 1 2 3)) (cdr (list 1 2 3)))]", (1.0, (2.0, 3.0))),
    ("cons", "[predict (cons 0 (list 1 2))]", (0.0, 1.0, 2.0)),
    ("nth", "[predict (nth (list 5 6 7) 2)]", 7.0),
    ("length", "[predict (length (list 1 2 3 4))]", 4.0),
    ("null", "[predict (list (null? (list)) (null? (list 1)))]", (True, False)),
    ("append-reverse", "[predict (reverse (append (list 1 2) (list 3)))]", (3.0, 2.0, 1.0)),
    ("unique-count", "[predict (count (unique (list 1 2 1 3 2)))]", 3.0),
    ("build-list", "[assume upto (lambda (i n) (if (= i n) (list) (cons i (upto (+ i 1) n))))]\n"
                   "[predict (upto 0 4)]", (0.0, 1.0, 2.0, 3.0)),
    ("map-fold", "[assume map (lambda (f xs) (if (null? xs) (list) (cons (f (car xs)) (map f (cdr xs)))))]\n"
                 "[assume fold (lambda (f acc xs) (if (null? xs) acc (fold f (f acc (car xs)) (cdr xs))))]\n"
                 "[predict (fold + 0 (map (lambda (x) (* x x)) (list 1 2 3)))]", 14.0),
    ("math-functions", "[predict (list (sqrt 16) (exp 0) (log 1) (abs -2) (floor 2.7))]",
     (4.0, 1.0, 0.0, 2.0, 2.0)),
    ("min-max", "[predict (list (min 3 1 2) (max 3 1 2))]", (1.0, 3.0)),
    ("hmm-transition-table", "[assume t (lambda (s) (cond ((= s 0) (list .1 .5 .4))"
                             " ((= s 1) (list .2 .2 .6)) ((= s 2) (list .15 .15 .7))))]\n"
                             "[predict (nth (t 2) 2)]", 0.7),
    ("flip-certain", "[predict (flip 1.0)]", True),
    ("discrete-degenerate", "[predict (discrete (list 0 0 1))]", 2.0),
]


def _last_predict(source: str):
    st = new_state(0)
    run_program(parse(source), st)
    return st.predicts[-1][1]


def unit_tier() -> list:
    out = []
    for name, source, expected in UNIT_PROGRAMS:
        t0 = time.perf_counter()
        try:
            got = _last_predict(source)
            ok = got == expected and type(got) is type(expected)
        except Exception as exc:
            got, ok = f"{type(exc).__name__}: {exc}", False
        out.append(Check("unit", name, ok, got, expected, time.perf_counter() - t0))
    return out


# --- measure tier ------------------------------------------------------------

def _pmf_truth(erp_name, params, support):
    erp = ERPS[erp_name]
    theta = erp.check(list(params))
    return {v: math.exp(erp.log_pdf(theta, v)) for v in support}


def _continuous(erp_name, params):
    from scipy import stats
    dist = {
        "normal": lambda m, s: stats.norm(m, s),
        "gamma": lambda a, b: stats.gamma(a, scale=1 / b),
        "beta": lambda a, b: stats.beta(a, b),
        "uniform-continuous": lambda lo, hi: stats.uniform(lo, hi - lo),
    }[erp_name](*params)
    return dist.cdf


def _poisson_support(lam):
    k_max = int(lam + 20 * math.sqrt(lam) + 20)
    return [float(k) for k in range(k_max + 1)]


# (erp, parameters, program argument text, kind)
MEASURE_PROGRAMS = [
    ("normal", (1.0, 2.0), "1 2", "continuous"),
    ("gamma", (2.0, 3.0), "2 3", "continuous"),
    ("beta", (2.0, 5.0), "2 5", "continuous"),
    ("uniform-continuous", (-1.0, 1.0), "-1.0 1.0", "continuous"),
    ("poisson", (4.0,), "4", "discrete"),
    ("flip", (0.3,), "0.3", "discrete"),
    ("discrete", ((.1, .5, .4),), "(list .1 .5 .4)", "discrete"),
    ("categorical", (((1.0, 2.0), (5.0, 3.0)),), "(list (list 1 2) (list 5 3))", "discrete"),
]


def measure_samples(erp_name: str, args_text: str, n: int, seed: int = 0) -> list:
    """n independent forward runs of ``[predict (<erp> <args>)]``."""
    prog = parse(f"[predict ({erp_name} {args_text})]")
    cds = compile_program(prog)
    rng = RngStream(seed, 0x3ea5)
    out = []
    for _ in range(n):
        st = InterpState(rng)
        for cd in cds:
            run_directive(cd, st)
        out.append(st.predicts[-1][1])
    return out


def measure_tier(n: int = 100_000, seed: int = 0) -> list:
    out = []
    for erp_name, params, args_text, kind in MEASURE_PROGRAMS:
        t0 = time.perf_counter()
        xs = measure_samples(erp_name, args_text, n, seed)
        if kind == "continuous":
            stat = ks_statistic(xs, _continuous(erp_name, params), vectorized=True)
            ok, thr, metric = stat < 0.02, 0.02, "KS"
        else:
            if erp_name == "poisson":
                support = _poisson_support(params[0])
            elif erp_name == "flip":
                support = [True, False]
            elif erp_name == "discrete":
                support = [0.0, 1.0, 2.0]
            else:
                support = [1.0, 5.0]
            truth = _pmf_truth(erp_name, params, support)
            counts: dict = {}
            for x in xs:
                counts[x] = counts.get(x, 0) + 1
            emp = {v: c / n for v, c in counts.items()}
            stat = kl_discrete(emp, truth)
            ok, thr, metric = stat < 1e-3, 1e-3, "KL"
        out.append(Check("measure", f"{erp_name}", ok, f"{metric}={stat:.2e}", f"< {thr}",
                         time.perf_counter() - t0))
    return out


# --- conditional tier -----------------------------------------------------------

# program -> (engine, particles, simulations, threshold)
CONDITIONAL_PLAN = {
    "branching": ("pg", 100, 100_000, 0.02),
    "hmm": ("pg", 100, 50_000, 0.1),
    "marsaglia": ("pg", 100, 10_000, 0.05),
    "dp-mixture": ("pg", 100, 100_000, 0.05),
}


def conditional_tier(seed: int = 0, golden_dir=None, programs=None, scale: float = 1.0) -> list:
    out = []
    for name in programs or CONDITIONAL_PLAN:
        engine, L, sims, thr = CONDITIONAL_PLAN[name]
        sims = max(int(sims * scale), L)
        t0 = time.perf_counter()
        metric = metric_for(name, golden_dir)
        try:
            stream = run_engine(engine, load_corpus(name), particles=L, sweeps=sims // L, seed=seed)
            curve = running_curve(stream, metric, grid=[], include_last=True)
            value = curve.final()
            ok = value < thr
            observed = f"{metric.name}={value:.4f}"
        except Exception as exc:
            ok, observed = False, f"{type(exc).__name__}: {exc}"
        out.append(Check("conditional", f"{name}/{engine}-{L}", ok, observed, f"< {thr}",
                         time.perf_counter() - t0))
    return out


TIERS = {"unit": unit_tier, "measure": measure_tier, "conditional": conditional_tier}
