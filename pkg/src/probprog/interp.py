"""Eager eval/apply interpreter over forkable interpreter states.

Expressions are compiled once into nested Python closures ``node(env, st)``
where ``env`` is the innermost lexical frame (a list ``[parent, slot1, ...]``)
and ``st`` is the :class:`InterpState` holding everything a fork must copy:
global bindings, memo tables, exchangeable-primitive states, the random
database, the random stream and the application counter.

Variable references are resolved at compile time to (depth, slot) pairs;
anything not lexically bound is looked up in the state's globals (assumed
symbols) or, failing that, is a builtin constant.
"""

from __future__ import annotations

import itertools
import math
import operator
import sys
from typing import NamedTuple

from .primitives import ERPS, XRP_CONSTRUCTORS, Erp, ParameterError
from .rng import RngStream
from .sexpr import (Assume, Observe, Predict, Program, SList, String, Symbol,
                    to_source, validate, ValidationError)
from .trace import Address, RandomDB

__all__ = [
    "EvalError", "Closure", "Builtin", "MemProc", "XrpInstance", "InterpState",
    "Bound", "Scored", "Predicted", "RANDOM_PRIMITIVE_NAMES", "builtin_names",
    "compile_program", "eval_expr", "apply_proc", "run_directive", "run_program",
    "fork", "make_mem", "new_state",
]

if sys.getrecursionlimit() < 20000:
    sys.setrecursionlimit(20000)


class EvalError(Exception):
    """Runtime error carrying the offending expression."""

    def __init__(self, message: str, expr=None):
        self.expr = expr
        if expr is not None:
            message = f"{message} in {to_source(expr)}"
        super().__init__(message)


class _Undefined:
    def __repr__(self):
        return "#<undefined>"


UNDEF = _Undefined()


# --- procedure values -----------------------------------------------------

class Closure:
    __slots__ = ("nparams", "ndefs", "body", "env", "source")

    def __init__(self, nparams, ndefs, body, env, source):
        self.nparams = nparams
        self.ndefs = ndefs
        self.body = body
        self.env = env
        self.source = source

    def __repr__(self):
        return "#<procedure>"


class Builtin:
    """Deterministic primitive; ``stateful`` ones receive the state first."""
    __slots__ = ("name", "fn", "stateful")

    def __init__(self, name, fn, stateful=False):
        self.name = name
        self.fn = fn
        self.stateful = stateful

    def __repr__(self):
        return f"#<builtin {self.name}>"


class MemProc:
    __slots__ = ("proc", "mem_id")

    def __init__(self, proc, mem_id):
        self.proc = proc
        self.mem_id = mem_id

    def __repr__(self):
        return "#<mem procedure>"


class XrpInstance:
    __slots__ = ("handle", "kind")

    def __init__(self, handle, kind):
        self.handle = handle
        self.kind = kind

    def __repr__(self):
        return f"#<{self.kind} {self.handle}>"


_PROC_TYPES = (Closure, Builtin, MemProc, XrpInstance, Erp)


# --- interpreter state ----------------------------------------------------

class InterpState:
    __slots__ = ("globals", "applies", "rng", "memo", "xrps", "db", "site_counts",
                 "cursor", "predicts", "next_id", "forks")

    def __init__(self, rng: RngStream, db: RandomDB | None = None):
        self.globals: dict = {}
        self.applies = 0
        self.rng = rng
        self.memo: dict = {}
        self.xrps: dict = {}
        self.db = RandomDB() if db is None else db
        self.site_counts: dict = {}
        self.cursor = 0
        self.predicts: list = []
        self.next_id = 0
        self.forks = 0

    def address(self, site: int) -> Address:
        """Next address for an application of ``site`` in this trace."""
        sc = self.site_counts
        k = sc.get(site, 0)
        sc[site] = k + 1
        return Address(site, k)

    def draw(self, erp, params, site):
        sc = self.site_counts
        k = sc.get(site, 0)
        sc[site] = k + 1
        return self.db.record_or_replay(Address(site, k), erp, params, self.rng)

    def draw_xrp(self, inst: XrpInstance, site):
        addr = self.address(site)
        value, new_state = self.db.record_or_replay_xrp(addr, self.xrps[inst.handle], self.rng)
        self.xrps[inst.handle] = new_state
        return value


def new_state(seed: int = 0, *path: int, db: RandomDB | None = None) -> InterpState:
    return InterpState(RngStream(seed, *path), db)


def fork(state: InterpState, keep_replay: bool = False) -> InterpState:
    """Copy the entire interpreter memory; the copy evolves independently.

    The child's random stream is split from the parent's key with the
    parent's fork ordinal. Replay bookkeeping is dropped unless asked for, so
    descendants of a replayed trace sample fresh values.
    """
    child = InterpState.__new__(InterpState)
    child.globals = state.globals.copy()
    child.applies = state.applies
    child.rng = state.rng.split(state.forks)
    state.forks += 1
    child.memo = {k: v.copy() for k, v in state.memo.items()}
    child.xrps = state.xrps.copy()
    child.db = state.db.copy(keep_replay)
    child.site_counts = state.site_counts.copy()
    child.cursor = state.cursor
    child.predicts = state.predicts.copy()
    child.next_id = state.next_id
    child.forks = 0
    return child


# --- application ----------------------------------------------------------

def _check_memo_key(args, expr):
    for a in args:
        if isinstance(a, _PROC_TYPES):
            raise EvalError("cannot memoize on a procedure-valued argument", expr)
    return tuple(args)


def apply_proc(proc, args, st: InterpState, site: int = -1, expr=None):
    """Apply ``proc`` to evaluated ``args``, counting one application."""
    st.applies += 1
    t = type(proc)
    if t is Closure:
        if len(args) != proc.nparams:
            raise EvalError(f"arity mismatch: expected {proc.nparams} argument(s), got {len(args)}", expr)
        frame = [proc.env]
        frame += args
        if proc.ndefs:
            frame += [UNDEF] * proc.ndefs
        return proc.body(frame, st)
    if t is Builtin:
        try:
            if proc.stateful:
                return proc.fn(st, *args)
            return proc.fn(*args)
        except EvalError:
            raise
        except (TypeError, ValueError, IndexError, ArithmeticError, AttributeError) as exc:
            raise EvalError(f"{proc.name}: {exc}", expr) from None
    if t is MemProc:
        return _memo_lookup(proc, args, st, site, expr)
    if isinstance(proc, Erp):
        try:
            params = proc.check(args)
        except ParameterError as exc:
            raise EvalError(str(exc), expr) from None
        return st.draw(proc, params, site)
    if t is XrpInstance:
        if args:
            raise EvalError(f"{proc.kind} takes no arguments", expr)
        return st.draw_xrp(proc, site)
    raise EvalError(f"not a procedure: {to_source(proc)}", expr)


def make_mem(st: InterpState, proc):
    """Wrap ``proc`` so results are cached per argument tuple in ``st``."""
    if not isinstance(proc, _PROC_TYPES):
        raise EvalError(f"mem expects a procedure, got {to_source(proc)}")
    mid = st.next_id
    st.next_id += 1
    return MemProc(proc, mid)


def _make_xrp(kind):
    ctor = XRP_CONSTRUCTORS[kind]

    def make(st, *args):
        try:
            xstate = ctor(*args)
        except ParameterError as exc:
            raise EvalError(str(exc)) from None
        handle = st.next_id
        st.next_id += 1
        st.xrps[handle] = xstate
        return XrpInstance(handle, kind)
    return make


# --- builtins -------------------------------------------------------------

def _num(x):
    if type(x) is float:
        return x
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError(f"expected a number, got {to_source(x)}")
    return float(x)


def _add(*xs):
    total = 0.0
    for x in xs:
        total += _num(x)
    return total


def _sub(x, *ys):
    if not ys:
        return -_num(x)
    r = _num(x)
    for y in ys:
        r -= _num(y)
    return r


def _mul(*xs):
    r = 1.0
    for x in xs:
        r *= _num(x)
    return r


def _div(x, *ys):
    if not ys:
        ys, x = (x,), 1.0
    r = _num(x)
    for y in ys:
        y = _num(y)
        if y == 0.0:
            raise ZeroDivisionError("division by zero")
        r /= y
    return r


def _chain(op):
    def compare(*xs):
        if len(xs) < 2:
            raise TypeError("comparison needs at least two arguments")
        for a, b in zip(xs, xs[1:]):
            if not op(_num(a), _num(b)):
                return False
        return True
    return compare


def _eq(*xs):
    if len(xs) < 2:
        raise TypeError("= needs at least two arguments")
    first = xs[0]
    return all(_values_equal(first, x) for x in xs[1:])


def _values_equal(a, b):
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return a == b


def _log(x):
    x = _num(x)
    if x == 0.0:
        return -math.inf
    return math.log(x)


def _list_arg(x, who):
    if not isinstance(x, tuple):
        raise TypeError(f"{who} expects a list, got {to_source(x)}")
    return x


def _car(x):
    x = _list_arg(x, "car")
    if not x:
        raise IndexError("car of empty list")
    return x[0]


def _cdr(x):
    x = _list_arg(x, "cdr")
    if not x:
        raise IndexError("cdr of empty list")
    return x[1:]


def _cons(a, b):
    return (a,) + _list_arg(b, "cons")


def _nth(xs, i):
    xs = _list_arg(xs, "nth")
    i = _num(i)
    if not i.is_integer() or not 0 <= i < len(xs):
        raise IndexError(f"index {to_source(i)} out of range")
    return xs[int(i)]


def _unique(xs):
    out = []
    for x in _list_arg(xs, "unique"):
        if not any(_values_equal(x, y) for y in out):
            out.append(x)
    return tuple(out)


def _append(*xss):
    out = ()
    for xs in xss:
        out += _list_arg(xs, "append")
    return out


def _range(a, b=None):
    if b is None:
        a, b = 0.0, a
    return tuple(float(i) for i in range(int(_num(a)), int(_num(b))))


_BUILTIN_FNS = {
    "+": _add, "-": _sub, "*": _mul, "/": _div,
    "=": _eq, "<": _chain(lambda a, b: a < b), ">": _chain(lambda a, b: a > b),
    "<=": _chain(lambda a, b: a <= b), ">=": _chain(lambda a, b: a >= b),
    "not": lambda x: x is False,
    "eq?": lambda a, b: a is b or _values_equal(a, b),
    "equal?": _values_equal,
    "abs": lambda x: abs(_num(x)),
    "sqrt": lambda x: math.sqrt(_num(x)),
    "exp": lambda x: math.exp(_num(x)),
    "log": _log,
    "pow": lambda x, y: math.pow(_num(x), _num(y)),
    "expt": lambda x, y: math.pow(_num(x), _num(y)),
    "floor": lambda x: float(math.floor(_num(x))),
    "round": lambda x: float(round(_num(x))),
    "mod": lambda a, b: math.fmod(_num(a), _num(b)) if _num(b) != 0 else _div(1.0, 0.0),
    "min": lambda *xs: min(_num(x) for x in xs),
    "max": lambda *xs: max(_num(x) for x in xs),
    "inc": lambda x: _num(x) + 1.0,
    "dec": lambda x: _num(x) - 1.0,
    "list": lambda *xs: xs,
    "car": _car, "first": _car,
    "cdr": _cdr, "rest": _cdr,
    "second": lambda xs: _nth(xs, 1.0),
    "cons": _cons,
    "nth": _nth, "get": _nth,
    "length": lambda xs: float(len(_list_arg(xs, "length"))),
    "count": lambda xs: float(len(_list_arg(xs, "count"))),
    "null?": lambda xs: xs == (),
    "empty?": lambda xs: len(_list_arg(xs, "empty?")) == 0,
    "append": _append,
    "reverse": lambda xs: _list_arg(xs, "reverse")[::-1],
    "unique": _unique,
    "sum": lambda xs: math.fsum(_num(x) for x in _list_arg(xs, "sum")),
    "range": _range,
    "number?": lambda x: isinstance(x, float) and not isinstance(x, bool),
    "boolean?": lambda x: isinstance(x, bool),
    "symbol?": lambda x: isinstance(x, Symbol),
    "list?": lambda x: isinstance(x, tuple),
    "procedure?": lambda x: isinstance(x, _PROC_TYPES),
}

BUILTINS: dict = {name: Builtin(name, fn) for name, fn in _BUILTIN_FNS.items()}
BUILTINS["mem"] = Builtin("mem", make_mem, stateful=True)
for _kind in XRP_CONSTRUCTORS:
    BUILTINS[_kind] = Builtin(_kind, _make_xrp(_kind), stateful=True)
BUILTINS.update(ERPS)

RANDOM_PRIMITIVE_NAMES = frozenset(ERPS)
SPECIAL_FORMS = frozenset({"quote", "if", "begin", "lambda", "let", "define", "cond", "and", "or"})


def builtin_names() -> frozenset:
    return frozenset(BUILTINS) | SPECIAL_FORMS


# --- compiler -------------------------------------------------------------

class _Scope:
    __slots__ = ("names", "parent", "defined")

    def __init__(self, names: dict, parent, defined=()):
        self.names = names
        self.parent = parent
        # slots filled by an internal define, which may be read too early
        self.defined = frozenset(names[d] for d in defined)


def _quote(x):
    if isinstance(x, SList):
        return tuple(_quote(e) for e in x)
    return x


def _body_defines(body) -> list:
    names = []
    for e in body:
        if isinstance(e, SList) and e and e[0] == "define" and len(e) >= 2:
            t = e[1]
            name = t[0] if isinstance(t, SList) and t else t
            if isinstance(name, Symbol) and name not in names:
                names.append(name)
        elif isinstance(e, SList) and e and e[0] == "begin":
            names += [n for n in _body_defines(e[1:]) if n not in names]
    return names


class Compiler:
    """Compiles s-expressions to closures; one instance per program."""

    def __init__(self, global_names=()):
        self.global_names = set(global_names)
        self._sites = itertools.count()

    def new_site(self) -> int:
        return next(self._sites)

    # entry points

    def compile(self, x, scope=None):
        if isinstance(x, Symbol):
            return self._ref(x, scope)
        if isinstance(x, SList):
            if not x:
                return lambda env, st: ()
            head = x[0]
            if isinstance(head, Symbol) and head in SPECIAL_FORMS and not self._shadowed(head, scope):
                return getattr(self, "_form_" + head)(x, scope)
            return self._application(x, scope)
        if isinstance(x, String):
            s = str(x)
            return lambda env, st: s
        if isinstance(x, (bool, float, int)):
            return _constant(x if isinstance(x, (bool, float)) else float(x))
        raise EvalError("cannot evaluate", x)

    def _shadowed(self, name, scope) -> bool:
        while scope is not None:
            if name in scope.names:
                return True
            scope = scope.parent
        return name in self.global_names

    # variables

    def _ref(self, name, scope):
        depth = 0
        s = scope
        while s is not None:
            idx = s.names.get(name)
            if idx is not None:
                return _local_ref(depth, idx, name, idx in s.defined)
            s = s.parent
            depth += 1
        if name in self.global_names or name not in BUILTINS:
            def gref(env, st):
                try:
                    return st.globals[name]
                except KeyError:
                    if name in BUILTINS:
                        return BUILTINS[name]
                    raise EvalError(f"unbound symbol {name!r}", name) from None
            return gref
        value = BUILTINS[name]
        return lambda env, st: value

    # special forms

    def _form_quote(self, x, scope):
        if len(x) != 2:
            raise EvalError("quote takes one argument", x)
        value = _quote(x[1])
        return lambda env, st: value

    def _form_if(self, x, scope):
        if len(x) not in (3, 4):
            raise EvalError("if takes a test, a consequent and an optional alternative", x)
        test = self.compile(x[1], scope)
        then = self.compile(x[2], scope)
        if len(x) == 4:
            alt = self.compile(x[3], scope)
        else:
            alt = lambda env, st: None  # noqa: E731

        def node(env, st):
            if test(env, st) is not False:
                return then(env, st)
            return alt(env, st)
        return node

    def _sequence(self, exprs, scope):
        nodes = [self.compile(e, scope) for e in exprs]
        if not nodes:
            return lambda env, st: None
        if len(nodes) == 1:
            return nodes[0]
        head, last = nodes[:-1], nodes[-1]

        def node(env, st):
            for n in head:
                n(env, st)
            return last(env, st)
        return node

    def _form_begin(self, x, scope):
        return self._sequence(x[1:], scope)

    def _form_lambda(self, x, scope):
        if len(x) < 3 or not isinstance(x[1], SList):
            raise EvalError("lambda needs a parameter list and a body", x)
        params = list(x[1])
        for p in params:
            if not isinstance(p, Symbol):
                raise EvalError("lambda parameters must be symbols", x)
        if len(set(params)) != len(params):
            raise EvalError("duplicate lambda parameter", x)
        return self._make_lambda(params, x[2:], scope, x)

    def _make_lambda(self, params, body, scope, source):
        defines = [d for d in _body_defines(body) if d not in params]
        names = {p: i + 1 for i, p in enumerate(params)}
        for d in defines:
            names[d] = len(names) + 1
        body_node = self._sequence(body, _Scope(names, scope, defines))
        nparams, ndefs = len(params), len(defines)
        return lambda env, st: Closure(nparams, ndefs, body_node, env, source)

    def _form_let(self, x, scope):
        if len(x) < 3 or not isinstance(x[1], SList):
            raise EvalError("let needs a binding list and a body", x)
        names, inits = [], []
        for b in x[1]:
            if not (isinstance(b, SList) and len(b) == 2 and isinstance(b[0], Symbol)):
                raise EvalError("malformed let binding", x)
            names.append(b[0])
            inits.append(self.compile(b[1], scope))
        defines = [d for d in _body_defines(x[2:]) if d not in names]
        slots = {n: i + 1 for i, n in enumerate(names)}
        for d in defines:
            slots[d] = len(slots) + 1
        body = self._sequence(x[2:], _Scope(slots, scope, defines))
        pad = [UNDEF] * len(defines)

        def node(env, st):
            frame = [env]
            for init in inits:
                frame.append(init(env, st))
            if pad:
                frame += pad
            return body(frame, st)
        return node

    def _form_define(self, x, scope):
        if len(x) < 3:
            raise EvalError("define needs a name and a value", x)
        target = x[1]
        if isinstance(target, SList):
            if not target or not all(isinstance(p, Symbol) for p in target):
                raise EvalError("malformed define", x)
            name = target[0]
            value = self._make_lambda(list(target[1:]), x[2:], scope, x)
        else:
            if len(x) != 3 or not isinstance(target, Symbol):
                raise EvalError("malformed define", x)
            name = target
            value = None
        if scope is None:
            self.global_names.add(name)
            if value is None:
                value = self.compile(x[2], scope)

            def gdef(env, st):
                st.globals[name] = value(env, st)
                return None
            return gdef
        idx = scope.names.get(name)
        if idx is None:
            raise EvalError("define is only allowed at the top of a body", x)
        if value is None:
            value = self.compile(x[2], scope)

        def ldef(env, st):
            env[idx] = value(env, st)
            return None
        return ldef

    def _form_cond(self, x, scope):
        clauses = []
        for clause in x[1:]:
            if not isinstance(clause, SList) or not clause:
                raise EvalError("malformed cond clause", x)
            if clause[0] == "else":
                test = None
            else:
                test = self.compile(clause[0], scope)
            body = self._sequence(clause[1:], scope) if len(clause) > 1 else None
            clauses.append((test, body))

        def node(env, st):
            for test, body in clauses:
                if test is None:
                    return body(env, st) if body is not None else None
                t = test(env, st)
                if t is not False:
                    return body(env, st) if body is not None else t
            return None
        return node

    def _form_and(self, x, scope):
        parts = [self.compile(e, scope) for e in x[1:]]

        def node(env, st):
            v = True
            for p in parts:
                v = p(env, st)
                if v is False:
                    return False
            return v
        return node

    def _form_or(self, x, scope):
        parts = [self.compile(e, scope) for e in x[1:]]

        def node(env, st):
            for p in parts:
                v = p(env, st)
                if v is not False:
                    return v
            return False
        return node

    # applications

    def _application(self, x, scope):
        site = self.new_site()
        head = x[0]
        args = [self.compile(e, scope) for e in x[1:]]
        if isinstance(head, Symbol) and head in BUILTINS and not self._shadowed(head, scope):
            target = BUILTINS[head]
            if isinstance(target, Erp):
                return _erp_app(target, args, site, x)
            if not target.stateful:
                if len(args) == 2 and head in _BINARY_FLOAT_OPS:
                    return _binary_app(target, _BINARY_FLOAT_OPS[head], args, x)
                return _builtin_app(target, args, x)
        op = self.compile(head, scope)
        return _general_app(op, args, site, x)


def _local_ref(depth, idx, name, maybe_undefined):
    if not maybe_undefined:
        if depth == 0:
            return lambda env, st: env[idx]
        if depth == 1:
            return lambda env, st: env[0][idx]
    if depth == 0:
        def ref(env, st):
            v = env[idx]
            if v is UNDEF:
                raise EvalError(f"symbol {name!r} used before definition", name)
            return v
    elif depth == 1:
        def ref(env, st):
            v = env[0][idx]
            if v is UNDEF:
                raise EvalError(f"symbol {name!r} used before definition", name)
            return v
    else:
        def ref(env, st):
            for _ in range(depth):
                env = env[0]
            v = env[idx]
            if v is UNDEF:
                raise EvalError(f"symbol {name!r} used before definition", name)
            return v
    return ref


_PY_ERRORS = (TypeError, ValueError, IndexError, ArithmeticError, AttributeError)


def _constant(value):
    def node(env, st):
        return value
    node.constant = value
    return node


_BINARY_FLOAT_OPS = {
    "+": operator.add, "-": operator.sub, "*": operator.mul,
    "=": operator.eq, "<": operator.lt, ">": operator.gt,
    "<=": operator.le, ">=": operator.ge,
}


def _binary_app(target, op, args, expr):
    """Two-argument arithmetic/comparison with a float fast path."""
    fn = target.fn
    name = target.name
    a, b = args

    def slow(x, y):
        try:
            return fn(x, y)
        except _PY_ERRORS as exc:
            raise EvalError(f"{name}: {exc}", expr) from None

    if hasattr(b, "constant") and type(b.constant) is float:
        c = b.constant

        def node(env, st):
            x = a(env, st)
            st.applies += 1
            if type(x) is float:
                return op(x, c)
            return slow(x, c)
        return node

    def node(env, st):
        x = a(env, st)
        y = b(env, st)
        st.applies += 1
        if type(x) is float and type(y) is float:
            return op(x, y)
        return slow(x, y)
    return node


def _builtin_app(target, args, expr):
    fn = target.fn
    name = target.name
    if len(args) == 1:
        a, = args

        def node(env, st):
            x = a(env, st)
            st.applies += 1
            try:
                return fn(x)
            except _PY_ERRORS as exc:
                raise EvalError(f"{name}: {exc}", expr) from None
    elif len(args) == 2:
        a, b = args

        def node(env, st):
            x = a(env, st)
            y = b(env, st)
            st.applies += 1
            try:
                return fn(x, y)
            except _PY_ERRORS as exc:
                raise EvalError(f"{name}: {exc}", expr) from None
    else:
        def node(env, st):
            vals = [a(env, st) for a in args]
            st.applies += 1
            try:
                return fn(*vals)
            except _PY_ERRORS as exc:
                raise EvalError(f"{name}: {exc}", expr) from None
    return node


def _erp_app(erp, args, site, expr):
    check = erp.check

    def node(env, st):
        vals = [a(env, st) for a in args]
        st.applies += 1
        try:
            params = check(vals)
        except ParameterError as exc:
            raise EvalError(str(exc), expr) from None
        return st.draw(erp, params, site)
    return node


def _memo_lookup(proc, args, st, site, expr):
    if len(args) == 1 and type(args[0]) is float:
        key = (args[0],)
    else:
        key = _check_memo_key(args, expr)
    table = st.memo.get(proc.mem_id)
    if table is None:
        table = st.memo[proc.mem_id] = {}
    else:
        try:
            return table[key]
        except KeyError:
            pass
    value = apply_proc(proc.proc, args, st, site, expr)
    st.memo[proc.mem_id][key] = value
    return value


def _arity_error(proc, n, expr):
    return EvalError(f"arity mismatch: expected {proc.nparams} argument(s), got {n}", expr)


def _general_app(op, args, site, expr):
    """Application whose operator is only known at run time."""
    if len(args) == 0:
        def node(env, st):
            proc = op(env, st)
            if type(proc) is Closure:
                st.applies += 1
                if proc.nparams != 0:
                    raise _arity_error(proc, 0, expr)
                frame = [proc.env]
                if proc.ndefs:
                    frame += [UNDEF] * proc.ndefs
                return proc.body(frame, st)
            return apply_proc(proc, [], st, site, expr)
        return node

    if len(args) == 1:
        a, = args

        def node(env, st):
            proc = op(env, st)
            x = a(env, st)
            t = type(proc)
            if t is Closure:
                st.applies += 1
                if proc.nparams != 1:
                    raise _arity_error(proc, 1, expr)
                if proc.ndefs:
                    return proc.body([proc.env, x] + [UNDEF] * proc.ndefs, st)
                return proc.body([proc.env, x], st)
            if t is MemProc:
                st.applies += 1
                return _memo_lookup(proc, [x], st, site, expr)
            return apply_proc(proc, [x], st, site, expr)
        return node

    def node(env, st):
        proc = op(env, st)
        vals = [a(env, st) for a in args]
        t = type(proc)
        if t is Closure:
            st.applies += 1
            if len(vals) != proc.nparams:
                raise _arity_error(proc, len(vals), expr)
            frame = [proc.env]
            frame += vals
            if proc.ndefs:
                frame += [UNDEF] * proc.ndefs
            return proc.body(frame, st)
        if t is MemProc:
            st.applies += 1
            return _memo_lookup(proc, vals, st, site, expr)
        return apply_proc(proc, vals, st, site, expr)
    return node


# --- directives -----------------------------------------------------------

class Bound(NamedTuple):
    symbol: str


class Scored(NamedTuple):
    log_weight: float
    y: object


class Predicted(NamedTuple):
    label: str
    value: object


class CompiledDirective(NamedTuple):
    kind: str            # "assume" | "observe" | "predict"
    directive: object
    node: object         # value node, or argument nodes for observe
    erp: object = None
    label: str = ""


def compile_program(program: Program, check: bool = True) -> list:
    """Compile (and by default validate) a program; cached on the program."""
    if program._compiled is not None:
        return program._compiled
    if check:
        diags = validate(program)
        if diags:
            raise ValidationError(diags)
    comp = Compiler(d.symbol for d in program.directives if isinstance(d, Assume))
    out = []
    for d in program.directives:
        if isinstance(d, Assume):
            out.append(CompiledDirective("assume", d, comp.compile(d.expr)))
        elif isinstance(d, Observe):
            erp = ERPS.get(d.expr[0])
            if erp is None:
                raise EvalError("observe needs a built-in random primitive", d.expr)
            out.append(CompiledDirective(
                "observe", d, [comp.compile(e) for e in d.expr[1:]], erp))
        elif isinstance(d, Predict):
            out.append(CompiledDirective("predict", d, comp.compile(d.expr), None, d.label))
        else:
            raise TypeError(f"not a directive: {d!r}")
    program._compiled = out
    return out


def run_directive(cd: CompiledDirective, st: InterpState):
    """Execute one compiled directive against ``st``."""
    st.cursor += 1
    kind = cd.kind
    if kind == "assume":
        value = cd.node(None, st)
        st.globals[cd.directive.symbol] = value
        return Bound(cd.directive.symbol)
    if kind == "observe":
        vals = [a(None, st) for a in cd.node]
        st.applies += 1
        try:
            params = cd.erp.check(vals)
        except ParameterError as exc:
            raise EvalError(str(exc), cd.directive.expr) from None
        y = cd.directive.value
        ll = cd.erp.log_pdf(params, y)
        st.db.observe_log_likes.append(ll)
        return Scored(ll, y)
    label = cd.label
    value = cd.node(None, st)
    st.predicts.append((label, value))
    return Predicted(label, value)


def run_program(program: Program, st: InterpState) -> list:
    """Run every directive in order; returns the directive results."""
    return [run_directive(cd, st) for cd in compile_program(program)]


def eval_expr(expr, st: InterpState | None = None, env=None):
    """Evaluate a standalone expression (no lexical frame) in ``st``."""
    if isinstance(expr, str) and not isinstance(expr, Symbol):
        from .sexpr import read_one
        expr = read_one(expr)
    if st is None:
        st = new_state(0)
    comp = Compiler(st.globals.keys())
    return comp.compile(expr)(env, st)
