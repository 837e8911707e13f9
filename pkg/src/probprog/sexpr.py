"""Reader, printer and directive parser for the bracketed-directive Lisp dialect.

A program is a sequence of bracketed directives::

    [assume r (poisson 4)]
    [observe (poisson l) 6]
    [predict r]

Everything inside a directive is an ordinary parenthesised s-expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence, Union

__all__ = [
    "LexError", "ParseError", "ValidationError", "Diagnostic",
    "Token", "Symbol", "String", "SList",
    "Assume", "Observe", "Predict", "Program",
    "tokenize", "read", "read_one", "to_source", "parse_program", "parse",
    "validate", "load_program", "constant_value", "free_symbols",
]


class LexError(ValueError):
    def __init__(self, message: str, pos: tuple[int, int]):
        super().__init__(f"{message} at line {pos[0]}, column {pos[1]}")
        self.pos = pos


class ParseError(ValueError):
    def __init__(self, message: str, pos: tuple[int, int] | None = None):
        where = f" at line {pos[0]}, column {pos[1]}" if pos else ""
        super().__init__(message + where)
        self.pos = pos


class Symbol(str):
    """An interned-by-value identifier."""
    __slots__ = ()

    def __repr__(self):
        return f"Symbol({str(self)!r})"


class String(str):
    """A string literal, kept distinct from symbols."""
    __slots__ = ()

    def __repr__(self):
        return f"String({str(self)!r})"


class SList(list):
    """A parenthesised (or bracketed) list of s-expressions.

    ``bracket`` marks a top-level directive form; ``pos`` is the opener's
    (line, column). Neither takes part in equality.
    """

    def __init__(self, items=(), bracket: bool = False, pos: tuple[int, int] | None = None):
        super().__init__(items)
        self.bracket = bracket
        self.pos = pos

    __hash__ = None  # type: ignore[assignment]


Atom = Union[Symbol, String, float, bool]
SExpr = Union[Atom, SList]


class Token(NamedTuple):
    kind: str
    text: str
    pos: tuple[int, int]


_DELIMS = {"[": "lbracket", "]": "rbracket", "(": "lparen", ")": "rparen"}
_BOOLEANS = {"true": True, "false": False, "#t": True, "#f": False}
_SYMBOL_CHARS = set("+-*/\\<>=!?_.:%&^~$#'")


def _number(text: str) -> float | None:
    if text in ("+", "-", ".", "...") or not any(c.isdigit() for c in text):
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def tokenize(text: str) -> list[Token]:
    """Split source text into tokens, dropping whitespace and ``;`` comments."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    line, col = 1, 1

    def advance(k: int) -> None:
        nonlocal i, line, col
        for ch in text[i:i + k]:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        i += k

    while i < n:
        ch = text[i]
        if ch.isspace():
            advance(1)
        elif ch == ";":
            j = text.find("\n", i)
            advance((n if j < 0 else j) - i)
        elif ch in _DELIMS:
            tokens.append(Token(_DELIMS[ch], ch, (line, col)))
            advance(1)
        elif ch == '"':
            start = (line, col)
            j = i + 1
            while j < n and text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            if j >= n:
                raise LexError("unterminated string", start)
            tokens.append(Token("string", text[i:j + 1], start))
            advance(j + 1 - i)
        elif ch.isalnum() or ch in _SYMBOL_CHARS:
            start = (line, col)
            j = i
            while j < n and not text[j].isspace() and text[j] not in '()[];"':
                if not (text[j].isalnum() or text[j] in _SYMBOL_CHARS):
                    raise LexError(f"illegal character {text[j]!r}", (line, col + j - i))
                j += 1
            word = text[i:j]
            if word in _BOOLEANS:
                kind = "boolean"
            elif _number(word) is not None:
                kind = "number"
            else:
                kind = "symbol"
            tokens.append(Token(kind, word, start))
            advance(j - i)
        else:
            raise LexError(f"illegal character {ch!r}", (line, col))
    return tokens


def _unescape(body: str) -> str:
    out = []
    it = iter(body)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"n": "\n", "t": "\t"}.get(nxt, nxt))
        else:
            out.append(ch)
    return "".join(out)


def _atom(tok: Token) -> Atom:
    if tok.kind == "number":
        return float(tok.text)
    if tok.kind == "boolean":
        return _BOOLEANS[tok.text]
    if tok.kind == "string":
        return String(_unescape(tok.text[1:-1]))
    return Symbol(tok.text)


def read(tokens: Sequence[Token]) -> list[SExpr]:
    """Assemble tokens into nested lists; brackets mark directive forms."""
    out: list[SExpr] = []
    # each open frame: (closing kind, list being built)
    stack: list[tuple[str, SList]] = []
    for tok in tokens:
        if tok.kind in ("lparen", "lbracket"):
            closer = "rparen" if tok.kind == "lparen" else "rbracket"
            stack.append((closer, SList(bracket=tok.kind == "lbracket", pos=tok.pos)))
        elif tok.kind in ("rparen", "rbracket"):
            if not stack:
                raise ParseError(f"unexpected {tok.text!r}", tok.pos)
            closer, lst = stack.pop()
            if closer != tok.kind:
                raise ParseError(f"mismatched {tok.text!r} for opener", lst.pos)
            if stack:
                stack[-1][1].append(lst)
            else:
                out.append(lst)
        else:
            atom = _atom(tok)
            if stack:
                stack[-1][1].append(atom)
            else:
                out.append(atom)
    if stack:
        raise ParseError("unbalanced delimiter, opener never closed", stack[-1][1].pos)
    return out


def read_one(text: str) -> SExpr:
    forms = read(tokenize(text))
    if len(forms) != 1:
        raise ParseError(f"expected exactly one expression, got {len(forms)}")
    return forms[0]


def _format_number(x: float) -> str:
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def to_source(x) -> str:
    """Print an s-expression (or runtime value) back to source syntax."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, String):
        return '"' + x.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'
    if isinstance(x, str):
        return str(x)
    if isinstance(x, (int, float)):
        return _format_number(float(x))
    if isinstance(x, SList):
        open_, close = ("[", "]") if x.bracket else ("(", ")")
        return open_ + " ".join(to_source(e) for e in x) + close
    if isinstance(x, (list, tuple)):
        return "(" + " ".join(to_source(e) for e in x) + ")"
    if x is None:
        return "nil"
    return str(x)


# --- directives ----------------------------------------------------------

@dataclass(frozen=True)
class Assume:
    symbol: Symbol
    expr: SExpr
    line_index: int

    def __str__(self):
        return f"[assume {self.symbol} {to_source(self.expr)}]"


@dataclass(frozen=True)
class Observe:
    expr: SList
    value: object
    line_index: int
    value_expr: SExpr = None

    def __str__(self):
        shown = self.value_expr if self.value_expr is not None else self.value
        return f"[observe {to_source(self.expr)} {to_source(shown)}]"


@dataclass(frozen=True)
class Predict:
    expr: SExpr
    line_index: int

    @property
    def label(self) -> str:
        return to_source(self.expr)

    def __str__(self):
        return f"[predict {to_source(self.expr)}]"


Directive = Union[Assume, Observe, Predict]


@dataclass
class Program:
    directives: list
    source_name: str = "<program>"
    _compiled: object = field(default=None, repr=False, compare=False)

    def __iter__(self) -> Iterator[Directive]:
        return iter(self.directives)

    def __len__(self):
        return len(self.directives)

    def to_source(self) -> str:
        return "\n".join(str(d) for d in self.directives) + "\n"


_CONST_OPS = {
    "+": lambda *a: sum(a),
    "-": lambda a, *b: a - sum(b) if b else -a,
    "*": lambda *a: math.prod(a),
    "/": lambda a, *b: a / math.prod(b) if b else 1.0 / a,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
}


def constant_value(expr: SExpr):
    """Evaluate a literal or arithmetic-over-literals expression.

    Raises ``ValueError`` when the expression is not constant-valued.
    """
    if isinstance(expr, bool):
        return expr
    if isinstance(expr, float):
        return expr
    if isinstance(expr, SList) and expr and isinstance(expr[0], Symbol) and expr[0] in _CONST_OPS:
        args = [constant_value(e) for e in expr[1:]]
        if any(isinstance(a, bool) for a in args):
            raise ValueError("arithmetic on booleans")
        try:
            return float(_CONST_OPS[expr[0]](*args))
        except (ArithmeticError, TypeError, ValueError) as exc:
            raise ValueError(f"cannot evaluate {to_source(expr)}: {exc}") from None
    raise ValueError(f"not a constant expression: {to_source(expr)}")


def parse_program(sexprs: Sequence[SExpr], source_name: str = "<program>") -> Program:
    """Turn top-level bracketed forms into directives."""
    directives: list[Directive] = []
    for i, form in enumerate(sexprs):
        pos = getattr(form, "pos", None)
        if not isinstance(form, SList) or not form.bracket:
            raise ParseError("top-level form must be a bracketed directive", pos)
        if not form or not isinstance(form[0], Symbol):
            raise ParseError("directive must start with a name", pos)
        head = form[0]
        if head == "assume":
            if len(form) != 3 or not isinstance(form[1], Symbol):
                raise ParseError("assume needs a symbol and one expression", pos)
            directives.append(Assume(form[1], form[2], i))
        elif head == "observe":
            if len(form) != 3:
                raise ParseError("observe needs an expression and a value", pos)
            if not isinstance(form[1], SList) or not form[1]:
                raise ParseError("observe expression must be an application", pos)
            try:
                value = constant_value(form[2])
            except ValueError as exc:
                raise ParseError(f"observe value must be constant ({exc})", pos) from None
            directives.append(Observe(form[1], value, i, form[2]))
        elif head == "predict":
            if len(form) != 2:
                raise ParseError("predict needs exactly one expression", pos)
            directives.append(Predict(form[1], i))
        else:
            raise ParseError(f"unknown directive {head!r}", pos)
    return Program(directives, source_name)


def parse(text: str, source_name: str = "<program>") -> Program:
    return parse_program(read(tokenize(text)), source_name)


def load_program(path) -> Program:
    from pathlib import Path
    p = Path(path)
    return parse(p.read_text(encoding="utf-8"), p.name)


# --- validation ----------------------------------------------------------

class Diagnostic(NamedTuple):
    directive_index: int
    message: str

    def __str__(self):
        return f"directive {self.directive_index}: {self.message}"


class ValidationError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics


_BINDING_FORMS = {"lambda", "let", "define", "quote", "if", "begin", "cond", "and", "or", "else"}


def _free_symbols(expr: SExpr, bound: frozenset, out: set) -> None:
    if isinstance(expr, Symbol):
        if expr not in bound:
            out.add(expr)
        return
    if not isinstance(expr, SList) or not expr:
        return
    head = expr[0]
    if head == "quote":
        return
    if head == "lambda" and len(expr) >= 3 and isinstance(expr[1], SList):
        inner = bound | set(expr[1]) | _body_defines(expr[2:])
        for e in expr[2:]:
            _free_symbols(e, frozenset(inner), out)
        return
    if head == "let" and len(expr) >= 3 and isinstance(expr[1], SList):
        names = set()
        for b in expr[1]:
            if isinstance(b, SList) and len(b) == 2:
                names.add(b[0])
                _free_symbols(b[1], bound, out)
        inner = bound | names | _body_defines(expr[2:])
        for e in expr[2:]:
            _free_symbols(e, frozenset(inner), out)
        return
    if head == "define" and len(expr) >= 3:
        target = expr[1]
        if isinstance(target, SList) and target:
            inner = bound | {target[0]} | set(target[1:]) | _body_defines(expr[2:])
            for e in expr[2:]:
                _free_symbols(e, frozenset(inner), out)
        else:
            _free_symbols(expr[2], bound | {target}, out)
        return
    if head == "cond":
        for clause in expr[1:]:
            if isinstance(clause, SList):
                for i, e in enumerate(clause):
                    if i == 0 and e == "else":
                        continue
                    _free_symbols(e, bound, out)
        return
    start = 1 if isinstance(head, Symbol) and head in _BINDING_FORMS else 0
    for e in expr[start:]:
        _free_symbols(e, bound, out)


def free_symbols(expr: SExpr) -> set:
    """Symbols referenced by ``expr`` that it does not bind itself."""
    out: set = set()
    _free_symbols(expr, frozenset(), out)
    return out


def _body_defines(body) -> set:
    names = set()
    for e in body:
        if isinstance(e, SList) and e and e[0] == "define" and len(e) >= 2:
            t = e[1]
            names.add(t[0] if isinstance(t, SList) and t else t)
        elif isinstance(e, SList) and e and e[0] == "begin":
            names |= _body_defines(e[1:])
    return names


def validate(program: Program, builtins=None, random_primitives=None) -> list[Diagnostic]:
    """Collect every diagnostic for ``program``; an empty list means valid.

    Checks that observe heads are built-in random primitives, that assumed
    symbols are unique, and that no directive references an unbound symbol.
    """
    if builtins is None or random_primitives is None:
        from . import interp
        builtins = interp.builtin_names() if builtins is None else builtins
        random_primitives = interp.RANDOM_PRIMITIVE_NAMES if random_primitives is None else random_primitives
    diags: list[Diagnostic] = []
    defined: set = set()
    for i, d in enumerate(program.directives):
        if isinstance(d, Assume):
            if d.symbol in defined:
                diags.append(Diagnostic(i, f"duplicate assume of symbol {d.symbol!r}"))
            defined.add(d.symbol)
            visible = defined
            expr = d.expr
        elif isinstance(d, Observe):
            head = d.expr[0] if d.expr else None
            if not isinstance(head, Symbol) or head not in random_primitives or head in defined:
                diags.append(Diagnostic(
                    i, f"outermost procedure {to_source(head)!r} of observe is not a built-in random primitive"))
            if isinstance(d.value, bool) is False and not isinstance(d.value, float):
                diags.append(Diagnostic(i, "observed value must be numeric or boolean"))
            visible = defined
            expr = d.expr
        else:
            visible = defined
            expr = d.expr
        free: set = set()
        _free_symbols(expr, frozenset(visible), free)
        for name in sorted(free - set(builtins)):
            diags.append(Diagnostic(i, f"unbound symbol {name!r}"))
    return diags
