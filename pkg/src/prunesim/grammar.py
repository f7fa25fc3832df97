"""Parametric L-system grammars: parser, canonical printer, rewriting and turtle interpretation.

Grammar files are line oriented; statements end at a newline or ``;``.
See ``docs/grammar.md`` for the EBNF.  Example::

    const shrink = 0.8
    axiom: !(0.05) A(1)
    A(l) : l > 0.05 -> F(l) [ +(30) A(l*shrink) ] A(l*shrink)
    B -> 1: F B | 2: F

Angles in symbol parameters are degrees (``acos`` returns degrees too); the
turtle works in radians.  An indented line continues the statement above it.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "GrammarSyntaxError",
    "ResourceError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "SymbolTemplate",
    "Successor",
    "Rule",
    "Grammar",
    "Symbol",
    "SymbolString",
    "TurtleConfig",
    "Skeleton",
    "parse_grammar",
    "format_grammar",
    "parse_symbols",
    "rewrite",
    "interpret",
    "DEFAULT_SYMBOL_BUDGET",
]

DEFAULT_SYMBOL_BUDGET = 1_000_000

TURTLE_SYMBOLS = frozenset("+-&^\\/![]")
RESERVED = frozenset({"axiom", "const"})


class GrammarSyntaxError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class ResourceError(RuntimeError):
    """Raised when a rewrite exceeds its symbol budget."""


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Num | Var | Neg | BinOp | Call


@dataclass(frozen=True)
class SymbolTemplate:
    name: str
    args: tuple = ()


@dataclass(frozen=True)
class Successor:
    weight: float
    symbols: tuple


@dataclass(frozen=True)
class Rule:
    predecessor: str
    params: tuple
    guard: Expr | None
    successors: tuple

    @property
    def total_weight(self) -> float:
        return sum(s.weight for s in self.successors)


@dataclass(frozen=True)
class Grammar:
    axiom: tuple
    rules: tuple
    constants: tuple = ()

    @property
    def constant_map(self) -> dict:
        return dict(self.constants)

    def __str__(self) -> str:
        return format_grammar(self)


# ------------------------------------------------------------------ tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|<=|>=|==|!=|[-+*/()<>,;:|=&^\\!\[\]])
    """,
    re.VERBOSE,
)


_CONTINUATION_RE = re.compile(r"[ \t]+[^ \t\r\n#]")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise GrammarSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            # an indented, non-blank next line continues the current statement
            if not _CONTINUATION_RE.match(text, m.end()):
                tokens.append(_Tok("end", "\n", line, pos - line_start + 1))
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(_Tok("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.constants: dict[str, float] = {}

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise GrammarSyntaxError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind in ("end", "eof"):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def at_terminator(self) -> bool:
        return self.tok.kind in ("end", "eof") or self.tok.text == ";"

    # statements
    def parse(self) -> Grammar:
        axiom = None
        rules = []
        while self.tok.kind != "eof":
            if self.at_terminator():
                self.advance()
                continue
            t = self.tok
            if t.kind == "name" and t.text == "axiom":
                if axiom is not None:
                    self.error("duplicate axiom")
                self.advance()
                self.expect(":")
                axiom = self.symbol_list(params=set(), allow_calls=False)
            elif t.kind == "name" and t.text == "const":
                self.advance()
                name_tok = self.advance()
                if name_tok.kind != "name" or name_tok.text in RESERVED:
                    self.error("expected constant name", name_tok)
                if name_tok.text in self.constants:
                    self.error(f"duplicate constant {name_tok.text!r}", name_tok)
                self.expect("=")
                expr = self.expr(params=set(), allow_calls=False)
                self.constants[name_tok.text] = float(_evaluate(expr, self.constants))
            else:
                rules.append(self.rule())
            if not self.at_terminator():
                self.error(f"unexpected {self.tok.text!r}")
        if axiom is None:
            raise GrammarSyntaxError("missing axiom", self.tok.line, self.tok.col)
        return Grammar(axiom=axiom, rules=tuple(rules), constants=tuple(self.constants.items()))

    def rule(self) -> Rule:
        name_tok = self.advance()
        if name_tok.kind != "name" or name_tok.text in RESERVED:
            self.error("expected rule predecessor", name_tok)
        params: list[str] = []
        if self.tok.text == "(":
            self.advance()
            while True:
                p = self.advance()
                if p.kind != "name":
                    self.error("expected parameter name", p)
                if p.text in params:
                    self.error(f"duplicate parameter {p.text!r}", p)
                params.append(p.text)
                if self.tok.text == ",":
                    self.advance()
                    continue
                self.expect(")")
                break
        guard = None
        pset = set(params)
        if self.tok.text == ":":
            self.advance()
            guard = self.expr(pset, allow_calls=False)
        self.expect("->")
        successors = [self.successor(pset)]
        while self.tok.text == "|":
            self.advance()
            successors.append(self.successor(pset))
        return Rule(name_tok.text, tuple(params), guard, tuple(successors))

    def successor(self, params: set) -> Successor:
        weight = 1.0
        if self.tok.kind == "num" and self.peek().text == ":":
            weight = float(self.advance().text)
            self.advance()
            if not weight > 0:
                self.error("successor weight must be positive")
        return Successor(weight, self.symbol_list(params, allow_calls=True))

    def symbol_list(self, params: set, allow_calls: bool) -> tuple:
        out = []
        depth = 0
        start = self.tok
        while not self.at_terminator() and self.tok.text != "|":
            t = self.advance()
            if t.kind == "name":
                if t.text in RESERVED:
                    self.error(f"reserved word {t.text!r} in symbol list", t)
                name = t.text
            elif t.kind == "op" and t.text in TURTLE_SYMBOLS:
                name = t.text
            else:
                self.error(f"unexpected {t.text!r} in symbol list", t)
            args = ()
            if name == "[":
                depth += 1
            elif name == "]":
                depth -= 1
                if depth < 0:
                    self.error("unbalanced ']'", t)
            elif self.tok.text == "(":
                self.advance()
                items = [self.expr(params, allow_calls)]
                while self.tok.text == ",":
                    self.advance()
                    items.append(self.expr(params, allow_calls))
                self.expect(")")
                args = tuple(items)
            out.append(SymbolTemplate(name, args))
        if depth != 0:
            self.error("unbalanced '[' in symbol list", start)
        return tuple(out)

    # expressions: or < and < comparison < additive < multiplicative < unary < atom
    def expr(self, params: set, allow_calls: bool) -> Expr:
        node = self.conj(params, allow_calls)
        while self.tok.kind == "name" and self.tok.text == "or":
            self.advance()
            node = BinOp("or", node, self.conj(params, allow_calls))
        return node

    def conj(self, params, allow_calls):
        node = self.comparison(params, allow_calls)
        while self.tok.kind == "name" and self.tok.text == "and":
            self.advance()
            node = BinOp("and", node, self.comparison(params, allow_calls))
        return node

    def comparison(self, params, allow_calls):
        node = self.additive(params, allow_calls)
        if self.tok.text in ("<", ">", "<=", ">=", "==", "!="):
            op = self.advance().text
            node = BinOp(op, node, self.additive(params, allow_calls))
        return node

    def additive(self, params, allow_calls):
        node = self.term(params, allow_calls)
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term(params, allow_calls))
        return node

    def term(self, params, allow_calls):
        node = self.unary(params, allow_calls)
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary(params, allow_calls))
        return node

    def unary(self, params, allow_calls):
        if self.tok.text == "-":
            self.advance()
            return Neg(self.unary(params, allow_calls))
        return self.atom(params, allow_calls)

    def atom(self, params, allow_calls):
        t = self.advance()
        if t.kind == "num":
            return Num(float(t.text))
        if t.text == "(":
            node = self.expr(params, allow_calls)
            self.expect(")")
            return node
        if t.kind == "name":
            if self.tok.text == "(":
                if not allow_calls:
                    self.error(f"function call {t.text!r} not allowed here", t)
                if t.text not in _FUNCTIONS:
                    self.error(f"unknown function {t.text!r}", t)
                self.advance()
                args = []
                if self.tok.text != ")":
                    args.append(self.expr(params, allow_calls))
                    while self.tok.text == ",":
                        self.advance()
                        args.append(self.expr(params, allow_calls))
                self.expect(")")
                arity = _FUNCTIONS[t.text][0]
                if len(args) != arity:
                    self.error(f"{t.text} takes {arity} arguments", t)
                return Call(t.text, tuple(args))
            if t.text not in params and t.text not in self.constants:
                self.error(f"undeclared parameter {t.text!r}", t)
            return Var(t.text)
        self.error(f"unexpected {t.text or 'end of input'!r} in expression", t)


# functions usable in successor parameters; name -> (arity, needs_rng)
_FUNCTIONS = {
    "uniform": (2, True),
    "min": (2, False),
    "max": (2, False),
    "sqrt": (1, False),
    "acos": (1, False),
}


def parse_grammar(text: str) -> Grammar:
    """Parse grammar source text; raises GrammarSyntaxError with line/column."""
    return _Parser(text).parse()


# -------------------------------------------------------------------- printer


def _fmt_num(v: float) -> str:
    return repr(float(v))


def _fmt_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"-{_fmt_expr(e.operand)}"
    if isinstance(e, BinOp):
        return f"({_fmt_expr(e.left)} {e.op} {_fmt_expr(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(_fmt_expr(a) for a in e.args)})"
    raise TypeError(e)


def _fmt_templates(symbols: Iterable[SymbolTemplate]) -> str:
    parts = []
    for s in symbols:
        if s.args:
            parts.append(f"{s.name}({', '.join(_fmt_expr(a) for a in s.args)})")
        else:
            parts.append(s.name)
    return " ".join(parts)


def format_grammar(g: Grammar) -> str:
    """Canonical text form; ``parse_grammar(format_grammar(g)) == g``."""
    lines = [f"const {k} = {_fmt_num(v)}" for k, v in g.constants]
    lines.append(f"axiom: {_fmt_templates(g.axiom)}")
    for r in g.rules:
        head = r.predecessor + (f"({', '.join(r.params)})" if r.params else "")
        if r.guard is not None:
            head += f" : {_fmt_expr(r.guard)}"
        if len(r.successors) == 1 and r.successors[0].weight == 1.0:
            body = _fmt_templates(r.successors[0].symbols)
        else:
            body = " | ".join(f"{_fmt_num(s.weight)}: {_fmt_templates(s.symbols)}" for s in r.successors)
        lines.append(f"{head} -> {body}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------- symbol strings


@dataclass(frozen=True)
class Symbol:
    name: str
    params: tuple = ()

    def __str__(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}({','.join(repr(float(p)) for p in self.params)})"


@dataclass(frozen=True)
class SymbolString:
    symbols: tuple = ()

    def __post_init__(self):
        depth = 0
        for s in self.symbols:
            if s.name == "[":
                depth += 1
            elif s.name == "]":
                depth -= 1
                if depth < 0:
                    raise ValueError("unbalanced ']' in symbol string")
            for p in s.params:
                if not math.isfinite(p):
                    raise ValueError(f"non-finite parameter in {s.name}")
        if depth:
            raise ValueError("unbalanced '[' in symbol string")

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __getitem__(self, i):
        return self.symbols[i]

    def serialize(self) -> str:
        return " ".join(str(s) for s in self.symbols)

    def count(self, name: str) -> int:
        return sum(1 for s in self.symbols if s.name == name)


_SYM_RE = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*|[-+&^\\/!\[\]])(?:\(([^)]*)\))?")


def parse_symbols(text: str) -> SymbolString:
    """Parse the serialized form produced by ``SymbolString.serialize``."""
    out = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _SYM_RE.match(text, pos)
        if m is None:
            raise ValueError(f"cannot parse symbol at offset {pos}: {text[pos:pos + 20]!r}")
        params = tuple(float(x) for x in m.group(2).split(",")) if m.group(2) else ()
        out.append(Symbol(m.group(1), params))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return SymbolString(tuple(out))


# ------------------------------------------------------------------ rewriting


def _evaluate(e: Expr, env: dict, rng=None) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_evaluate(e.operand, env, rng)
    if isinstance(e, BinOp):
        a = _evaluate(e.left, env, rng)
        if e.op == "and":
            return bool(a) and bool(_evaluate(e.right, env, rng))
        if e.op == "or":
            return bool(a) or bool(_evaluate(e.right, env, rng))
        b = _evaluate(e.right, env, rng)
        return _BINOPS[e.op](a, b)
    if isinstance(e, Call):
        args = [_evaluate(a, env, rng) for a in e.args]
        if e.func == "uniform":
            if rng is None:
                raise ValueError("uniform() needs a random generator")
            return float(rng.uniform(args[0], args[1]))
        return float(_PURE_FUNCS[e.func](*args))
    raise TypeError(e)


_BINOPS: dict[str, Callable[[float, float], float]] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}
_PURE_FUNCS = {
    "min": min,
    "max": max,
    "sqrt": math.sqrt,
    "acos": lambda x: math.degrees(math.acos(x)),
}


def _instantiate(templates, env, rng) -> list[Symbol]:
    return [Symbol(t.name, tuple(float(_evaluate(a, env, rng)) for a in t.args)) for t in templates]


def axiom_string(g: Grammar) -> SymbolString:
    return SymbolString(tuple(_instantiate(g.axiom, dict(g.constants), None)))


def rewrite(
    g: Grammar,
    steps: int,
    rng: np.random.Generator,
    start: SymbolString | None = None,
    budget: int = DEFAULT_SYMBOL_BUDGET,
) -> SymbolString:
    """Apply ``steps`` parallel rewriting passes to the axiom (or ``start``).

    Rules are tried in file order; the first one whose name, arity and guard
    match fires.  Stochastic successors are chosen with ``rng``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    current = list(start.symbols if start is not None else axiom_string(g).symbols)
    consts = dict(g.constants)
    by_name: dict[str, list[Rule]] = {}
    for r in g.rules:
        by_name.setdefault(r.predecessor, []).append(r)
    for _ in range(steps):
        out: list[Symbol] = []
        for sym in current:
            rules = by_name.get(sym.name)
            fired = False
            if rules:
                for r in rules:
                    if len(r.params) != len(sym.params):
                        continue
                    env = dict(consts)
                    env.update(zip(r.params, sym.params))
                    if r.guard is not None and not _evaluate(r.guard, env):
                        continue
                    succ = r.successors[0]
                    if len(r.successors) > 1:
                        x = rng.random() * r.total_weight
                        acc = 0.0
                        for succ in r.successors:
                            acc += succ.weight
                            if x < acc:
                                break
                    out.extend(_instantiate(succ.symbols, env, rng))
                    fired = True
                    break
            if not fired:
                out.append(sym)
            if len(out) > budget:
                raise ResourceError(f"rewrite exceeded symbol budget of {budget}")
        current = out
    return SymbolString(tuple(current))


# ------------------------------------------------------------------- turtle


def _default_frame() -> np.ndarray:
    # columns: heading, left, up
    return np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class TurtleConfig:
    step: float = 1.0
    angle: float = 25.0  # degrees, used by rotation symbols without a parameter
    radius: float = 0.01
    frame: np.ndarray = field(default_factory=_default_frame)
    origin: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Turtle output.  Arrays are read-only; ``frames[i]`` holds the turtle
    frame (heading, left, up as columns) used to draw segment ``i`` and
    ``source[i]`` the index of the emitting ``F`` symbol."""

    start: np.ndarray
    end: np.ndarray
    r_start: np.ndarray
    r_end: np.ndarray
    depth: np.ndarray
    parent: np.ndarray
    frames: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        for name in ("start", "end", "r_start", "r_end", "depth", "parent", "frames", "source"):
            getattr(self, name).flags.writeable = False

    def __len__(self) -> int:
        return len(self.start)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.end - self.start, axis=1)

    def equals(self, other: "Skeleton", atol: float = 0.0) -> bool:
        if len(self) != len(other):
            return False
        for name in ("start", "end", "r_start", "r_end", "frames"):
            if not np.allclose(getattr(self, name), getattr(other, name), rtol=0, atol=atol):
                return False
        return (
            np.array_equal(self.depth, other.depth)
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.source, other.source)
        )

    @classmethod
    def empty(cls) -> "Skeleton":
        z3 = np.zeros((0, 3))
        return cls(z3, z3.copy(), np.zeros(0), np.zeros(0), np.zeros(0, int), np.zeros(0, int),
                   np.zeros((0, 3, 3)), np.zeros(0, int))


def _rot(a, b, ang):
    """Rotate the pair (a, b) in their common plane by ``ang`` radians."""
    c, s = math.cos(ang), math.sin(ang)
    return (
        (a[0] * c + b[0] * s, a[1] * c + b[1] * s, a[2] * c + b[2] * s),
        (b[0] * c - a[0] * s, b[1] * c - a[1] * s, b[2] * c - a[2] * s),
    )


def _rodrigues(v, k, ang):
    c, s = math.cos(ang), math.sin(ang)
    kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2]
    cx = (k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0])
    return tuple(v[i] * c + cx[i] * s + k[i] * kv * (1 - c) for i in range(3))


def interpret(s: SymbolString | Sequence[Symbol], config: TurtleConfig | None = None) -> Skeleton:
    """3D turtle interpretation.

    ``F(l[, r_end])`` draws; ``+ -`` yaw about up, ``& ^`` pitch about left,
    ``\\ /`` roll about heading; ``!(r)`` sets the radius; ``[ ]`` push/pop;
    ``Rot(angle, x, y, z)`` rotates about an axis given in the local frame.
    Radii never grow from a parent segment to its child.
    """
    cfg = config or TurtleConfig()
    symbols = s.symbols if isinstance(s, SymbolString) else tuple(s)
    fr = np.asarray(cfg.frame, dtype=float)
    H, L, U = tuple(fr[:, 0]), tuple(fr[:, 1]), tuple(fr[:, 2])
    pos = tuple(float(x) for x in cfg.origin)
    radius = float(cfg.radius)
    last = -1
    cap = math.inf  # parent end radius
    depth = 0
    stack = []
    deg = math.pi / 180.0
    default_angle = cfg.angle * deg

    starts, ends, r0s, r1s, depths, parents, frames, sources = [], [], [], [], [], [], [], []
    for idx, sym in enumerate(symbols):
        n = sym.name
        p = sym.params
        if n == "F":
            length = p[0] if p else cfg.step
            r0 = min(radius, cap)
            r1 = min(p[1], r0) if len(p) > 1 else r0
            if r0 <= 0 or r1 <= 0:
                raise ValueError(f"non-positive radius at symbol {idx}")
            new = (pos[0] + H[0] * length, pos[1] + H[1] * length, pos[2] + H[2] * length)
            starts.append(pos)
            ends.append(new)
            r0s.append(r0)
            r1s.append(r1)
            depths.append(depth)
            parents.append(last)
            frames.append((H, L, U))
            sources.append(idx)
            last = len(starts) - 1
            pos = new
            radius = r1
            cap = r1
        elif n == "[":
            stack.append((pos, H, L, U, radius, last, cap))
            depth += 1
        elif n == "]":
            assert stack, "pop from empty turtle stack"
            pos, H, L, U, radius, last, cap = stack.pop()
            depth -= 1
        elif n in ("+", "-"):
            a = (p[0] * deg if p else default_angle) * (1 if n == "+" else -1)
            H, L = _rot(H, L, a)
        elif n in ("&", "^"):
            a = (p[0] * deg if p else default_angle) * (1 if n == "&" else -1)
            H, U = _rot(H, U, a)
        elif n in ("\\", "/"):
            a = (p[0] * deg if p else default_angle) * (1 if n == "\\" else -1)
            L, U = _rot(L, U, a)
        elif n == "!":
            radius = p[0] if p else cfg.radius
            if radius <= 0:
                raise ValueError(f"non-positive radius at symbol {idx}")
        elif n == "Rot":
            ang, lx, ly, lz = p
            k = tuple(lx * H[i] + ly * L[i] + lz * U[i] for i in range(3))
            nk = math.sqrt(k[0] ** 2 + k[1] ** 2 + k[2] ** 2)
            if nk > 0 and ang != 0:
                k = (k[0] / nk, k[1] / nk, k[2] / nk)
                H, L, U = (_rodrigues(v, k, ang * deg) for v in (H, L, U))
    assert not stack, "unbalanced brackets"
    if not starts:
        return Skeleton.empty()
    frames_arr = np.array(frames).transpose(0, 2, 1)  # (N, 3 rows, 3 cols = H L U)
    return Skeleton(
        np.array(starts, dtype=float),
        np.array(ends, dtype=float),
        np.array(r0s, dtype=float),
        np.array(r1s, dtype=float),
        np.array(depths, dtype=int),
        np.array(parents, dtype=int),
        frames_arr,
        np.array(sources, dtype=int),
    )
