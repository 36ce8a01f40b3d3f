"""Tokenizer, parser and printer for the model-assembly language.

Grammar, loosest binding first::

    expr    := term ('+' term)*
    term    := factor ('*' factor)*
    factor  := 'sum' '[' ident '|' expr ']' | primary
    primary := number
             | ident ('[' ident (',' ident)* ']')? ('(' (expr (',' expr)*)? ')')?
             | '(' expr ')'

``sum`` is reserved. A ``sum`` may not reuse an index variable bound by an
enclosing ``sum``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Union

from ..errors import LexError, ParseError


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<NUMBER>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<sym>[()\[\]|,+*])
    """,
    re.VERBOSE,
)

_SYMBOLS = {
    "(": "LPAREN", ")": "RPAREN", "[": "LBRACK", "]": "RBRACK",
    "|": "PIPE", ",": "COMMA", "+": "PLUS", "*": "STAR",
}


def tokenize(src: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        col = pos - line_start + 1
        if m is None:
            raise LexError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "sym":
            tokens.append(Token(_SYMBOLS[text], text, line, col))
        elif kind != "ws":
            tokens.append(Token(kind, text, line, col))
        else:
            nl = text.count("\n")
            if nl:
                line += nl
                line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class NameRef:
    name: str
    indices: tuple[str, ...] = ()


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Call:
    callee: NameRef
    args: tuple["Expr", ...] = ()


@dataclass(frozen=True)
class Mul:
    factors: tuple["Expr", ...]

    def __post_init__(self):
        if len(self.factors) < 2:
            raise ValueError("Mul needs at least two factors")


@dataclass(frozen=True)
class Add:
    terms: tuple["Expr", ...]

    def __post_init__(self):
        if len(self.terms) < 2:
            raise ValueError("Add needs at least two terms")


@dataclass(frozen=True)
class SumReduce:
    var: str
    body: "Expr"


Expr = Union[NameRef, Num, Call, Mul, Add, SumReduce]


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.bound: list[str] = []

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        return ParseError(f"{message}, found {found}", tok.line, tok.column)

    def expect(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind:
            raise self.error(f"expected {what}")
        tok = self.tok
        self.pos += 1
        return tok

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "EOF":
            raise self.error("expected '+', '*' or end of input")
        return node

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.tok.kind == "PLUS":
            self.pos += 1
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Add(tuple(terms))

    def term(self) -> Expr:
        factors = [self.factor()]
        while self.tok.kind == "STAR":
            self.pos += 1
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Mul(tuple(factors))

    def factor(self) -> Expr:
        tok = self.tok
        if tok.kind == "IDENT" and tok.text == "sum":
            self.pos += 1
            self.expect("LBRACK", "'[' after 'sum'")
            var_tok = self.expect("IDENT", "index variable")
            if var_tok.text in self.bound:
                raise ParseError(f"index variable '{var_tok.text}' shadows an enclosing sum",
                                 var_tok.line, var_tok.column)
            self.expect("PIPE", "'|'")
            self.bound.append(var_tok.text)
            body = self.expr()
            self.bound.pop()
            self.expect("RBRACK", "']' closing sum")
            return SumReduce(var_tok.text, body)
        return self.primary()

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "NUMBER":
            self.pos += 1
            return Num(float(tok.text))
        if tok.kind == "LPAREN":
            self.pos += 1
            node = self.expr()
            self.expect("RPAREN", "')'")
            return node
        if tok.kind != "IDENT":
            raise self.error("expected term")
        self.pos += 1
        indices: list[str] = []
        if self.tok.kind == "LBRACK":
            self.pos += 1
            indices.append(self.expect("IDENT", "index variable").text)
            while self.tok.kind == "COMMA":
                self.pos += 1
                indices.append(self.expect("IDENT", "index variable").text)
            self.expect("RBRACK", "']'")
        ref = NameRef(tok.text, tuple(indices))
        if self.tok.kind != "LPAREN":
            return ref
        self.pos += 1
        args: list[Expr] = []
        if self.tok.kind != "RPAREN":
            args.append(self.expr())
            while self.tok.kind == "COMMA":
                self.pos += 1
                args.append(self.expr())
        self.expect("RPAREN", "')' or ','")
        return Call(ref, tuple(args))


def parse(src: str | list[Token]) -> Expr:
    tokens = tokenize(src) if isinstance(src, str) else src
    return _Parser(tokens).parse()


# -- printing -----------------------------------------------------------------


def pretty(node: Expr) -> str:
    """Source text that parses back to ``node``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, NameRef):
        return node.name + (f"[{', '.join(node.indices)}]" if node.indices else "")
    if isinstance(node, Call):
        return f"{pretty(node.callee)}({', '.join(pretty(a) for a in node.args)})"
    if isinstance(node, SumReduce):
        return f"sum[{node.var}| {pretty(node.body)}]"
    if isinstance(node, Mul):
        return " * ".join(f"({pretty(f)})" if isinstance(f, (Add, Mul)) else pretty(f)
                          for f in node.factors)
    if isinstance(node, Add):
        return " + ".join(f"({pretty(t)})" if isinstance(t, Add) else pretty(t) for t in node.terms)
    raise TypeError(f"not an expression node: {node!r}")


def dump_tree(node: Expr, indent: str = "  ") -> str:
    lines: list[str] = []

    def walk(n: Expr, depth: int) -> None:
        pad = indent * depth
        if isinstance(n, NameRef):
            idx = f" [{', '.join(n.indices)}]" if n.indices else ""
            lines.append(f"{pad}NameRef {n.name}{idx}")
        elif isinstance(n, Num):
            lines.append(f"{pad}Num {n.value!r}")
        elif isinstance(n, Call):
            lines.append(f"{pad}Call")
            walk(n.callee, depth + 1)
            for a in n.args:
                walk(a, depth + 1)
        elif isinstance(n, SumReduce):
            lines.append(f"{pad}SumReduce {n.var}")
            walk(n.body, depth + 1)
        else:
            lines.append(f"{pad}{type(n).__name__}")
            for c in (n.factors if isinstance(n, Mul) else n.terms):
                walk(c, depth + 1)

    walk(node, 0)
    return "\n".join(lines) + "\n"
