"""Pratt parser for the infix expression grammar.

Grammar: ``+ - * / ^``, unary minus, parentheses, the functions ``exp``,
``ln``, ``abs``, ``sign``, and ``e^X`` as sugar for ``exp(X)``.  ``t``, ``x``,
``u``, ``omega`` (and jet names ``u_x`` ...) are variables; any other
identifier is a parameter.  Applied function symbols such as ``phi(omega)``
or ``phi''(omega)`` are accepted only when declared via ``functions``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .core import UNARY, Expr, exp, function, mul, neg, number, power, symbol, ONE, add, MINUS_ONE


class ParseError(ValueError):
    """Malformed expression text; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[^\W\d]\w*'*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(text, i)
        if not m or m.end() == i:
            raise ParseError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), start))
        i = m.end()
    toks.append(_Tok("end", "", n))
    return toks


_BINARY = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_MINUS = 30


class _Parser:
    def __init__(self, text: str, functions: frozenset[str]):
        self.toks = _tokenize(text)
        self.i = 0
        self.functions = functions

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str):
        t = self.tok
        if t.text != text or t.kind != "op":
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise ParseError(f"expected {text!r}, found {what}", t.pos)
        self.advance()

    def expression(self, rbp: int = 0) -> Expr:
        left = self.nud(self.advance())
        while True:
            t = self.tok
            if t.kind != "op" or t.text not in _BINARY:
                return left
            lbp = _BINARY[t.text]
            if lbp <= rbp:
                return left
            self.advance()
            left = self.led(t, left)

    def nud(self, t: _Tok) -> Expr:
        if t.kind == "num":
            if re.fullmatch(r"\d+", t.text):
                return number(Fraction(int(t.text)))
            return number(float(t.text))
        if t.kind == "name":
            return self.name(t)
        if t.kind == "op":
            if t.text == "(":
                e = self.expression()
                self.expect(")")
                return e
            if t.text == "-":
                return neg(self.expression(_UNARY_MINUS))
            if t.text == "+":
                return self.expression(_UNARY_MINUS)
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(f"unexpected {what}", t.pos)

    def name(self, t: _Tok) -> Expr:
        base = t.text.rstrip("'")
        order = len(t.text) - len(base)
        if self.tok.kind == "op" and self.tok.text == "(":
            if base in UNARY and order == 0:
                self.advance()
                arg = self.expression()
                self.expect(")")
                return UNARY[base](arg)
            if base in self.functions:
                self.advance()
                arg = self.expression()
                self.expect(")")
                return function(base, arg, order)
            raise ParseError(f"unknown function symbol {base!r}", t.pos)
        if order:
            raise ParseError(f"derivative mark on non-function {base!r}", t.pos)
        if base == "e":
            if self.tok.kind == "op" and self.tok.text == "^":
                self.advance()
                return exp(self.expression(_BINARY["^"] - 1))
            return exp(ONE)
        if base in UNARY or base in self.functions:
            raise ParseError(f"function {base!r} requires an argument", t.pos)
        return symbol(base)

    def led(self, t: _Tok, left: Expr) -> Expr:
        op = t.text
        if op == "^":
            return power(left, self.expression(_BINARY["^"] - 1))
        right = self.expression(_BINARY[op])
        if op == "+":
            return add(left, right)
        if op == "-":
            return add(left, neg(right))
        if op == "*":
            return mul(left, right)
        return mul(left, power(right, MINUS_ONE))


def parse(text: str, functions: Iterable[str] = ("phi",)) -> Expr:
    """Parse infix ``text`` into a canonical :class:`Expr`."""
    p = _Parser(text, frozenset(functions))
    if p.tok.kind == "end":
        raise ParseError("empty expression", p.tok.pos)
    e = p.expression()
    if p.tok.kind != "end":
        raise ParseError(f"unexpected {p.tok.text!r}", p.tok.pos)
    return e
