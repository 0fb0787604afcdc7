"""Render expressions in the infix grammar accepted by :func:`parse`."""

from __future__ import annotations


from .core import Expr, _split_coeff

_ADD, _MUL, _NEG, _POW, _ATOM = 1, 2, 3, 4, 5


def _num(value) -> tuple[str, int]:
    if isinstance(value, float):
        s = repr(value)
        if s in ("inf", "-inf", "nan"):
            raise ValueError(f"cannot render non-finite constant {s}")
        return (s, _NEG) if value < 0 else (s, _ATOM)
    if value.denominator == 1:
        n = value.numerator
        return (str(n), _NEG) if n < 0 else (str(n), _ATOM)
    return f"({value.numerator}/{value.denominator})", _ATOM


def _wrap(pair, level) -> str:
    s, prec = pair
    return f"({s})" if prec < level else s


def _render(e: Expr) -> tuple[str, int]:
    op = e.op
    if op == "num":
        return _num(e.value)
    if op in ("var", "par"):
        return e.value, _ATOM
    if op == "fn":
        name, order = e.value
        return f"{name}{chr(39) * order}({_render(e.args[0])[0]})", _ATOM
    if op in ("exp", "ln", "abs", "sign", "cos", "sin"):
        return f"{op}({_render(e.args[0])[0]})", _ATOM
    if op == "pow":
        b, p = e.args
        # base must bind tighter than ^; exponent is right-assoc so same level is fine
        return f"{_wrap(_render(b), _ATOM)}^{_wrap(_render(p), _POW)}", _POW
    if op == "mul":
        c, rest = _split_coeff(e)
        factors = rest.args if rest.op == "mul" else (rest,)
        body = "*".join(_wrap(_render(f), _POW) for f in factors)
        if c == -1 and not isinstance(c, float):
            return f"-{body}", _NEG
        if c == 1 and not isinstance(c, float):
            return body, _MUL if len(factors) > 1 else _render(rest)[1]
        cs = _num(c)
        return f"{_wrap(cs, _POW)}*{body}", _MUL
    if op == "add":
        parts = []
        for i, term in enumerate(e.args):
            c, rest = _split_coeff(term)
            negative = (c < 0) and term.op != "num"
            if i > 0 and negative:
                s = _render(-term)
                parts.append(" - " + _wrap(s, _MUL))
            else:
                s = _render(term)
                parts.append((" + " if i else "") + _wrap(s, _ADD if i == 0 else _MUL))
        return "".join(parts), _ADD
    raise ValueError(f"cannot render node {op!r}")


def render(e: Expr) -> str:
    """Infix text for ``e``; ``parse(render(e)) == e`` structurally."""
    return _render(e)[0]
