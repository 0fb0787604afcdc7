"""Differentiation, substitution and rule-based simplification."""

from __future__ import annotations

from functools import lru_cache
from typing import Mapping

from .core import (
    MINUS_ONE,
    ONE,
    ZERO,
    Expr,
    add,
    as_expr,
    ln,
    mul,
    power,
    rebuild,
    sign,
)


def differentiate(e: Expr, v: str) -> Expr:
    """Partial derivative of ``e`` with respect to the symbol named ``v``.

    Parameters are constants unless ``v`` names them explicitly.  ``abs`` and
    ``sign`` follow d|a| = sign(a) da and d sign(a) = 0 (valid off a = 0).
    """
    if isinstance(v, Expr):
        v = v.value
    return _diff(e, v)


@lru_cache(maxsize=65536)
def _diff(e: Expr, v: str) -> Expr:
    op = e.op
    if op == "num":
        return ZERO
    if op in ("var", "par"):
        return ONE if e.value == v else ZERO
    if v not in e.free_symbols():
        return ZERO
    if op == "add":
        return add(*[_diff(a, v) for a in e.args])
    if op == "mul":
        terms = []
        args = e.args
        for i, a in enumerate(args):
            da = _diff(a, v)
            if da.is_zero():
                continue
            terms.append(mul(*args[:i], da, *args[i + 1 :]))
        return add(*terms)
    if op == "pow":
        b, p = e.args
        db, dp = _diff(b, v), _diff(p, v)
        out = []
        if not db.is_zero():
            out.append(mul(p, power(b, add(p, MINUS_ONE)), db))
        if not dp.is_zero():
            out.append(mul(e, ln(b), dp))
        return add(*out)
    a = e.args[0]
    da = _diff(a, v)
    if op == "exp":
        return mul(e, da)
    if op == "ln":
        return mul(power(a, MINUS_ONE), da)
    if op == "abs":
        return mul(sign(a), da)
    if op == "sign":
        return ZERO
    if op == "cos":
        return mul(MINUS_ONE, Expr("sin", (a,)), da)
    if op == "sin":
        return mul(Expr("cos", (a,)), da)
    if op == "fn":
        name, order = e.value
        return mul(Expr("fn", (a,), (name, order + 1)), da)
    raise ValueError(f"cannot differentiate node {op!r}")


def substitute(e: Expr, bindings: Mapping) -> Expr:
    """Simultaneous substitution of symbols (by name or symbol Expr) by expressions."""
    table = {}
    for k, val in bindings.items():
        name = k.value if isinstance(k, Expr) else k
        table[name] = as_expr(val)
    if not table:
        return e
    return _subs(e, table)


def _subs(e: Expr, table: dict) -> Expr:
    if e.op in ("var", "par"):
        return table.get(e.value, e)
    if not e.args or not (e.free_symbols() & table.keys()):
        return e
    return rebuild(e, tuple(_subs(a, table) for a in e.args))


def substitute_function(e: Expr, name: str, replacements: Mapping[int, Expr]) -> Expr:
    """Replace applied symbols ``name^{(k)}(...)`` by ``replacements[k]`` (arguments dropped)."""
    if e.op == "fn" and e.value[0] == name:
        return as_expr(replacements[e.value[1]])
    if not e.args:
        return e
    return rebuild(e, tuple(substitute_function(a, name, replacements) for a in e.args))


def replace_nodes(e: Expr, fn) -> Expr:
    """Bottom-up rewrite: ``fn(node)`` returns a replacement or ``None``."""
    if e.args:
        e = rebuild(e, tuple(replace_nodes(a, fn) for a in e.args))
    r = fn(e)
    return e if r is None else r


def expand(e: Expr) -> Expr:
    """Distribute products over sums and integer powers of sums."""
    if not e.args:
        return e
    e = rebuild(e, tuple(expand(a) for a in e.args))
    if e.op == "mul":
        acc = [ONE]
        for f in e.args:
            if f.op == "add":
                acc = [mul(a, g) for a in acc for g in f.args]
            else:
                acc = [mul(a, f) for a in acc]
        return add(*acc)
    if e.op == "pow":
        b, p = e.args
        if b.op == "add" and p.op == "num" and not isinstance(p.value, float):
            n = p.value
            if n.denominator == 1 and 1 < n <= 6 and len(b.args) ** int(n) <= 256:
                acc = list(b.args)
                for _ in range(int(n) - 1):
                    acc = [expand(mul(a, g)) for a in acc for g in b.args]
                return add(*acc)
    return e


def _simplify_node(e: Expr):
    # ln of products/powers of positive things; abs of positive constants
    if e.op == "ln":
        a = e.args[0]
        if a.op == "pow" and a.args[0].op == "exp":
            return mul(a.args[1], a.args[0].args[0])
    if e.op == "sign" and e.args[0].op == "pow":
        b, p = e.args[0].args
        if p.op == "num" and not isinstance(p.value, float) and p.value.denominator == 1:
            if p.value.numerator % 2 == 0:
                return ONE
            return sign(b)
    if e.op == "mul":
        # sign(a)*abs(a) -> a,  sign(a)**2 -> 1
        signs = {f.args[0] for f in e.args if f.op == "sign"}
        absf = {f.args[0] for f in e.args if f.op == "abs"}
        both = signs & absf
        odd_abs = {}
        for f in e.args:
            if f.op == "pow" and f.args[0].op == "abs" and f.args[0].args[0] in signs:
                p = f.args[1]
                if p.op == "num" and not isinstance(p.value, float) and p.value.denominator == 1 and p.value.numerator % 2:
                    odd_abs[f.args[0].args[0]] = f
        if odd_abs:
            rest = [f for f in e.args if f not in odd_abs.values() and not (f.op == "sign" and f.args[0] in odd_abs)]
            return mul(*rest, *[power(a, f.args[1]) for a, f in odd_abs.items()])
        if both:
            rest = [
                f
                for f in e.args
                if not (f.op in ("sign", "abs") and f.args[0] in both)
            ]
            return mul(*rest, *both)
    if e.op == "pow" and e.args[0].op == "sign":
        p = e.args[1]
        if p.op == "num" and not isinstance(p.value, float) and p.value.denominator == 1:
            return ONE if p.value.numerator % 2 == 0 else e.args[0]
    return None


def simplify(e: Expr) -> Expr:
    """Best-effort simplification; idempotent and value-preserving on the sampling domain.

    Constructors already fold constants and collect like terms; this adds a few
    sign/abs/ln rules and keeps the expanded form when it is smaller.
    """
    prev = None
    cur = e
    for _ in range(20):
        if prev == cur:
            break
        prev = cur
        cur = replace_nodes(cur, _simplify_node)
        ex = replace_nodes(expand(cur), _simplify_node)
        if _size(ex) < _size(cur):
            cur = ex
    return cur


def _size(e: Expr) -> int:
    return 1 + sum(_size(a) for a in e.args)
