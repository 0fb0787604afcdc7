"""Immutable expression trees with canonicalizing constructors.

Every node is built through the module-level constructors (``add``, ``mul``,
``power``, ``exp`` ...), which flatten, fold constants and sort commutative
children.  Two expressions that are built from the same mathematical pieces
therefore compare equal structurally.  There is no division or subtraction
node: ``a / b`` is ``a * b**-1`` and ``a - b`` is ``a + (-1) * b``.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Number as _Number
from typing import Callable, Iterable, Mapping

# Names parsed as independent/dependent variables.  Everything else parsed
# from text is a parameter.  Jet coordinates are variables too.
VARIABLE_NAMES = frozenset(
    {"t", "x", "u", "omega", "u_t", "u_x", "u_xx", "u_tx", "u_tt",
     "u_ttx", "u_txx", "u_xxx"}
)

_RANK = {
    "num": 0,
    "par": 1,
    "var": 2,
    "fn": 3,
    "pow": 4,
    "mul": 5,
    "add": 6,
    "exp": 7,
    "ln": 8,
    "abs": 9,
    "sign": 10,
    "cos": 11,
    "sin": 12,
}


class Expr:
    """A node of an expression tree.

    ``op`` is one of ``num``, ``var``, ``par``, ``add``, ``mul``, ``pow``,
    ``exp``, ``ln``, ``abs``, ``sign``, ``fn``.  Leaves keep their payload in
    ``value`` (a ``Fraction``/``float`` for numbers, a name for symbols, and
    ``(name, order)`` for applied function symbols).
    """

    __slots__ = ("op", "args", "value", "_hash", "_key", "_compiled")

    def __init__(self, op: str, args: tuple = (), value=None):
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "args", tuple(args))
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "_hash", None)
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_compiled", None)

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    # structural identity -------------------------------------------------
    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            if isinstance(other, (_Number, Fraction)) and self.op == "num":
                return self.value == other
            return NotImplemented
        if hash(self) != hash(other):
            return False
        return (
            self.op == other.op
            and self.value == other.value
            and type(self.value) is type(other.value)
            and self.args == other.args
        )

    def __hash__(self):
        h = self._hash
        if h is None:
            value = self.value
            if isinstance(value, float):
                value = ("float", value)
            h = hash((self.op, value, self.args))
            object.__setattr__(self, "_hash", h)
        return h

    def sort_key(self):
        k = self._key
        if k is None:
            rank = _RANK[self.op]
            if self.op == "num":
                k = (rank, float(self.value), isinstance(self.value, float))
            elif self.op in ("var", "par"):
                k = (rank, self.value)
            elif self.op == "fn":
                k = (rank, self.value, tuple(a.sort_key() for a in self.args))
            else:
                k = (rank, len(self.args), tuple(a.sort_key() for a in self.args))
            object.__setattr__(self, "_key", k)
        return k

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return mul(self, power(as_expr(other), MINUS_ONE))

    def __rtruediv__(self, other):
        return mul(as_expr(other), power(self, MINUS_ONE))

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __rpow__(self, other):
        return power(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    # inspection ----------------------------------------------------------
    @property
    def is_number(self) -> bool:
        return self.op == "num"

    def is_zero(self) -> bool:
        return self.op == "num" and self.value == 0

    def is_one(self) -> bool:
        return self.op == "num" and self.value == 1

    def free_symbols(self) -> frozenset[str]:
        """Names of all variables and parameters appearing in the tree."""
        if self.op in ("var", "par"):
            return frozenset((self.value,))
        out: set[str] = set()
        for a in self.args:
            out |= a.free_symbols()
        return frozenset(out)

    def variables(self) -> frozenset[str]:
        return frozenset(n for n in self.free_symbols() if n in _symbol_kinds("var", self))

    def parameters(self) -> frozenset[str]:
        return frozenset(n for n in self.free_symbols() if n in _symbol_kinds("par", self))

    def functions(self) -> frozenset[tuple[str, int]]:
        out = set()
        if self.op == "fn":
            out.add(self.value)
        for a in self.args:
            out |= a.functions()
        return frozenset(out)

    def has(self, name: str) -> bool:
        return name in self.free_symbols()

    def walk(self) -> Iterable["Expr"]:
        yield self
        for a in self.args:
            yield from a.walk()

    # conveniences forwarding to the functional API -------------------------
    def diff(self, name: str, n: int = 1) -> "Expr":
        from .calculus import differentiate

        e = self
        for _ in range(n):
            e = differentiate(e, name)
        return e

    def subs(self, bindings: Mapping) -> "Expr":
        from .calculus import substitute

        return substitute(self, bindings)

    def __call__(self, **values):
        from .numeric import evaluate

        return evaluate(self, values)

    def __str__(self):
        from .render import render

        return render(self)

    def __repr__(self):
        return f"Expr({str(self)!r})"

    def __reduce__(self):
        return (_rebuild, (str(self),))


def _rebuild(text):
    from .parser import parse

    return parse(text)


def _symbol_kinds(kind, e):
    return {n.value for n in e.walk() if n.op == kind}


# leaves ------------------------------------------------------------------

def number(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, int):
        value = Fraction(value)
    elif isinstance(value, Fraction):
        pass
    elif isinstance(value, float):
        if value.is_integer() and abs(value) < 2**53:
            # integral floats are kept as floats: floats only enter via evaluation
            pass
    else:
        value = float(value)
    return Expr("num", (), value)


def var(name: str) -> Expr:
    return Expr("var", (), name)


def par(name: str) -> Expr:
    return Expr("par", (), name)


def symbol(name: str) -> Expr:
    """A variable if ``name`` is a known independent/jet variable, else a parameter."""
    return var(name) if name in VARIABLE_NAMES else par(name)


def function(name: str, arg, order: int = 0) -> Expr:
    """Applied function symbol ``name^{(order)}(arg)``."""
    return Expr("fn", (as_expr(arg),), (name, int(order)))


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        from .parser import parse

        return parse(value)
    return number(value)


ZERO = number(0)
ONE = number(1)
MINUS_ONE = number(-1)
TWO = number(2)
HALF = number(Fraction(1, 2))


# numeric helpers ---------------------------------------------------------

def _num_add(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return float(a) + float(b)
    return a + b


def _num_mul(a, b):
    if isinstance(a, float) or isinstance(b, float):
        return float(a) * float(b)
    return a * b


def _exact_root(value: Fraction, n: int):
    """Exact ``n``-th root of a non-negative rational, or ``None``."""
    if value < 0:
        return None

    def iroot(k):
        r = round(k ** (1.0 / n))
        for c in (r - 1, r, r + 1):
            if c >= 0 and c**n == k:
                return c
        return None

    p, q = iroot(value.numerator), iroot(value.denominator)
    if p is None or q is None:
        return None
    return Fraction(p, q)


def _num_pow(base, exponent):
    """Fold ``base**exponent`` for numeric leaves when the result is exact."""
    if isinstance(base, float) or isinstance(exponent, float):
        try:
            r = float(base) ** float(exponent)
        except (OverflowError, ZeroDivisionError):
            return None
        if isinstance(r, complex):
            return None
        return r
    if exponent.denominator == 1:
        if base == 0 and exponent < 0:
            return None
        return base ** int(exponent)
    root = _exact_root(base, exponent.denominator)
    if root is None:
        return None
    return root ** exponent.numerator


# compound constructors -------------------------------------------------------

def _split_coeff(e: Expr):
    """Return ``(coefficient, rest)`` with ``e == coefficient * rest``."""
    if e.op == "num":
        return e.value, ONE
    if e.op == "mul" and e.args[0].op == "num":
        rest = e.args[1:]
        return e.args[0].value, rest[0] if len(rest) == 1 else Expr("mul", rest)
    return Fraction(1), e


def add(*terms) -> Expr:
    flat = []
    for t in terms:
        t = as_expr(t)
        if t.op == "add":
            flat.extend(t.args)
        else:
            flat.append(t)
    const = Fraction(0)
    collected: dict[Expr, object] = {}
    order: list[Expr] = []
    for t in flat:
        if t.op == "num":
            const = _num_add(const, t.value)
            continue
        c, rest = _split_coeff(t)
        if rest in collected:
            collected[rest] = _num_add(collected[rest], c)
        else:
            collected[rest] = c
            order.append(rest)
    out = []
    for rest in order:
        c = collected[rest]
        if c == 0:
            continue
        out.append(_scale(c, rest))
    if const != 0 or isinstance(const, float) and not out:
        out.append(number(const))
    if not out:
        return ZERO
    if len(out) == 1:
        return out[0]
    out.sort(key=Expr.sort_key)
    return Expr("add", tuple(out))


def _scale(c, rest: Expr) -> Expr:
    if c == 1 and not isinstance(c, float):
        return rest
    if rest.op == "mul":
        return Expr("mul", (number(c),) + rest.args)
    if rest.is_one():
        return number(c)
    return Expr("mul", (number(c), rest))


def _base_exp(e: Expr):
    if e.op == "pow":
        return e.args[0], e.args[1]
    return e, ONE


def mul(*factors) -> Expr:
    flat = []
    for f in factors:
        f = as_expr(f)
        if f.op == "mul":
            flat.extend(f.args)
        else:
            flat.append(f)
    coeff = Fraction(1)
    exps: dict[Expr, Expr] = {}
    order: list[Expr] = []
    exp_args = []
    for f in flat:
        if f.op == "num":
            coeff = _num_mul(coeff, f.value)
            continue
        if f.op == "exp":
            exp_args.append(f.args[0])
            continue
        b, e = _base_exp(f)
        if b in exps:
            exps[b] = add(exps[b], e)
        else:
            exps[b] = e
            order.append(b)
    if coeff == 0:
        return number(coeff)
    out = []
    for b in order:
        p = power(b, exps[b])
        if p.op == "num":
            coeff = _num_mul(coeff, p.value)
        elif p.op == "mul":
            for g in p.args:
                if g.op == "num":
                    coeff = _num_mul(coeff, g.value)
                else:
                    out.append(g)
        else:
            out.append(p)
    if exp_args:
        e = exp(add(*exp_args))
        if e.op == "num":
            coeff = _num_mul(coeff, e.value)
        elif e.op == "mul":
            # exp folded into something else (e.g. exp(ln a) -> a)
            c2, rest = _split_coeff(e)
            coeff = _num_mul(coeff, c2)
            out.extend(rest.args if rest.op == "mul" else [rest])
        else:
            out.append(e)
    if coeff == 0:
        return number(coeff)
    # merging may have produced equal bases again (e.g. exp(ln x) * x)
    if len(out) > 1 and len({_base_exp(f)[0] for f in out}) < len(out):
        return mul(number(coeff), *out)
    out.sort(key=Expr.sort_key)
    if not out:
        return number(coeff)
    if coeff == 1 and not isinstance(coeff, float):
        return out[0] if len(out) == 1 else Expr("mul", tuple(out))
    return Expr("mul", (number(coeff),) + tuple(out))


def neg(e) -> Expr:
    return mul(MINUS_ONE, e)


def _is_integer(e: Expr) -> bool:
    return e.op == "num" and not isinstance(e.value, float) and e.value.denominator == 1


def power(base, exponent) -> Expr:
    base, exponent = as_expr(base), as_expr(exponent)
    if exponent.is_zero():
        return ONE
    if exponent.is_one() and not isinstance(exponent.value, float):
        return base
    if base.op == "num" and exponent.op == "num":
        r = _num_pow(base.value, exponent.value)
        if r is not None:
            return number(r)
        # pull integral part out of a rational power of a rational
        return Expr("pow", (base, exponent))
    if base.is_one() and not isinstance(base.value, float):
        return ONE
    if base.op == "exp":
        return exp(mul(base.args[0], exponent))
    if base.op == "pow" and _is_integer(exponent):
        return power(base.args[0], mul(base.args[1], exponent))
    if base.op == "mul" and _is_integer(exponent):
        return mul(*[power(f, exponent) for f in base.args])
    if base.op == "abs" and _is_integer(exponent) and exponent.value.numerator % 2 == 0:
        return power(base.args[0], exponent)
    return Expr("pow", (base, exponent))


def exp(arg) -> Expr:
    arg = as_expr(arg)
    if arg.is_zero():
        return ONE
    if arg.op == "ln":
        return arg.args[0]
    if arg.op == "mul" and len(arg.args) == 2 and arg.args[0].op == "num" and arg.args[1].op == "ln":
        # exp(c*ln a) = a**c
        return power(arg.args[1].args[0], arg.args[0])
    if arg.op == "add":
        # split off ln-terms: exp(a + ln b) = b*exp(a)
        logs = [a for a in arg.args if a.op == "ln"]
        if logs:
            rest = [a for a in arg.args if a.op != "ln"]
            return mul(*[l.args[0] for l in logs], exp(add(*rest)))
    if arg.op == "num" and isinstance(arg.value, float):
        import math

        return number(math.exp(arg.value))
    return Expr("exp", (arg,))


def ln(arg) -> Expr:
    arg = as_expr(arg)
    if arg.is_one():
        return ZERO
    if arg.op == "exp":
        return arg.args[0]
    if arg.op == "num" and isinstance(arg.value, float) and arg.value > 0:
        import math

        return number(math.log(arg.value))
    return Expr("ln", (arg,))


def Abs(arg) -> Expr:
    arg = as_expr(arg)
    if arg.op == "num":
        return number(abs(arg.value))
    if arg.op == "abs":
        return arg
    if arg.op == "exp":
        return arg
    if arg.op == "pow" and _is_integer(arg.args[1]) and arg.args[1].value.numerator % 2 == 0:
        return arg
    if arg.op == "mul" and arg.args[0].op == "num":
        c, rest = _split_coeff(arg)
        return mul(number(abs(c)), Abs(rest))
    return Expr("abs", (arg,))


def sign(arg) -> Expr:
    arg = as_expr(arg)
    if arg.op == "num":
        v = arg.value
        return number(Fraction((v > 0) - (v < 0)))
    if arg.op in ("exp", "abs"):
        return ONE
    if arg.op == "sign":
        return arg
    if arg.op == "mul" and arg.args[0].op == "num":
        c, rest = _split_coeff(arg)
        s = (c > 0) - (c < 0)
        return mul(number(s), sign(rest))
    return Expr("sign", (arg,))


def cos(arg) -> Expr:
    arg = as_expr(arg)
    if arg.is_zero():
        return ONE
    return Expr("cos", (arg,))


def sin(arg) -> Expr:
    arg = as_expr(arg)
    if arg.is_zero():
        return ZERO
    return Expr("sin", (arg,))


UNARY: dict[str, Callable[[Expr], Expr]] = {
    "exp": exp,
    "ln": ln,
    "abs": Abs,
    "sign": sign,
    "cos": cos,
    "sin": sin,
}


def rebuild(e: Expr, children: tuple) -> Expr:
    """Reconstruct a node of ``e``'s kind from new children through the canonical constructors."""
    op = e.op
    if op == "add":
        return add(*children)
    if op == "mul":
        return mul(*children)
    if op == "pow":
        return power(*children)
    if op in UNARY:
        return UNARY[op](children[0])
    if op == "fn":
        return Expr("fn", children, e.value)
    return e
