"""Small computer-algebra kernel: trees, parsing, calculus, numeric zero testing."""

from .calculus import differentiate, expand, simplify, substitute, substitute_function
from .core import (
    cos,
    sin,
    ONE,
    ZERO,
    Abs,
    Expr,
    add,
    as_expr,
    exp,
    function,
    ln,
    mul,
    neg,
    number,
    par,
    power,
    sign,
    symbol,
    var,
)
from .numeric import EvaluationError, equal_numeric, evaluate, sample_box
from .parser import ParseError, parse
from .render import render

__all__ = [
    "Abs", "EvaluationError", "Expr", "ONE", "ParseError", "ZERO", "add", "as_expr",
    "cos", "sin", "differentiate", "equal_numeric", "evaluate", "exp", "expand", "function", "ln",
    "mul", "neg", "number", "par", "parse", "power", "render", "sample_box", "sign",
    "simplify", "substitute", "substitute_function", "symbol", "var",
]
