"""Vectorised numeric evaluation and seeded equality testing."""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping

import numpy as np

from .core import Expr, as_expr

DEFAULT_INTERVAL = (0.5, 2.0)
DEFAULT_TRIALS = 12
DEFAULT_TOL = 1e-9
DEFAULT_SEED = 20050101


class EvaluationError(ValueError):
    """Raised when an expression cannot be evaluated (unbound symbol, bad function)."""


def _code(e: Expr, names: dict) -> str:
    op = e.op
    if op == "num":
        v = e.value
        return f"_f64({float(v)!r})"
    if op in ("var", "par"):
        key = names.setdefault(("sym", e.value), f"s{len(names)}")
        return key
    if op == "fn":
        key = names.setdefault(("fn", e.value), f"f{len(names)}")
        return f"{key}({_code(e.args[0], names)})"
    if op == "add":
        return "(" + " + ".join(_code(a, names) for a in e.args) + ")"
    if op == "mul":
        return "(" + " * ".join(_code(a, names) for a in e.args) + ")"
    if op == "pow":
        b, p = e.args
        if p.op == "num" and not isinstance(p.value, float) and p.value.denominator == 1:
            k = p.value.numerator
            if k == -1:
                return f"(1.0 / {_code(b, names)})"
            return f"({_code(b, names)} ** {k})"
        return f"_pow({_code(b, names)}, {_code(p, names)})"
    fn = {"exp": "_np.exp", "ln": "_np.log", "abs": "_np.abs", "sign": "_np.sign", "cos": "_np.cos", "sin": "_np.sin"}[op]
    return f"{fn}({_code(e.args[0], names)})"


def compile_expr(e: Expr):
    """Return ``(func, names)``; ``func`` takes a dict of symbol arrays and a dict of callables."""
    cached = e._compiled
    if cached is not None:
        return cached
    names: dict = {}
    body = _code(e, names)
    sym_args = [(k[1], v) for k, v in names.items() if k[0] == "sym"]
    fn_args = [(k[1], v) for k, v in names.items() if k[0] == "fn"]
    lines = ["def _f(_vals, _fns):"]
    for name, key in sym_args:
        lines.append(f"    {key} = _vals[{name!r}]")
    for fkey, key in fn_args:
        lines.append(f"    {key} = _fns[{fkey!r}]")
    lines.append(f"    return {body}")
    ns = {"_np": np, "_pow": np.power, "_f64": np.float64}
    exec("\n".join(lines), ns)  # noqa: S102 - source is generated from the tree
    result = (ns["_f"], tuple(n for n, _ in sym_args), tuple(f for f, _ in fn_args))
    object.__setattr__(e, "_compiled", result)
    return result


def evaluate(e, values: Mapping, functions: Mapping | None = None):
    """Evaluate ``e`` at the assignment ``values`` (scalars or equal-shape arrays).

    Every free symbol must be bound.  Applied function symbols are looked up in
    ``functions`` keyed by ``(name, order)``.
    """
    e = as_expr(e)
    f, syms, fns = compile_expr(e)
    missing = [s for s in syms if s not in values]
    if missing:
        raise EvaluationError(f"unbound symbol(s): {', '.join(sorted(missing))}")
    functions = functions or {}
    missing_f = [fk for fk in fns if fk not in functions]
    if missing_f:
        raise EvaluationError(f"unbound function symbol(s): {missing_f}")
    vals = {s: np.asarray(values[s], dtype=float) for s in syms}
    with np.errstate(all="ignore"):
        out = f(vals, functions)
    return out


def sample_box(
    names, n: int, rng: np.random.Generator, domain: Mapping | None = None
) -> dict[str, np.ndarray]:
    """Draw ``n`` points uniformly from the product of per-symbol intervals."""
    domain = domain or {}
    pts = {}
    for name in sorted(names):
        lo, hi = domain.get(name, DEFAULT_INTERVAL)
        pts[name] = rng.uniform(lo, hi, size=n)
    return pts


def equal_numeric(
    a,
    b,
    domain: Mapping | None = None,
    trials: int = DEFAULT_TRIALS,
    tol: float = DEFAULT_TOL,
    seed: int = DEFAULT_SEED,
    retries: int = 8,
    fixed: Mapping | None = None,
) -> bool:
    """Seeded randomized test that ``a`` and ``b`` agree on the domain box.

    True iff ``|a-b| <= tol*(1+|a|+|b|)`` at every sampled point.  Points where
    either side is non-finite are redrawn; after ``retries`` rounds without
    ``trials`` finite points an :class:`EvaluationError` is raised.
    """
    a, b = as_expr(a), as_expr(b)
    fixed = dict(fixed or {})
    names = (a.free_symbols() | b.free_symbols()) - fixed.keys()
    rng = np.random.default_rng(seed)
    got_a, got_b = [], []
    need = trials
    for _ in range(retries):
        pts = sample_box(names, need * 2, rng, domain)
        pts.update({k: np.full(need * 2, float(v)) for k, v in fixed.items()})
        va = np.broadcast_to(evaluate(a, pts), (need * 2,))
        vb = np.broadcast_to(evaluate(b, pts), (need * 2,))
        ok = np.isfinite(va) & np.isfinite(vb)
        got_a.extend(va[ok][:need])
        got_b.extend(vb[ok][:need])
        need = trials - len(got_a)
        if need <= 0:
            break
    if len(got_a) < trials:
        raise EvaluationError("could not find enough finite sample points")
    va, vb = np.array(got_a[:trials]), np.array(got_b[:trials])
    return bool(np.all(np.abs(va - vb) <= tol * (1 + np.abs(va) + np.abs(vb))))


def to_float(value) -> float:
    if isinstance(value, Expr):
        return float(evaluate(value, {}))
    if isinstance(value, Fraction):
        return float(value)
    return float(value)
