"""Numeric oracle: sampling grids, residual reports, solution checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import Expr, as_expr, differentiate, evaluate
from .model import DEFAULT_BOX, ClassEquation, residual

DEFAULT_TOL = 1e-8
DEFAULT_POINTS = 12
DEFAULT_ASSIGNMENTS = 5
DEFAULT_SEED = 1234


class OracleDisagreement(RuntimeError):
    """Two independent checks disagree about the same object."""

    def __init__(self, message: str, point: Mapping | None = None):
        super().__init__(message + (f" at {dict(point)}" if point else ""))
        self.point = dict(point or {})


@dataclass
class Grid:
    """Per-symbol intervals with a seeded sampler and singularity guards.

    ``exclude`` holds predicates taking a dict of arrays and returning a mask
    of points to reject.
    """

    intervals: dict = field(default_factory=lambda: dict(DEFAULT_BOX))
    n: int = DEFAULT_POINTS
    seed: int = DEFAULT_SEED
    exclude: Sequence[Callable] = ()

    def points(self, names, n: int | None = None, rng=None) -> dict[str, np.ndarray]:
        n = self.n if n is None else n
        rng = np.random.default_rng(self.seed) if rng is None else rng
        names = sorted(names)
        got = {k: [] for k in names}
        count = 0
        for _ in range(50):
            batch = {k: rng.uniform(*self.intervals.get(k, (0.5, 2.0)), size=2 * n) for k in names}
            mask = np.ones(2 * n, bool)
            for pred in self.exclude:
                mask &= ~np.asarray(pred(batch), bool)
            for k in names:
                got[k].extend(batch[k][mask])
            count += int(mask.sum())
            if count >= n:
                break
        if count < n:
            raise ValueError("exclusion predicates reject the whole grid")
        return {k: np.asarray(v[:n]) for k, v in got.items()}


@dataclass
class ResidualReport:
    """Outcome of sampling a residual; ``verdict`` ⇔ every |r| ≤ tol·scale."""

    max_abs: float
    max_scaled: float
    argmax: dict
    values: list
    tol: float
    verdict: bool
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "max_abs": self.max_abs,
            "max_scaled": self.max_scaled,
            "argmax": self.argmax,
            "tol": self.tol,
            "verdict": "pass" if self.verdict else "fail",
            "n_points": len(self.values),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __bool__(self):
        return self.verdict


def _terms(e: Expr):
    return e.args if e.op == "add" else (e,)


def sample_residual(
    e: Expr,
    points: Mapping[str, np.ndarray],
    functions: Mapping | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``e`` and the per-point scale ``1 + max |term|``."""
    n = len(next(iter(points.values())))
    vals = np.broadcast_to(evaluate(e, points, functions), (n,)).astype(float)
    scale = np.ones(n)
    for term in _terms(e):
        tv = np.abs(np.broadcast_to(evaluate(term, points, functions), (n,)))
        scale = np.maximum(scale, 1.0 + tv)
    return vals, scale


def zero_report(
    e: Expr,
    grid: Grid | None = None,
    tol: float = DEFAULT_TOL,
    functions: Mapping | None = None,
    fixed: Mapping | None = None,
    label: str = "",
    names=None,
) -> ResidualReport:
    """Sample ``e`` on the grid and test it against zero, redrawing non-finite points."""
    grid = grid or Grid()
    fixed = dict(fixed or {})
    e = as_expr(e)
    names = set(names if names is not None else e.free_symbols()) - fixed.keys()
    rng = np.random.default_rng(grid.seed)
    vals_all, scale_all, pts_all = [], [], {k: [] for k in sorted(names)}
    need = grid.n
    for _ in range(12):
        pts = grid.points(names, 2 * need, rng) if names else {}
        m = 2 * need
        full = dict(pts)
        full.update({k: np.full(m, float(v)) for k, v in fixed.items()})
        if not full:
            full = {"_": np.zeros(m)}
        with np.errstate(all="ignore"):
            vals, scale = sample_residual(e, full, functions)
        ok = np.isfinite(vals) & np.isfinite(scale)
        idx = np.nonzero(ok)[0][:need]
        vals_all.extend(vals[idx])
        scale_all.extend(scale[idx])
        for k in pts_all:
            pts_all[k].extend(pts[k][idx])
        need = grid.n - len(vals_all)
        if need <= 0:
            break
    if not vals_all:
        return ResidualReport(float("inf"), float("inf"), {}, [], tol, False, label)
    vals_a = np.asarray(vals_all)
    scaled = np.abs(vals_a) / np.asarray(scale_all)
    i = int(np.argmax(scaled))
    arg = {k: float(v[i]) for k, v in pts_all.items()}
    arg.update({k: float(v) for k, v in fixed.items()})
    verdict = bool(scaled[i] <= tol) and len(vals_all) >= grid.n
    return ResidualReport(
        float(np.max(np.abs(vals_a))), float(scaled[i]), arg, [float(v) for v in vals_a], tol, verdict, label
    )


def check_solution(
    eq: ClassEquation,
    sol,
    grid: Grid | None = None,
    tol: float = DEFAULT_TOL,
    constants: Mapping | None = None,
    assignments: int = DEFAULT_ASSIGNMENTS,
    seed: int = DEFAULT_SEED,
    label: str = "",
) -> ResidualReport:
    """PDE residual of ``sol(t, x)`` from exact symbolic derivatives.

    Free constants are drawn ``assignments`` times from ``constants``
    intervals (default [0.5, 2]); each draw is checked on the grid.
    """
    sol = as_expr(sol)
    grid = grid or Grid(intervals=dict(eq.domain))
    r = eq.resolve(residual(eq, sol))
    consts = sorted(r.free_symbols() - {"t", "x"})
    constants = dict(constants or {})
    rng = np.random.default_rng(seed)
    reports = []
    for k in range(max(1, assignments if consts else 1)):
        fixed = {c: rng.uniform(*constants.get(c, (0.5, 2.0))) for c in consts}
        g = Grid(intervals=grid.intervals, n=grid.n, seed=grid.seed + k, exclude=grid.exclude)
        reports.append(
            zero_report(r, g, tol, eq.numeric_functions(), fixed=fixed, label=label, names={"t", "x"})
        )
    worst = max(reports, key=lambda rep: rep.max_scaled)
    worst.values = [v for rep in reports for v in rep.values]
    worst.verdict = all(rep.verdict for rep in reports)
    return worst


def finite_difference_residual(
    eq: ClassEquation,
    sol,
    point: Mapping,
    steps: Sequence[float] = (1e-2, 5e-3),
) -> float:
    """PDE residual at ``point`` using central differences with Richardson extrapolation.

    Independent of symbolic differentiation of ``sol``: only values of ``sol``
    are used.  The coefficients ``f, D, D_u, K`` are evaluated directly.
    """
    sol = as_expr(sol)
    fns = eq.numeric_functions()
    base = {k: float(v) for k, v in point.items()}

    def w(dt=0.0, dx=0.0):
        p = dict(base)
        p["t"] = base["t"] + dt
        p["x"] = base["x"] + dx
        return float(evaluate(sol, p, fns))

    def derivs(h):
        w0 = w()
        wt = (w(dt=h) - w(dt=-h)) / (2 * h)
        wx = (w(dx=h) - w(dx=-h)) / (2 * h)
        wxx = (w(dx=h) - 2 * w0 + w(dx=-h)) / h**2
        return np.array([wt, wx, wxx]), w0

    h1, h2 = steps
    d1, w0 = derivs(h1)
    d2, _ = derivs(h2)
    r = (h1 / h2) ** 2
    wt, wx, wxx = (r * d2 - d1) / (r - 1)
    f = float(eq.evaluate(eq.f, {"x": base["x"]}))
    uval = {"u": w0}
    D = float(eq.evaluate(eq.D, uval))
    Du = float(eq.evaluate(differentiate(eq.D, "u"), uval))
    K = float(eq.evaluate(eq.K, uval))
    return f * wt - Du * wx**2 - D * wxx - K * wx


def symbolic_residual_at(eq: ClassEquation, sol, point: Mapping) -> float:
    r = eq.resolve(residual(eq, as_expr(sol)))
    return float(evaluate(r, {k: float(v) for k, v in point.items()}, eq.numeric_functions()))
