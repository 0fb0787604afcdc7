"""Infinitesimal invariance: prolongation, invariance residual, determining equations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import Expr, differentiate, substitute, var
from .model import JET_BOX, ClassEquation, VectorField, lie_bracket
from .verify import Grid, OracleDisagreement, ResidualReport, zero_report

SYMMETRY_TOL = 1e-8

# total-derivative shifts on the jet: name -> (d/dt name, d/dx name)
_JET = {
    "u": ("u_t", "u_x"),
    "u_t": ("u_tt", "u_tx"),
    "u_x": ("u_tx", "u_xx"),
    "u_tx": ("u_ttx", "u_txx"),
    "u_xx": ("u_txx", "u_xxx"),
}


def total_derivative(e: Expr, wrt: str) -> Expr:
    """D_t or D_x of a function on the jet (orders up to two in the argument)."""
    k = 0 if wrt == "t" else 1
    out = differentiate(e, wrt)
    for name, shifts in _JET.items():
        if name in e.free_symbols():
            out = out + var(shifts[k]) * differentiate(e, name)
    return out


@dataclass(frozen=True)
class ProlongedField:
    """A generator together with its first and second prolongation coefficients."""

    base: VectorField
    eta_t: Expr
    eta_x: Expr
    eta_xx: Expr

    def apply(self, F: Expr) -> Expr:
        """pr⁽²⁾Q(F) for F on (t, x, u, u_t, u_x, u_xx)."""
        b = self.base
        out = b.xi_t * differentiate(F, "t") + b.xi_x * differentiate(F, "x") + b.eta * differentiate(F, "u")
        out = out + self.eta_t * differentiate(F, "u_t") + self.eta_x * differentiate(F, "u_x")
        return out + self.eta_xx * differentiate(F, "u_xx")


def prolong2(v: VectorField) -> ProlongedField:
    """Second prolongation by the total-derivative formulas."""
    ut, ux, utx, uxx = var("u_t"), var("u_x"), var("u_tx"), var("u_xx")
    Dt = lambda e: total_derivative(e, "t")  # noqa: E731
    Dx = lambda e: total_derivative(e, "x")  # noqa: E731
    eta_t = Dt(v.eta) - ut * Dt(v.xi_t) - ux * Dt(v.xi_x)
    eta_x = Dx(v.eta) - ut * Dx(v.xi_t) - ux * Dx(v.xi_x)
    eta_xx = Dx(eta_x) - utx * Dx(v.xi_t) - uxx * Dx(v.xi_x)
    return ProlongedField(v, eta_t, eta_x, eta_xx)


def invariance_residual(eq: ClassEquation, v: VectorField) -> Expr:
    """pr⁽²⁾Q(Δ) restricted to Δ = 0 by eliminating u_t (and u_tx if present)."""
    v.validate(eq.domain)
    pv = prolong2(v)
    r = pv.apply(eq.operator())
    ut = eq.u_t()
    bindings = {"u_t": ut}
    if "u_tx" in r.free_symbols():
        bindings["u_tx"] = total_derivative(ut, "x")
    r = substitute(r, bindings)
    return eq.resolve(r)


def _sampling_grid(eq: ClassEquation, seed: int, n: int = 12) -> Grid:
    box = dict(eq.domain)
    box.update(JET_BOX)
    box.setdefault("u_xxx", (-2.0, 2.0))
    return Grid(intervals=box, n=n, seed=seed)


@dataclass
class DeterminingReport:
    """Residuals of the shape conditions and the three classifying equations."""

    entries: list = field(default_factory=list)  # (name, Expr, ResidualReport)

    @property
    def passed(self) -> bool:
        return all(rep.verdict for _, _, rep in self.entries)

    def __bool__(self):
        return self.passed

    def failing(self) -> list[str]:
        return [name for name, _, rep in self.entries if not rep.verdict]

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "equations": [
                {
                    "name": name,
                    "residual": str(e),
                    "max_magnitude": rep.max_abs,
                    "verdict": "pass" if rep.verdict else "fail",
                }
                for name, e, rep in self.entries
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def determining_equations(eq: ClassEquation, v: VectorField) -> list[tuple[str, Expr]]:
    """The shape conditions and classifying equations as expressions in (t, x, u)."""
    f, D, K = eq.f, eq.D, eq.K
    xt, xx, eta = v.xi_t, v.xi_x, v.eta
    d = differentiate
    fx_f = eq.resolve(d(f, "x")) * f**-1
    Du, Ku = d(D, "u"), d(K, "u")
    shape = [
        ("xi_t_x", d(xt, "x")),
        ("xi_t_u", d(xt, "u")),
        ("xi_x_u", d(xx, "u")),
        ("eta_uu", d(d(eta, "u"), "u")),
    ]
    e1 = 2 * d(xx, "x") - d(xt, "t") + fx_f * xx - Du * D**-1 * eta
    e2 = D * d(d(eta, "x"), "x") + K * d(eta, "x") - f * d(eta, "t")
    e3 = (
        (Du * K - Ku * D) * eta * D**-1
        - K * d(xx, "x")
        - 2 * Du * d(eta, "x")
        + D * d(d(xx, "x"), "x")
        - f * d(xx, "t")
        - 2 * D * d(d(eta, "x"), "u")
    )
    return shape + [("classifying_1", e1), ("classifying_2", e2), ("classifying_3", e3)]


def determining_residuals(
    eq: ClassEquation, v: VectorField, tol: float = SYMMETRY_TOL, seed: int = 7
) -> DeterminingReport:
    grid = _sampling_grid(eq, seed)
    fns = eq.numeric_functions()
    report = DeterminingReport()
    for name, e in determining_equations(eq, v):
        e = eq.resolve(e)
        rep = zero_report(e, grid, tol, fns, label=name, names=e.free_symbols() | {"t", "x", "u"})
        report.entries.append((name, e, rep))
    return report


@dataclass
class SymmetryVerdict:
    symmetric: bool
    invariance: ResidualReport
    determining: DeterminingReport

    def __bool__(self):
        return self.symmetric

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.symmetric else "fail",
            "invariance": self.invariance.to_dict(),
            "determining": self.determining.to_dict(),
        }


def symmetry_check(
    eq: ClassEquation, v: VectorField, tol: float = SYMMETRY_TOL, seed: int = 7, strict: bool = True
) -> SymmetryVerdict:
    """Run both oracles; with ``strict`` a disagreement raises :class:`OracleDisagreement`."""
    r = invariance_residual(eq, v)
    grid = _sampling_grid(eq, seed)
    names = r.free_symbols() | {"t", "x", "u", "u_x", "u_xx"}
    inv = zero_report(r, grid, tol, eq.numeric_functions(), label="invariance", names=names)
    det = determining_residuals(eq, v, tol, seed)
    if strict and inv.verdict != det.passed:
        point = inv.argmax if not inv.verdict else next(
            (rep.argmax for _, _, rep in det.entries if not rep.verdict), {}
        )
        raise OracleDisagreement(
            f"invariance residual says {inv.verdict}, determining equations say {det.passed} "
            f"for {v} on {eq}",
            point,
        )
    return SymmetryVerdict(inv.verdict and det.passed, inv, det)


def is_symmetry(eq: ClassEquation, v: VectorField, tol: float = SYMMETRY_TOL) -> bool:
    """True iff both the invariance residual and the determining equations vanish."""
    return symmetry_check(eq, v, tol).symmetric


# ---------------------------------------------------------------------------
# algebras


def _sample_points(domain: Mapping, n: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {k: rng.uniform(*domain.get(k, (0.5, 2.0)), n) for k in ("t", "x", "u")}


def span_coefficients(
    target: VectorField, basis: Sequence[VectorField], domain: Mapping | None = None, n: int = 12, seed: int = 3
) -> tuple[np.ndarray, float]:
    """Least-squares coefficients of ``target`` in ``basis`` and the relative residual."""
    pts = _sample_points(domain or {}, n, seed)
    A = np.column_stack([b.sample(pts) for b in basis]) if basis else np.zeros((3 * n, 0))
    y = target.sample(pts)
    if A.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(y) / (1 + np.linalg.norm(y)))
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.linalg.norm(A @ coef - y) / (1 + np.linalg.norm(y)))
    return coef, res


def rank(basis: Sequence[VectorField], domain: Mapping | None = None, n: int = 12, seed: int = 3) -> int:
    if not basis:
        return 0
    pts = _sample_points(domain or {}, n, seed)
    A = np.column_stack([b.sample(pts) for b in basis])
    return int(np.linalg.matrix_rank(A, tol=1e-9 * max(1.0, np.abs(A).max())))


@dataclass
class AlgebraReport:
    basis: list
    symmetric: list
    verdicts: list
    closed: bool
    structure_constants: np.ndarray
    closure_residuals: dict
    dimension: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.symmetric) and self.closed and not self.failures

    def nonzero_brackets(self, tol: float = 1e-9) -> dict:
        out = {}
        C = self.structure_constants
        n = len(self.basis)
        for i in range(n):
            for j in range(i + 1, n):
                coeffs = C[i, j]
                if np.any(np.abs(coeffs) > tol):
                    out[(i, j)] = coeffs
        return out

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "basis": [str(b) for b in self.basis],
            "symmetric": self.symmetric,
            "closed": self.closed,
            "dimension": self.dimension,
            "structure_constants": {
                f"[{i + 1},{j + 1}]": [float(c) for c in coeffs]
                for (i, j), coeffs in self.nonzero_brackets().items()
            },
            "failures": self.failures,
        }


def algebra_check(
    eq: ClassEquation, basis: Sequence[VectorField], tol: float = SYMMETRY_TOL, strict: bool = True
) -> AlgebraReport:
    """Symmetry of each basis element, closure under brackets, structure constants."""
    basis = list(basis)
    n = len(basis)
    verdicts = [symmetry_check(eq, b, tol, strict=strict) for b in basis]
    symmetric = [bool(v) for v in verdicts]
    failures = [f"operator {i + 1} ({basis[i]}) is not a symmetry" for i in range(n) if not symmetric[i]]
    C = np.zeros((n, n, n))
    residuals = {}
    closed = True
    for i in range(n):
        for j in range(i + 1, n):
            br = lie_bracket(basis[i], basis[j], check=False)
            coef, res = span_coefficients(br, basis, eq.domain)
            residuals[(i, j)] = res
            C[i, j] = coef
            C[j, i] = -coef
            if res > 1e-8:
                closed = False
                failures.append(f"[{basis[i]}, {basis[j]}] not in span (residual {res:.3g})")
    dim = rank(basis, eq.domain)
    return AlgebraReport(basis, symmetric, verdicts, closed, C, residuals, dim, failures)
