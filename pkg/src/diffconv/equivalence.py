"""Equivalence transformations of the class and their action.

Three kinds of maps are handled here:

* elements of the equivalence group (seven continuous parameters plus four
  sign-flip involutions), with a closed-form action on ``(f, D, K)``;
* arbitrary point transformations of the admissible shape, whose action on an
  equation is computed from the chain rule on the jet (``transform_equation``);
* flows of conditional-equivalence generators acting on ``(t, x, u, f)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import (
    ONE,
    ZERO,
    Expr,
    as_expr,
    differentiate,
    evaluate,
    exp,
    par,
    parse,
    simplify,
    substitute,
    var,
)
from .model import (
    DEFAULT_BOX,
    JET_BOX,
    ClassEquation,
    PointTransformation,
    ShapeError,
    VectorField,
    _box,
    _invert_simple,
    _nonzero_derivative,
    antiderivative,
)
from .symmetry import total_derivative
from .verify import Grid, ResidualReport, zero_report

T, X, U = var("t"), var("x"), var("u")
UX, UXX = var("u_x"), var("u_xx")
TRANSPORT_TOL = 1e-9


class EquivalenceError(ValueError):
    """A transformation does not map the equation into the class."""


class FlowError(ValueError):
    """The flow leaves the domain box (or blows up) for the requested parameter."""


def _merged_functions(*owners) -> dict:
    out = {}
    for o in owners:
        out.update(o.numeric_functions())
    return out


# ---------------------------------------------------------------------------
# equivalence group of the whole class


_FLIPS = ("flip_tDK", "flip_xK", "flip_u", "flip_fDK")


@dataclass(frozen=True)
class GroupElement:
    """``C(ε) ∘ F(flips)``: sign flips first, then translations and scalings.

    ``eps[0:3]`` translate ``t, x, u``; ``eps[3:6]`` are the logarithms of
    their scale factors; ``eps[6]`` rescales ``(f, D, K)`` jointly.
    """

    eps: tuple = (0, 0, 0, 0, 0, 0, 0)
    flip_tDK: bool = False
    flip_xK: bool = False
    flip_u: bool = False
    flip_fDK: bool = False

    def __post_init__(self):
        eps = tuple(as_expr(e) for e in self.eps)
        if len(eps) != 7:
            raise ValueError("a group element has exactly seven continuous parameters")
        object.__setattr__(self, "eps", eps)

    @classmethod
    def from_params(cls, flips: Sequence[str] = (), **eps) -> "GroupElement":
        """``GroupElement.from_params(eps5="ln(2)", flips=["flip_xK"])``."""
        vals = [eps.pop(f"eps{i}", 0) for i in range(1, 8)]
        if eps:
            raise TypeError(f"unknown parameters {sorted(eps)}")
        bad = set(flips) - set(_FLIPS)
        if bad:
            raise TypeError(f"unknown flips {sorted(bad)}")
        return cls(tuple(vals), **{f: True for f in flips})

    # signs acquired by each coordinate under the flip part
    def signs(self) -> dict:
        s = lambda *flags: -1 if sum(bool(getattr(self, f)) for f in flags) % 2 else 1  # noqa: E731
        return {
            "t": s("flip_tDK"),
            "x": s("flip_xK"),
            "u": s("flip_u"),
            "f": s("flip_fDK"),
            "D": s("flip_tDK", "flip_fDK"),
            "K": s("flip_tDK", "flip_xK", "flip_fDK"),
        }

    def flips(self) -> tuple:
        return tuple(f for f in _FLIPS if getattr(self, f))

    def factors(self) -> dict:
        """Multipliers of ``f, D, K`` (values at corresponding points)."""
        e = self.eps
        s = self.signs()
        return {
            "f": s["f"] * exp(e[3] - 2 * e[4] + e[6]),
            "D": s["D"] * exp(e[6]),
            "K": s["K"] * exp(e[6] - e[4]),
        }

    def transformation(self) -> PointTransformation:
        e = self.eps
        s = self.signs()
        fwd = (
            s["t"] * T * exp(e[3]) + e[0],
            s["x"] * X * exp(e[4]) + e[1],
            s["u"] * U * exp(e[5]) + e[2],
        )
        bwd = (
            s["t"] * (T - e[0]) * exp(-e[3]),
            s["x"] * (X - e[1]) * exp(-e[4]),
            s["u"] * (U - e[2]) * exp(-e[5]),
        )
        return PointTransformation(*fwd, *bwd, branch="equivalence group element")

    def apply(self, eq: ClassEquation) -> ClassEquation:
        """Closed-form action on the arbitrary elements."""
        tr = self.transformation()
        fac = self.factors()
        x_old = {"x": tr.X_inv}
        u_old = {"u": tr.U_inv}
        f = simplify(fac["f"] * substitute(eq.f, x_old))
        D = simplify(fac["D"] * substitute(eq.D, u_old))
        K = simplify(fac["K"] * substitute(eq.K, u_old))
        return ClassEquation(f, D, K, tr.image_box(eq.domain), eq.profiles, eq.label)

    def act(self, point: Mapping) -> dict:
        """Numeric action on a point of ``(t, x, u, f, D, K)``."""
        e = [float(evaluate(v, {})) for v in self.eps]
        s = self.signs()
        fac = {k: float(evaluate(v, {})) for k, v in self.factors().items()}
        out = {
            "t": s["t"] * np.asarray(point["t"]) * np.exp(e[3]) + e[0],
            "x": s["x"] * np.asarray(point["x"]) * np.exp(e[4]) + e[1],
            "u": s["u"] * np.asarray(point["u"]) * np.exp(e[5]) + e[2],
        }
        for k in "fDK":
            out[k] = fac[k] * np.asarray(point[k])
        return out

    def compose(self, after: "GroupElement") -> "GroupElement":
        """``after ∘ self``."""
        a, b = self.eps, after.eps
        sb = after.signs()
        # move after's flips past self's continuous part
        a1, a2, a3 = sb["t"] * a[0], sb["x"] * a[1], sb["u"] * a[2]
        eps = (
            a1 * exp(b[3]) + b[0],
            a2 * exp(b[4]) + b[1],
            a3 * exp(b[5]) + b[2],
            a[3] + b[3],
            a[4] + b[4],
            a[5] + b[5],
            a[6] + b[6],
        )
        flips = {f: bool(getattr(self, f)) != bool(getattr(after, f)) for f in _FLIPS}
        return GroupElement(tuple(simplify(e) for e in eps), **flips)

    def inverse(self) -> "GroupElement":
        e = self.eps
        s = self.signs()
        eps = (
            -s["t"] * e[0] * exp(-e[3]),
            -s["x"] * e[1] * exp(-e[4]),
            -s["u"] * e[2] * exp(-e[5]),
            -e[3],
            -e[4],
            -e[5],
            -e[6],
        )
        return GroupElement(tuple(simplify(v) for v in eps), **{f: getattr(self, f) for f in _FLIPS})

    def to_dict(self) -> dict:
        return {"eps": [str(e) for e in self.eps], "flips": list(self.flips())}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroupElement":
        return cls(tuple(parse(e) for e in d["eps"]), **{f: True for f in d.get("flips", ())})


DISCRETE_GENERATORS = tuple(GroupElement(**{f: True}) for f in _FLIPS)


@dataclass(frozen=True)
class SubclassElement:
    """Element of the equivalence group of the subclass ``f = 1``.

    ``t̃ = a²b t + c₁``, ``x̃ = a x + g t + c₂``, ``ũ = m u + c₃``,
    ``D̃ = D/b``, ``K̃ = K/(ab) − g/(a²b)``.  The drift term carries the
    time scale; dropping it is only right when ``a²b = 1``.
    """

    a: object = 1
    b: object = 1
    m: object = 1
    c1: object = 0
    c2: object = 0
    c3: object = 0
    g: object = 0

    def __post_init__(self):
        for name in ("a", "b", "m", "c1", "c2", "c3", "g"):
            object.__setattr__(self, name, as_expr(getattr(self, name)))
        for name in ("a", "b", "m"):
            if getattr(self, name).is_zero():
                raise ValueError(f"scale parameter {name} must be nonzero")

    def transformation(self) -> PointTransformation:
        a, b, m = self.a, self.b, self.m
        tt = a**2 * b * T + self.c1
        xt = a * X + self.g * T + self.c2
        ut = m * U + self.c3
        t_old = (T - self.c1) * (a**2 * b) ** -1
        x_old = (X - self.g * t_old - self.c2) * a**-1
        u_old = (U - self.c3) * m**-1
        return PointTransformation(tt, xt, ut, t_old, x_old, u_old, branch="f = 1 subclass element")

    def apply(self, eq: ClassEquation) -> ClassEquation:
        if not eq.f.is_one():
            raise EquivalenceError("subclass elements act on equations with f = 1 only")
        tr = self.transformation()
        u_old = {"u": tr.U_inv}
        D = simplify(substitute(eq.D, u_old) * self.b**-1)
        K = simplify(substitute(eq.K, u_old) * (self.a * self.b) ** -1 - self.g * (self.a**2 * self.b) ** -1)
        return ClassEquation(ONE, D, K, tr.image_box(eq.domain), eq.profiles, eq.label)


# ---------------------------------------------------------------------------
# action of a point transformation through the jet


def tilde_jets(tr: PointTransformation) -> dict:
    """New-variable derivatives ``ũ, ũ_x̃, ũ_x̃x̃, ũ_t̃`` on the old jet.

    ``u_t`` is left symbolic; callers substitute it from the source equation.
    """
    Tt = differentiate(tr.T, "t")
    Xt, Xx = differentiate(tr.X, "t"), differentiate(tr.X, "x")
    p = total_derivative(tr.U, "x") * Xx**-1
    q = total_derivative(p, "x") * Xx**-1
    r = (total_derivative(tr.U, "t") - Xt * p) * Tt**-1
    return {"u": tr.U, "u_x": p, "u_xx": q, "u_t": r}


def pull_back_operator(tr: PointTransformation, eq: ClassEquation, op_new: Expr) -> Expr:
    """Express an operator written in the new jet on the old jet, on solutions of ``eq``.

    ``op_new`` is an expression in ``t, x, u, u_t, u_x, u_xx`` meaning the new
    variables.  The result lives on ``(t, x, u, u_x, u_xx)`` of the source.
    """
    jets = tilde_jets(tr)
    bind = {"t": tr.T, "x": tr.X, **jets}
    e = substitute(op_new, bind)
    ut = eq.u_t()
    return substitute(e, {"u_t": ut, "u_tx": total_derivative(ut, "x")})


def _jet_grid(box: Mapping, seed: int = 11, n: int = 12) -> Grid:
    intervals = dict(box)
    intervals.update(JET_BOX)
    return Grid(intervals=intervals, n=n, seed=seed)


def _drop_constant_variables(e: Expr, keep: set, box: Mapping, functions, tol: float) -> Expr:
    """Replace variables outside ``keep`` by a box midpoint after checking ``e`` ignores them."""
    extra = e.variables() - keep
    if not extra:
        return e
    grid = Grid(intervals=dict(box), n=12, seed=5)
    for v in sorted(extra):
        rep = zero_report(differentiate(e, v), grid, tol, functions, names=e.free_symbols())
        if not rep.verdict:
            raise EquivalenceError(f"transformed coefficient depends on {v}: {e}")
    mid = {v: sum(box.get(v, DEFAULT_BOX.get(v, (0.5, 2.0)))) / 2 for v in extra}
    return simplify(substitute(e, mid))


@dataclass
class TransportReport:
    """Outcome of mapping an equation through a point transformation."""

    identity: ResidualReport
    f_new: Expr
    K_new: Expr
    D_new: Expr

    @property
    def passed(self) -> bool:
        return self.identity.verdict


def transform_equation(
    tr: PointTransformation,
    eq: ClassEquation,
    D_new=None,
    tol: float = 1e-8,
) -> tuple[ClassEquation, TransportReport]:
    """Image of ``eq`` under ``tr`` with the diffusivity fixed to ``D_new``.

    By default ``D_new`` is the source diffusivity read as a function of the
    new ``u``.  The new density and convection are solved from the
    ``u_xx`` and ``u_x`` coefficients; the remaining identity is then checked
    on a jet grid.  Raises :class:`EquivalenceError` when the image is not a
    class member.
    """
    D_new = eq.D if D_new is None else as_expr(D_new)
    F, Kt = par("_F"), par("_Kt")
    Dn_u = differentiate(D_new, "u")
    target = F * var("u_t") - D_new * UXX - Dn_u * UX**2 - Kt * UX
    R = pull_back_operator(tr, eq, target)
    fns = _merged_functions(eq, tr)
    R = eq.resolve(tr.resolve(R))

    c_xx = differentiate(R, "u_xx")
    c0 = substitute(c_xx, {"_F": 0, "_Kt": 0})
    c1 = differentiate(c_xx, "_F")
    F_old = simplify(-c0 * c1**-1)
    R1 = substitute(R, {"_F": F_old})
    g1 = substitute(differentiate(substitute(R1, {"_Kt": 0}), "u_x"), {"u_x": 0, "u_xx": 0})
    p1 = substitute(differentiate(-differentiate(R1, "_Kt"), "u_x"), {"u_x": 0, "u_xx": 0})
    K_old = simplify(g1 * p1**-1)
    full = substitute(R1, {"_Kt": K_old})
    grid = _jet_grid(eq.domain)
    ident = zero_report(full, grid, tol, fns, label="transformed identity",
                        names=full.free_symbols() | {"t", "x", "u", "u_x", "u_xx"})
    if not ident.verdict:
        raise EquivalenceError(
            f"{tr} does not map {eq} into the class (identity residual {ident.max_scaled:.3g})"
        )
    box = tr.image_box(eq.domain)
    f_new = simplify(tr.to_new(F_old))
    K_new = simplify(tr.to_new(K_old))
    f_new = _drop_constant_variables(f_new, {"x"}, box, fns, tol)
    K_new = _drop_constant_variables(K_new, {"u"}, box, fns, tol)
    profiles = dict(eq.profiles)
    profiles.update(tr.profiles)
    out = ClassEquation(f_new, D_new, K_new, box, profiles, eq.label)
    return out, TransportReport(ident, f_new, K_new, D_new)


def apply_to_equation(g, eq: ClassEquation, **kw) -> ClassEquation:
    """Image of ``eq`` under a group element, named transformation or point transformation."""
    if isinstance(g, (GroupElement, SubclassElement)):
        return g.apply(eq)
    if isinstance(g, NamedTransformation):
        return transform_equation(g.transformation, eq, D_new=g.D_new, **kw)[0]
    if isinstance(g, PointTransformation):
        return transform_equation(g, eq, **kw)[0]
    raise TypeError(f"cannot apply {type(g).__name__}")


def apply_to_solution(tr, sol) -> Expr:
    """``ũ(t̃, x̃) = U(t, x, sol(t, x))`` written in the new variables."""
    tr = _as_transformation(tr)
    sol = as_expr(sol)
    e = substitute(tr.U, {"u": sol})
    return substitute(e, {"t": tr.T_inv, "x": tr.X_inv})


def push_forward(tr, v: VectorField, validate: bool = True) -> VectorField:
    """Change of variables of a generator: components ``v(T), v(X), v(U)`` in new variables."""
    tr = _as_transformation(tr)
    comps = tuple(simplify(tr.to_new(v.apply(c))) for c in tr.forward)
    out = VectorField(*comps)
    if validate:
        out.validate()
    return out


def _as_transformation(tr) -> PointTransformation:
    if isinstance(tr, PointTransformation):
        return tr
    if isinstance(tr, (GroupElement, SubclassElement)):
        return tr.transformation()
    if isinstance(tr, NamedTransformation):
        return tr.transformation
    raise TypeError(f"not a transformation: {type(tr).__name__}")


@dataclass
class EquationMatch:
    """Comparison of a computed image with an expected class member."""

    passed: bool
    f_scale: float
    f_error: float
    D_error: float
    K_error: float

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "f_scale": self.f_scale,
            "f_error": self.f_error,
            "D_error": self.D_error,
            "K_error": self.K_error,
        }


def _rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / (1 + np.abs(a) + np.abs(b))))


def compare_equations(
    got: ClassEquation,
    expected: ClassEquation,
    tol: float = TRANSPORT_TOL,
    allow_time_scale: bool = True,
    n: int = 12,
    seed: int = 2,
) -> EquationMatch:
    """Numeric comparison on the expected equation's box.

    With ``allow_time_scale`` the densities may differ by a positive constant
    factor, which a rescaling of ``t`` (a group element) removes.
    """
    rng = np.random.default_rng(seed)
    box = expected.domain
    xs = rng.uniform(*box["x"], n)
    us = rng.uniform(*box["u"], n)
    fg = np.broadcast_to(got.evaluate(got.f, {"x": xs}), xs.shape)
    fe = np.broadcast_to(expected.evaluate(expected.f, {"x": xs}), xs.shape)
    scale = 1.0
    if allow_time_scale:
        ratio = fg / fe
        scale = float(np.median(ratio))
        if not scale > 0:
            scale = float("nan")
    f_err = _rel_error(fg, scale * fe) if np.isfinite(scale) else float("inf")
    d_err = _rel_error(
        np.broadcast_to(got.evaluate(got.D, {"u": us}), us.shape),
        np.broadcast_to(expected.evaluate(expected.D, {"u": us}), us.shape),
    )
    k_err = _rel_error(
        np.broadcast_to(got.evaluate(got.K, {"u": us}), us.shape),
        np.broadcast_to(expected.evaluate(expected.K, {"u": us}), us.shape),
    )
    ok = max(f_err, d_err, k_err) <= tol
    return EquationMatch(bool(ok), scale, f_err, d_err, k_err)


def time_rescaled(sol: Expr, scale: float) -> Expr:
    """Solution of ``c f u_t = …`` turned into one of ``f u_t = …`` (``t → t/c``)."""
    if scale == 1.0:
        return sol
    return substitute(sol, {"t": T * as_expr(scale) ** -1})


# ---------------------------------------------------------------------------
# named transformations


@dataclass(frozen=True)
class NamedTransformation:
    """A tabulated transformation between two catalog cases."""

    id: str
    source: str
    target: str
    transformation: PointTransformation
    source_params: Mapping = field(default_factory=dict)
    target_params: Mapping = field(default_factory=dict)
    domain: Mapping = field(default_factory=dict)
    D_new: Expr | None = None
    branch: str = ""
    notes: str = ""

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "source": self.source,
            "target": self.target,
            "source_params": {k: str(v) for k, v in self.source_params.items()},
            "target_params": {k: str(v) for k, v in self.target_params.items()},
            "forward": [str(e) for e in self.transformation.forward],
            "inverse": [str(e) for e in self.transformation.backward],
            "domain": {k: list(v) for k, v in self.domain.items()},
            "branch": self.branch,
            "notes": self.notes,
        }
        if self.D_new is not None:
            d["D_new"] = str(self.D_new)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NamedTransformation":
        tr = PointTransformation.from_strings(d["forward"], d["inverse"], d.get("branch", ""))
        return cls(
            id=d["id"],
            source=d["source"],
            target=d["target"],
            transformation=tr,
            source_params=dict(d.get("source_params", {})),
            target_params=dict(d.get("target_params", {})),
            domain={k: tuple(v) for k, v in d.get("domain", {}).items()},
            D_new=parse(d["D_new"]) if d.get("D_new") else None,
            branch=d.get("branch", ""),
            notes=d.get("notes", ""),
        )


def bind_transformation(nt: NamedTransformation, params: Mapping) -> PointTransformation:
    """Substitute numeric parameter values into the stored expressions."""
    tr = nt.transformation
    vals = {k: as_expr(v) for k, v in params.items()}
    return PointTransformation(
        *(simplify(substitute(e, vals)) for e in tr.forward),
        *(simplify(substitute(e, vals)) for e in tr.backward),
        branch=tr.branch,
        profiles=tr.profiles,
    )


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class Admissibility:
    admissible: bool
    violations: list = field(default_factory=list)
    requirements: list = field(default_factory=list)

    def __bool__(self):
        return self.admissible

    def to_dict(self) -> dict:
        return {
            "verdict": "admissible" if self.admissible else "rejected",
            "violations": self.violations,
            "requirements": self.requirements,
        }


def admissibility_check(tr, domain: Mapping | None = None) -> Admissibility:
    """Shape filters every transformation between class members must satisfy.

    The new time depends on ``t`` only, the new ``x`` does not depend on ``u``
    and the new ``u`` is affine in ``u``.  A new ``u`` that also varies with
    ``(t, x)`` is only possible for power or exponential diffusivities; that
    is returned as a requirement, not checked.
    """
    tr = _as_transformation(tr)
    box = _box(domain)
    bad = []
    for v in ("x", "u"):
        if _nonzero_derivative(tr.T, v, box):
            bad.append(f"new t depends on {v}; it must depend on t only")
    if _nonzero_derivative(tr.X, "u", box):
        bad.append("new x depends on u; the map must be projectible")
    Uu = differentiate(tr.U, "u")
    if _nonzero_derivative(Uu, "u", box):
        bad.append("new u is not affine in u")
    if not _nonzero_derivative(tr.U, "u", box):
        bad.append("new u does not depend on u (degenerate)")
    reqs = []
    if not bad:
        varies = any(_nonzero_derivative(tr.U, v, box) for v in ("t", "x"))
        if varies:
            reqs.append("D must be u^mu or e^u up to the equivalence group")
    return Admissibility(not bad, bad, reqs)


# ---------------------------------------------------------------------------
# conditional equivalence generators and their flows


CONSTRAINTS = {
    "K=D": {"D": None, "K": "D"},
    "K=D=e^u": {"D": "exp(u)", "K": "exp(u)"},
    "D=e^u,K=0": {"D": "exp(u)", "K": "0"},
    "D=K=u^mu": {"D": "u^mu", "K": "u^mu"},
    "D=u^mu,K=0": {"D": "u^mu", "K": "0"},
}


@dataclass(frozen=True)
class EquivalenceGenerator:
    """``τ∂_t + ξ∂_x + η∂_u + a f∂_f + b D∂_D + c K∂_K`` under a constraint on ``(D, K)``.

    When the constraint fixes ``D`` and ``K`` as functions, they are not
    transformed; for ``K=D`` they are transported pointwise.
    """

    tau: Expr
    xi: Expr
    eta: Expr
    f_rate: Expr
    D_rate: Expr
    K_rate: Expr
    constraint: str = ""
    text: str = ""

    @classmethod
    def parse(cls, text: str, constraint: str = "") -> "EquivalenceGenerator":
        e = parse(text)
        comps = {d: simplify(differentiate(e, d)) for d in ("dt", "dx", "du", "df", "dD", "dK")}
        rest = substitute(e, {d: 0 for d in comps})
        if not rest.is_zero() or any(set(comps) & c.free_symbols() for c in comps.values()):
            raise ShapeError(f"not a linear combination of dt, dx, du, df, dD, dK: {text!r}")
        f_rate = simplify(comps["df"] * par("f") ** -1)
        if "f" in f_rate.free_symbols():
            raise ShapeError(f"the df component must be proportional to f: {comps['df']}")
        D_rate = simplify(comps["dD"] * par("D") ** -1)
        K_rate = simplify(comps["dK"] * par("K") ** -1)
        if D_rate.free_symbols() or K_rate.free_symbols():
            raise ShapeError("dD and dK components must be constant multiples of D and K")
        tau, xi, eta = comps["dt"], comps["dx"], comps["du"]
        if tau.variables() - {"t"} or xi.variables() - {"x"} or eta.variables() - {"x", "u"}:
            raise ShapeError("expected tau(t), xi(x), eta(x, u)")
        if f_rate.variables() - {"x", "u"}:
            raise ShapeError("the f rate must depend on x and u only")
        if constraint and constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}")
        return cls(tau, xi, eta, f_rate, D_rate, K_rate, constraint, text)

    def velocity(self, pts: Mapping) -> dict:
        """Right-hand side of the characteristic system on ``(t, x, u, log f)``."""
        n = len(pts["x"])
        ev = lambda e: np.broadcast_to(evaluate(e, pts), (n,)).astype(float)  # noqa: E731
        return {"t": ev(self.tau), "x": ev(self.xi), "u": ev(self.eta), "logf": ev(self.f_rate)}

    def __str__(self):
        return self.text or f"{self.tau}*dt + {self.xi}*dx + {self.eta}*du + ({self.f_rate})*f*df"


def _integral_along(h: Expr, xi: Expr, x_new: Expr, eps: Expr):
    """∫₀^ε h(x(s)) ds along dx/ds = ξ(x), h depending on x only; ``None`` if no closed form."""
    if h.is_zero():
        return ZERO
    if "x" not in h.free_symbols():
        return h * eps
    if xi.is_zero():
        return h * eps
    H = antiderivative(simplify(h * xi**-1), "x")
    if H is None:
        return None
    return substitute(H, {"x": x_new}) - H


def _affine_flow(a: Expr, b: Expr, s: Expr, eps: Expr):
    """Flow of ds/dε = a + b s (a, b constants) and its inverse."""
    if b.is_zero():
        return s + a * eps, s - a * eps
    k = exp(b * eps)
    fwd = s * k + a * b**-1 * (k - 1)
    bwd = (s - a * b**-1 * (k - 1)) * k**-1
    return fwd, bwd


@dataclass
class FlowResult:
    generator: EquivalenceGenerator
    epsilon: float
    transformation: PointTransformation | None
    f_factor: Expr | None  # f̃ = f(x) * f_factor, in old variables
    D_factor: Expr
    K_factor: Expr

    @property
    def closed_form(self) -> bool:
        return self.transformation is not None and self.f_factor is not None

    def map_points(self, pts: Mapping, steps: int = 400) -> dict:
        """Image of sample points of ``(t, x, u)`` and the log of the f multiplier."""
        if self.closed_form:
            tr = self.transformation
            n = len(pts["x"])
            out = {k: np.broadcast_to(evaluate(e, pts), (n,)).astype(float) for k, e in zip("txu", tr.forward)}
            out["logf"] = np.log(np.abs(np.broadcast_to(evaluate(self.f_factor, pts), (n,)).astype(float)))
            return out
        return integrate_flow(self.generator, self.epsilon, pts, steps)

    def apply_to_equation(self, eq: ClassEquation) -> ClassEquation:
        """Image of a constrained class member."""
        if not self.closed_form:
            raise FlowError("flow has no closed form; use map_points for numeric images")
        tr = self.transformation
        f_new = simplify(tr.to_new(eq.f * self.f_factor))
        gen = self.generator
        spec = CONSTRAINTS.get(gen.constraint, {"D": None})
        if spec["D"] is None:
            D_new = simplify(self.D_factor * tr.to_new(eq.D))
            if spec.get("K") == "D":
                K_new = D_new
            else:
                K_new = simplify(self.K_factor * tr.to_new(eq.K))
        else:
            D_new, K_new = eq.D, eq.K
        box = tr.image_box(eq.domain)
        f_new = _drop_constant_variables(f_new, {"x"}, box, eq.numeric_functions(), 1e-9)
        D_new = _drop_constant_variables(D_new, {"u"}, box, eq.numeric_functions(), 1e-9)
        K_new = _drop_constant_variables(K_new, {"u"}, box, eq.numeric_functions(), 1e-9)
        return ClassEquation(f_new, D_new, K_new, box, eq.profiles, eq.label)


def integrate_flow(gen: EquivalenceGenerator, epsilon: float, pts: Mapping, steps: int = 400) -> dict:
    """Classical fourth-order Runge–Kutta on the characteristic system."""
    state = {k: np.asarray(pts[k], float).copy() for k in "txu"}
    state["logf"] = np.zeros_like(state["x"])
    h = float(epsilon) / steps

    def shifted(s, k, c):
        return {key: s[key] + c * k[key] for key in s}

    for _ in range(steps):
        k1 = gen.velocity(state)
        k2 = gen.velocity(shifted(state, k1, h / 2))
        k3 = gen.velocity(shifted(state, k2, h / 2))
        k4 = gen.velocity(shifted(state, k3, h))
        state = {key: state[key] + h / 6 * (k1[key] + 2 * k2[key] + 2 * k3[key] + k4[key]) for key in state}
    return state


def flow(gen: EquivalenceGenerator, epsilon, domain: Mapping | None = None) -> FlowResult:
    """Exponentiate a generator: closed form when available, numeric otherwise.

    Raises :class:`FlowError` when the closed-form map is not finite and
    monotone on the box (e.g. ``x/(1-εx)`` crossing its pole).
    """
    eps = as_expr(epsilon)
    box = _box(domain)
    tau, xi, eta = gen.tau, gen.xi, gen.eta
    a_t, b_t = substitute(tau, {"t": 0}), differentiate(tau, "t")
    t_fwd = t_bwd = None
    if not b_t.variables() and not a_t.variables():
        t_fwd, t_bwd = _affine_flow(a_t, b_t, T, eps)
    # x part
    x_fwd = x_bwd = None
    a_x, b_x = substitute(xi, {"x": 0}), differentiate(xi, "x")
    if not b_x.variables():
        x_fwd, x_bwd = _affine_flow(a_x, b_x, X, eps)
    else:
        G = antiderivative(simplify(xi**-1), "x")
        inv = _invert_simple(G, "x") if G is not None else None
        if inv is not None:
            x_fwd = simplify(substitute(inv, {"_y": substitute(G, {"x": X}) + eps}))
            x_bwd = simplify(substitute(inv, {"_y": substitute(G, {"x": X}) - eps}))
    # u part: eta = p(x) u + q(x)
    u_fwd = None
    p = simplify(differentiate(eta, "u"))
    q = simplify(substitute(eta, {"u": 0}))
    if x_fwd is not None and "u" not in p.free_symbols():
        Ip = _integral_along(p, xi, x_fwd, eps)
        Iq = _integral_along(q, xi, x_fwd, eps)
        if p.is_zero() and Iq is not None:
            u_fwd = U + Iq
        elif q.is_zero() and Ip is not None:
            u_fwd = U * exp(Ip)
        elif not p.variables() and not q.variables():
            u_fwd, _ = _affine_flow(q, p, U, eps)
    f_factor = None
    if x_fwd is not None and "u" not in gen.f_rate.free_symbols():
        If = _integral_along(gen.f_rate, xi, x_fwd, eps)
        if If is not None:
            f_factor = exp(If)
    D_factor = exp(gen.D_rate * eps)
    K_factor = exp(gen.K_rate * eps)
    tr = None
    if None not in (t_fwd, x_fwd, u_fwd):
        # invert u: ũ = A(x) u + B(x) with x from the x-inverse
        A = simplify(differentiate(u_fwd, "u"))
        B = simplify(substitute(u_fwd, {"u": 0}))
        x_old = {"x": x_bwd}
        u_bwd = simplify((U - substitute(B, x_old)) * substitute(A, x_old) ** -1)
        tr = PointTransformation(
            simplify(t_fwd), simplify(x_fwd), simplify(u_fwd), simplify(t_bwd), x_bwd, u_bwd,
            branch=f"flow of {gen}",
        )
        _check_flow_domain(tr, box)
    else:
        pts = {k: np.linspace(*box[k], 64) for k in "txu"}
        img = integrate_flow(gen, float(evaluate(eps, {})), pts)
        if not all(np.all(np.isfinite(v)) for v in img.values()):
            raise FlowError(f"numeric flow of {gen} blows up on the box for epsilon={epsilon}")
    return FlowResult(gen, epsilon, tr, f_factor if tr is not None else None, D_factor, K_factor)


def _check_flow_domain(tr: PointTransformation, box: Mapping, n: int = 257):
    xs = np.linspace(*box["x"], n)
    mid = {k: np.full(n, sum(box[k]) / 2) for k in "tu"}
    vals = np.broadcast_to(evaluate(tr.X, {"x": xs, **mid}), xs.shape)
    d = np.diff(vals)
    if not np.all(np.isfinite(vals)) or not (np.all(d > 0) or np.all(d < 0)):
        raise FlowError(f"flow map x -> {tr.X} is not finite and monotone on x in {box['x']}")
    if tr.roundtrip_error(box) > 1e-8:
        raise FlowError(f"flow map {tr} does not invert on the box")


@dataclass
class ConstraintReport:
    """Result of checking that a flow stays inside its constrained subclass."""

    passed: bool
    f_error: float
    K_error: float
    identity: ResidualReport | None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "f_error": self.f_error,
            "K_error": self.K_error,
            "detail": self.detail,
        }


def constraint_check(fl: FlowResult, eq: ClassEquation, tol: float = 1e-8) -> ConstraintReport:
    """Compare the flow's claimed image with the jet-computed image of the same map.

    The transformed equation must keep the tagged constraint: for fixed
    ``(D, K)`` the jet image must reproduce them together with the flow's
    density; for ``K=D`` the new convection must equal the new diffusivity.
    """
    claimed = fl.apply_to_equation(eq)
    try:
        got, rep = transform_equation(fl.transformation, eq, D_new=claimed.D, tol=tol)
    except EquivalenceError as err:
        return ConstraintReport(False, float("inf"), float("inf"), None, str(err))
    cmp = compare_equations(got, claimed, tol=tol, allow_time_scale=False)
    spec = CONSTRAINTS.get(fl.generator.constraint, {"K": None})
    k_err = cmp.K_error
    if spec.get("K") == "D":
        rng = np.random.default_rng(4)
        us = rng.uniform(*got.domain["u"], 12)
        k_err = max(k_err, _rel_error(
            np.broadcast_to(got.evaluate(got.K, {"u": us}), us.shape),
            np.broadcast_to(got.evaluate(got.D, {"u": us}), us.shape),
        ))
    ok = cmp.f_error <= tol and k_err <= tol and cmp.D_error <= tol
    return ConstraintReport(bool(ok), cmp.f_error, k_err, rep.identity)


# ---------------------------------------------------------------------------
# the reflection example and the reaction-diffusion mapping


@dataclass
class InvolutionReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["verdict"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "checks": {
                k: {kk: (("pass" if vv else "fail") if kk == "verdict" else vv) for kk, vv in v.items()}
                for k, v in self.checks.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def reflection(alpha) -> PointTransformation:
    """``t̃ = t, x̃ = −x, ũ = u + αx`` (its own inverse up to the sign of α)."""
    a = as_expr(alpha)
    return PointTransformation(T, -X, U + a * X, T, -X, U + a * X, branch="reflection")


def involution_example_check(alpha=1, profile="exp(x/3)*(2+x^2)", tol: float = 1e-9) -> InvolutionReport:
    """Reproduce the reflection pair, the even-factor symmetry criterion and the
    reaction-diffusion target.

    ``profile`` is a generic density used for the first check.
    """
    a = as_expr(alpha)
    checks = {}
    tr = reflection(a)
    D, K = exp(U), a * exp(U)

    # pair of equations related by the reflection
    f = parse(profile)
    src = ClassEquation(f, D, K, {"x": (0.5, 2.0)})
    got, rep = transform_equation(tr, src, tol=tol)
    expected = ClassEquation(exp(-a * X) * substitute(f, {"x": -X}), D, K, got.domain)
    m = compare_equations(got, expected, tol=tol, allow_time_scale=False)
    checks["pair"] = {"verdict": m.passed and rep.passed, **m.to_dict()}
    checks["pair"]["verdict"] = m.passed and rep.passed

    # discrete symmetry iff the factor is even: sample on a symmetric box
    for name, g, want in (("even_factor", "1 + x^2", True), ("odd_factor", "x", False),
                          ("mixed_factor", "2 + x", False)):
        f = parse(g) * exp(-a * X * as_expr(2) ** -1)
        box = {"x": (0.5, 2.0)} if name != "mixed_factor" else {"x": (0.5, 1.5)}
        src = ClassEquation(f, D, K, box)
        img, _ = transform_equation(tr, src, tol=tol)
        # compare the image with the source on the image box
        same = compare_equations(img, ClassEquation(f, D, K, img.domain), tol=tol, allow_time_scale=False)
        checks[name] = {"verdict": same.passed == want, "is_symmetry": same.passed, "expected": want}

    # plain reflection: alpha = 0 and an even density
    f0 = parse("1 + x^2")
    src0 = ClassEquation(f0, exp(U), ZERO, {"x": (0.5, 2.0)})
    img0, _ = transform_equation(reflection(0), src0, tol=tol)
    same0 = compare_equations(img0, ClassEquation(f0, exp(U), ZERO, img0.domain), tol=tol, allow_time_scale=False)
    checks["plain_reflection"] = {"verdict": same0.passed, **same0.to_dict()}

    # reaction-diffusion target, outside the class: compare operators on the jet
    tr_rd = reflection(as_expr(1) / 2)
    src_rd = ClassEquation(exp(-X / 2), exp(U), exp(U), {"x": (0.5, 2.0)})
    target_op = var("u_t") - exp(U) * (UXX + UX**2) + exp(U) / 4
    r = pull_back_operator(tr_rd, src_rd, target_op)
    grid = _jet_grid(src_rd.domain)
    rep_rd = zero_report(r, grid, tol, label="reaction-diffusion", names={"t", "x", "u", "u_x", "u_xx"})
    checks["reaction_diffusion"] = {"verdict": rep_rd.verdict, "max_residual": rep_rd.max_abs}
    return InvolutionReport(checks)
