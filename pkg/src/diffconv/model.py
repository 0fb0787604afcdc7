"""Class members, generators and point transformations.

The class is ``f(x) u_t = (D(u) u_x)_x + K(u) u_x``.  Expressions use the
variables ``t``, ``x``, ``u``; jet coordinates are ``u_t``, ``u_x``, ``u_xx``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, optimize

from .expr import (
    ONE,
    ZERO,
    Expr,
    as_expr,
    differentiate,
    equal_numeric,
    evaluate,
    function,
    par,
    parse,
    substitute,
    var,
)
from .expr.calculus import replace_nodes

T, X, U = var("t"), var("x"), var("u")
UT, UX, UXX = var("u_t"), var("u_x"), var("u_xx")

DEFAULT_BOX = {"t": (0.5, 2.0), "x": (0.5, 2.0), "u": (0.5, 2.0)}
JET_BOX = {"u_x": (-2.0, 2.0), "u_xx": (-2.0, 2.0), "u_t": (-2.0, 2.0)}

_ARG = "_s"


class ShapeError(ValueError):
    """A generator or transformation outside the admissible shape for the class."""


# ---------------------------------------------------------------------------
# numeric profiles


@dataclass(frozen=True)
class Profile:
    """A function symbol known through its derivative and a numeric evaluator.

    ``derivative`` is an expression in the placeholder ``_s`` (the argument)
    that may mention the profile itself as ``name(_s)``.
    """

    name: str
    derivative: Expr
    evaluator: Callable = field(compare=False, hash=False, repr=False)

    def __call__(self, arg) -> Expr:
        return function(self.name, arg)


def antiderivative_profile(name: str, integrand: Expr, variable: str = "x", anchor: float = 1.0) -> Profile:
    """``name(s) = ∫_anchor^s integrand`` by adaptive quadrature."""
    integrand = as_expr(integrand)
    template = substitute(integrand, {variable: par(_ARG)})

    def evaluator(s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        flat = out.reshape(-1)
        for i, si in enumerate(s.reshape(-1)):
            val, _ = integrate.quad(
                lambda z: float(evaluate(integrand, {variable: z})), anchor, si,
                epsabs=1e-13, epsrel=1e-13, limit=200,
            )
            flat[i] = val
        return out

    return Profile(name, template, evaluator)


def inverse_profile(name: str, forward: Expr, variable: str, interval: tuple[float, float]) -> Profile:
    """Numeric inverse ``name = forward^{-1}`` of a monotone map on ``interval``."""
    forward = as_expr(forward)
    dfwd = differentiate(forward, variable)
    # d/ds inv(s) = 1 / forward'(inv(s))
    template = substitute(dfwd, {variable: function(name, par(_ARG))}) ** -1
    lo, hi = interval

    def evaluator(s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        flat = out.reshape(-1)
        f = lambda z, target: float(evaluate(forward, {variable: z})) - target  # noqa: E731
        for i, si in enumerate(s.reshape(-1)):
            try:
                flat[i] = optimize.brentq(f, lo, hi, args=(si,), xtol=1e-15, rtol=1e-15)
            except ValueError:
                flat[i] = np.nan
        return out

    return Profile(name, template, evaluator)


def resolve_profiles(e: Expr, profiles: Mapping[str, Profile]) -> Expr:
    """Rewrite derivatives of profile symbols through their derivative rules."""
    if not profiles:
        return e

    def step(node):
        if node.op == "fn" and node.value[0] in profiles and node.value[1] >= 1:
            prof = profiles[node.value[0]]
            d = prof.derivative
            for _ in range(node.value[1] - 1):
                d = differentiate(d, _ARG)
                d = resolve_profiles(d, profiles)
            return substitute(d, {_ARG: node.args[0]})
        return None

    for _ in range(8):
        new = replace_nodes(e, step)
        if new == e:
            break
        e = new
    return e


# ---------------------------------------------------------------------------
# class members


def _box(d: Mapping | None) -> dict:
    out = dict(DEFAULT_BOX)
    if d:
        out.update({k: tuple(map(float, v)) for k, v in d.items()})
    return out


@dataclass(frozen=True)
class ClassEquation:
    """``f(x) u_t = (D(u) u_x)_x + K(u) u_x`` with a sampling box."""

    f: Expr
    D: Expr
    K: Expr
    domain: Mapping = field(default_factory=dict, compare=False, hash=False)
    profiles: Mapping = field(default_factory=dict, compare=False, hash=False)
    label: str = field(default="", compare=False, hash=False)

    def __post_init__(self):
        for name in ("f", "D", "K"):
            object.__setattr__(self, name, as_expr(getattr(self, name)))
        object.__setattr__(self, "domain", _box(self.domain))
        bad_f = self.f.variables() - {"x"}
        bad_d = (self.D.variables() | self.K.variables()) - {"u"}
        if bad_f:
            raise ShapeError(f"f must depend on x only, got {sorted(bad_f)}")
        if bad_d:
            raise ShapeError(f"D and K must depend on u only, got {sorted(bad_d)}")

    @classmethod
    def from_strings(cls, f: str, D: str, K: str, **kw) -> "ClassEquation":
        return cls(parse(f), parse(D), parse(K), **kw)

    def resolve(self, e: Expr) -> Expr:
        return resolve_profiles(e, self.profiles)

    def numeric_functions(self) -> dict:
        return {(p.name, 0): p.evaluator for p in self.profiles.values()}

    def evaluate(self, e: Expr, values: Mapping):
        return evaluate(self.resolve(e), values, self.numeric_functions())

    def with_domain(self, **box) -> "ClassEquation":
        d = dict(self.domain)
        d.update(box)
        return ClassEquation(self.f, self.D, self.K, d, self.profiles, self.label)

    def is_nonlinear(self, trials: int = 12, seed: int = 0) -> bool:
        """(D_u, K_u) != (0, 0) somewhere on the box."""
        rng = np.random.default_rng(seed)
        lo, hi = self.domain["u"]
        us = rng.uniform(lo, hi, trials)
        du = np.broadcast_to(self.evaluate(differentiate(self.D, "u"), {"u": us}), us.shape)
        ku = np.broadcast_to(self.evaluate(differentiate(self.K, "u"), {"u": us}), us.shape)
        return bool(np.any(np.abs(du) > 1e-12) or np.any(np.abs(ku) > 1e-12))

    def nondegenerate(self, trials: int = 12, seed: int = 0) -> bool:
        """f*D has no zero on the box."""
        rng = np.random.default_rng(seed)
        xs = rng.uniform(*self.domain["x"], trials)
        us = rng.uniform(*self.domain["u"], trials)
        fv = np.broadcast_to(self.evaluate(self.f, {"x": xs}), xs.shape)
        dv = np.broadcast_to(self.evaluate(self.D, {"u": us}), us.shape)
        return bool(np.all(np.abs(fv * dv) > 0))

    def operator(self) -> Expr:
        """Δ = f u_t − D u_xx − D_u u_x² − K u_x on the jet."""
        Du = differentiate(self.D, "u")
        return self.f * UT - self.D * UXX - Du * UX**2 - self.K * UX

    def u_t(self) -> Expr:
        """u_t solved from the equation, as a function on the jet (t,x,u,u_x,u_xx)."""
        Du = differentiate(self.D, "u")
        return (self.D * UXX + Du * UX**2 + self.K * UX) * self.f**-1

    def to_dict(self) -> dict:
        d = {"f": str(self.f), "D": str(self.D), "K": str(self.K),
             "domain": {k: list(v) for k, v in self.domain.items()}}
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassEquation":
        return cls(parse(d["f"]), parse(d["D"]), parse(d["K"]),
                   domain=d.get("domain") or {}, label=d.get("label", ""))

    def __str__(self):
        return f"({self.f})*u_t = (({self.D})*u_x)_x + ({self.K})*u_x"


def residual(eq: ClassEquation, u_candidate) -> Expr:
    """f u_t − D_u u_x² − D u_xx − K u_x for ``u = u_candidate(t, x)``."""
    w = as_expr(u_candidate)
    wt, wx = differentiate(w, "t"), differentiate(w, "x")
    wxx = differentiate(wx, "x")
    Du = differentiate(eq.D, "u")
    bind = {"u": w}
    return (
        eq.f * wt
        - substitute(Du, bind) * wx**2
        - substitute(eq.D, bind) * wxx
        - substitute(eq.K, bind) * wx
    )


# ---------------------------------------------------------------------------
# generators


def _nonzero_derivative(e: Expr, name: str, domain: Mapping) -> bool:
    if name not in e.free_symbols():
        return False
    d = differentiate(e, name)
    if d.is_zero():
        return False
    return not equal_numeric(d, ZERO, domain=domain, tol=1e-10)


@dataclass(frozen=True)
class VectorField:
    """ξᵗ(t)∂_t + ξˣ(t,x)∂_x + (η¹(t,x)u + η⁰(t,x))∂_u."""

    xi_t: Expr
    xi_x: Expr
    eta: Expr

    def __post_init__(self):
        for name in ("xi_t", "xi_x", "eta"):
            object.__setattr__(self, name, as_expr(getattr(self, name)))

    @classmethod
    def parse(cls, text: str, validate: bool = True) -> "VectorField":
        """Parse ``a*dt + b*dx + c*du``."""
        e = parse(text)
        coeffs = []
        for d in ("dt", "dx", "du"):
            c = differentiate(e, d)
            coeffs.append(c)
        rest = substitute(e, {"dt": 0, "dx": 0, "du": 0})
        nonlinear = any(
            {"dt", "dx", "du"} & c.free_symbols() for c in coeffs
        )
        if nonlinear or not rest.is_zero():
            raise ShapeError(f"not a linear combination of dt, dx, du: {text!r}")
        v = cls(*coeffs)
        if validate:
            v.validate()
        return v

    def validate(self, domain: Mapping | None = None) -> "VectorField":
        """Check the shape ξᵗ(t), ξˣ(t,x), η affine in u; raise :class:`ShapeError`."""
        box = _box(domain)
        problems = []
        if _nonzero_derivative(self.xi_t, "x", box) or _nonzero_derivative(self.xi_t, "u", box):
            problems.append("xi_t must depend on t only")
        if _nonzero_derivative(self.xi_x, "u", box):
            problems.append("xi_x must not depend on u")
        if "u" in self.eta.free_symbols():
            euu = differentiate(differentiate(self.eta, "u"), "u")
            if not euu.is_zero() and not equal_numeric(euu, ZERO, domain=box, tol=1e-10):
                problems.append("eta must be affine in u")
        if problems:
            raise ShapeError("; ".join(problems) + f" (field {self})")
        return self

    @property
    def components(self) -> tuple[Expr, Expr, Expr]:
        return (self.xi_t, self.xi_x, self.eta)

    def apply(self, g: Expr) -> Expr:
        """The derivation ``Q(g)`` on functions of (t, x, u)."""
        return (
            self.xi_t * differentiate(g, "t")
            + self.xi_x * differentiate(g, "x")
            + self.eta * differentiate(g, "u")
        )

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(*(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(*(a - b for a, b in zip(self.components, other.components)))

    def scale(self, c) -> "VectorField":
        c = as_expr(c)
        return VectorField(*(c * a for a in self.components))

    def subs(self, bindings: Mapping) -> "VectorField":
        return VectorField(*(substitute(a, bindings) for a in self.components))

    def is_zero(self, domain: Mapping | None = None) -> bool:
        box = _box(domain)
        return all(a.is_zero() or equal_numeric(a, ZERO, domain=box, tol=1e-10) for a in self.components)

    def sample(self, points: Mapping) -> np.ndarray:
        """Stack component values at sample points into one vector."""
        n = len(next(iter(points.values())))
        return np.concatenate(
            [np.broadcast_to(evaluate(a, points), (n,)) for a in self.components]
        )

    def __str__(self):
        parts = []
        for c, d in zip(self.components, ("dt", "dx", "du")):
            if c.is_zero():
                continue
            parts.append(d if c.is_one() else f"({c})*{d}")
        return " + ".join(parts) if parts else "0"

    def to_dict(self) -> dict:
        return {"xi_t": str(self.xi_t), "xi_x": str(self.xi_x), "eta": str(self.eta)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "VectorField":
        return cls(parse(d["xi_t"]), parse(d["xi_x"]), parse(d["eta"]))


def lie_bracket(a: VectorField, b: VectorField, check: bool = True) -> VectorField:
    """Commutator ``[a, b]^i = a(b^i) − b(a^i)``."""
    out = VectorField(*(a.apply(bc) - b.apply(ac) for ac, bc in zip(a.components, b.components)))
    if check:
        out.validate()
    return out


# ---------------------------------------------------------------------------
# point transformations


@dataclass(frozen=True)
class PointTransformation:
    """``(t̃, x̃, ũ) = (T(t), X(t,x), U(t,x,u))`` with its inverse.

    The inverse triple is written in the same names ``t, x, u``, which there
    stand for the new variables.  ``branch`` documents how a multivalued
    inverse was chosen.
    """

    T: Expr
    X: Expr
    U: Expr
    T_inv: Expr
    X_inv: Expr
    U_inv: Expr
    branch: str = field(default="", compare=False)
    profiles: Mapping = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        for name in ("T", "X", "U", "T_inv", "X_inv", "U_inv"):
            object.__setattr__(self, name, as_expr(getattr(self, name)))

    @classmethod
    def identity(cls) -> "PointTransformation":
        return cls(T, X, U, T, X, U)

    @classmethod
    def from_strings(cls, forward, inverse, branch: str = "") -> "PointTransformation":
        return cls(*map(parse, forward), *map(parse, inverse), branch=branch)

    @property
    def forward(self) -> tuple[Expr, Expr, Expr]:
        return (self.T, self.X, self.U)

    @property
    def backward(self) -> tuple[Expr, Expr, Expr]:
        return (self.T_inv, self.X_inv, self.U_inv)

    def inverse(self) -> "PointTransformation":
        return PointTransformation(*self.backward, *self.forward, branch=self.branch, profiles=self.profiles)

    def compose(self, after: "PointTransformation") -> "PointTransformation":
        """``after ∘ self``: apply ``self`` first."""
        fwd = tuple(substitute(e, dict(zip("txu", self.forward))) for e in after.forward)
        bwd = tuple(substitute(e, dict(zip("txu", after.backward))) for e in self.backward)
        profiles = dict(self.profiles)
        profiles.update(after.profiles)
        return PointTransformation(*fwd, *bwd, profiles=profiles)

    def to_new(self, e: Expr) -> Expr:
        """Rewrite a function of old (t,x,u) in the new variables."""
        return substitute(e, dict(zip("txu", self.backward)))

    def resolve(self, e: Expr) -> Expr:
        return resolve_profiles(e, self.profiles)

    def numeric_functions(self) -> dict:
        return {(p.name, 0): p.evaluator for p in self.profiles.values()}

    def roundtrip_error(self, domain: Mapping | None = None, trials: int = 12, seed: int = 0) -> float:
        """max |inverse(forward(p)) − p| over sample points of the box."""
        box = _box(domain)
        rng = np.random.default_rng(seed)
        pts = {k: rng.uniform(*box[k], trials) for k in "txu"}
        fns = self.numeric_functions()
        img = {k: np.broadcast_to(evaluate(e, pts, fns), (trials,)) for k, e in zip("txu", self.forward)}
        back = {k: np.broadcast_to(evaluate(e, img, fns), (trials,)) for k, e in zip("txu", self.backward)}
        return float(max(np.max(np.abs(back[k] - pts[k])) for k in "txu"))

    def image_box(self, domain: Mapping | None = None, n: int = 9) -> dict:
        """Bounding box of the image of a box (maps are monotone on the boxes used)."""
        box = _box(domain)
        grids = np.meshgrid(*[np.linspace(*box[k], n) for k in "txu"], indexing="ij")
        pts = {k: g.reshape(-1) for k, g in zip("txu", grids)}
        fns = self.numeric_functions()
        out = {}
        for k, e in zip("txu", self.forward):
            vals = np.broadcast_to(evaluate(e, pts, fns), pts["t"].shape)
            lo, hi = float(np.min(vals)), float(np.max(vals))
            if hi - lo < 1e-12:
                lo, hi = lo - 0.5, hi + 0.5
            out[k] = (lo, hi)
        return out

    def to_dict(self) -> dict:
        return {
            "forward": [str(e) for e in self.forward],
            "inverse": [str(e) for e in self.backward],
            "branch": self.branch,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PointTransformation":
        return cls.from_strings(d["forward"], d["inverse"], d.get("branch", ""))

    def __str__(self):
        return f"t~={self.T}, x~={self.X}, u~={self.U}"


def to_json(obj) -> str:
    return json.dumps(obj.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# reduction of f(x)u_t = (g(x)D(u)u_x)_x + K(u)u_x to g = 1


def _linear_power_antiderivative(h: Expr, v: str):
    """Closed-form ∫h dv for h = c*(a v + b)^n or c*exp(a v + b); else None."""
    from .expr.core import _split_coeff

    c, rest = _split_coeff(h)
    if rest.is_one():
        return c * var(v)
    base, n = (rest.args if rest.op == "pow" else (rest, ONE))
    if rest.op == "exp":
        arg = rest.args[0]
        a = differentiate(arg, v)
        if a.free_symbols() or differentiate(a, v).free_symbols() or a.is_zero():
            return None
        return c * a**-1 * rest
    if n.free_symbols() and v in n.free_symbols():
        return None
    a = differentiate(base, v)
    if v in a.free_symbols() or a.is_zero():
        return None
    if base.op == "var" or base.op == "add":
        if n == -1:
            from .expr import Abs, ln

            return c * a**-1 * ln(Abs(base))
        return c * a**-1 * (n + 1) ** -1 * base ** (n + 1)
    return None


def antiderivative(h: Expr, v: str = "x"):
    """∫h dv for sums of linear-argument powers and exponentials, else ``None``."""
    h = as_expr(h)
    terms = h.args if h.op == "add" else (h,)
    out = []
    for term in terms:
        r = _linear_power_antiderivative(term, v)
        if r is None:
            return None
        out.append(r)
    from .expr import add

    return add(*out)


def _invert_simple(forward: Expr, v: str):
    """Invert y = forward(v) for a single affine-argument power/exp/log term plus constant."""
    from .expr import add, exp, ln

    y = par("_y")
    const = ZERO
    term = forward
    if forward.op == "add":
        consts = [a for a in forward.args if v not in a.free_symbols()]
        rest = [a for a in forward.args if v in a.free_symbols()]
        if len(rest) != 1:
            return None
        const, term = add(*consts), rest[0]
    from .expr.core import _split_coeff

    c, core = _split_coeff(term)
    target = (y - const) * as_expr(c) ** -1

    def solve_inner(arg, value):
        a = differentiate(arg, v)
        if v in a.free_symbols() or a.is_zero():
            return None
        b = substitute(arg, {v: 0})
        return (value - b) * a**-1

    if core.op == "exp":
        return solve_inner(core.args[0], ln(target))
    if core.op == "ln":
        inner = core.args[0]
        if inner.op == "abs":
            inner = inner.args[0]
        return solve_inner(inner, exp(target))
    if core.op == "pow":
        base, n = core.args
        if v in n.free_symbols():
            return None
        return solve_inner(base, target ** (n**-1))
    if core.op == "var":
        return solve_inner(core, target)
    return None


def normalize_general_form(f, g, D, K, domain: Mapping | None = None):
    """Map ``f u_t = (g D u_x)_x + K u_x`` to the class via x̃ = ∫dx/g.

    Returns ``(ClassEquation, PointTransformation)`` with f̃(x̃) = g(x) f(x).
    When ∫dx/g has no closed form here, the new variable and its inverse are
    numeric profiles; the result then carries those profiles.
    """
    f, g, D, K = map(as_expr, (f, g, D, K))
    box = _box(domain)
    if g.is_one():
        eq = ClassEquation(f, D, K, box)
        return eq, PointTransformation.identity()
    xs = np.linspace(*box["x"], 33)
    gv = np.broadcast_to(evaluate(g, {"x": xs}), xs.shape)
    if not np.all(np.isfinite(gv)) or np.any(gv == 0) or np.any(np.sign(gv) != np.sign(gv[0])):
        raise ShapeError("g must be finite and of constant sign on the x box")
    from .expr import simplify

    inv_g = simplify(g**-1)
    new_x = antiderivative(inv_g, "x")
    profiles = {}
    x_of_new = None
    if new_x is not None:
        sol = _invert_simple(new_x, "x")
        if sol is not None:
            x_of_new = substitute(sol, {"_y": X})
            if not equal_numeric(substitute(new_x, {"x": x_of_new}), X,
                                 domain={"x": _image_interval(new_x, box["x"])}, tol=1e-9):
                x_of_new = None
    if new_x is None:
        prof = antiderivative_profile("Xg", inv_g, "x", anchor=box["x"][0])
        profiles[prof.name] = prof
        new_x = function("Xg", X)
    if x_of_new is None:
        fwd = profiles.get("Xg")
        interval = box["x"]
        if fwd is not None:
            # forward map is the quadrature profile; its inverse needs the integrand
            prof_inv = _profile_inverse("Xginv", inv_g, interval)
        else:
            prof_inv = inverse_profile("Xginv", new_x, "x", (interval[0] - 1.0 * (interval[1] - interval[0]), interval[1] + (interval[1] - interval[0])))
        profiles[prof_inv.name] = prof_inv
        x_of_new = function("Xginv", X)
    tr = PointTransformation(T, new_x, U, T, x_of_new, U, branch="x~ = ∫dx/g", profiles=profiles)
    f_new = substitute(g * f, {"x": x_of_new})
    new_box = dict(box)
    new_box["x"] = tr.image_box(box)["x"]
    eq = ClassEquation(f_new, D, K, new_box, profiles=profiles)
    return eq, tr


def _image_interval(e: Expr, interval) -> tuple[float, float]:
    xs = np.linspace(*interval, 33)
    v = np.broadcast_to(evaluate(e, {"x": xs}), xs.shape)
    return float(np.min(v)), float(np.max(v))


def _profile_inverse(name: str, inv_g: Expr, interval) -> Profile:
    """Inverse of s ↦ ∫_{lo}^{s} inv_g, with derivative g(inverse)."""
    lo, hi = interval
    span = hi - lo
    a, b = lo - span, hi + span

    def fwd(z):
        return integrate.quad(lambda w: float(evaluate(inv_g, {"x": w})), lo, z, epsabs=1e-13, epsrel=1e-13)[0]

    def evaluator(s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        flat = out.reshape(-1)
        for i, si in enumerate(s.reshape(-1)):
            try:
                flat[i] = optimize.brentq(lambda z: fwd(z) - si, a, b, xtol=1e-15, rtol=1e-15)
            except ValueError:
                flat[i] = np.nan
        return out

    template = substitute(inv_g, {"x": function(name, par(_ARG))}) ** -1
    return Profile(name, template, evaluator)
