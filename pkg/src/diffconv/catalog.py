"""Machine-readable classification catalog and its conformance checks.

The catalog ships as JSON under ``diffconv/data`` (or the directory named by
``DIFFCONV_CATALOG``): classification cases, named transformations between
them, conditional-equivalence rows, reduction schemes and exact solutions.
Every entry is checked numerically by :func:`verify_all`; failures become
findings in the report instead of being corrected in place.
"""

from __future__ import annotations

import itertools
import json
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate, optimize

from .equivalence import (
    EquivalenceError,
    EquivalenceGenerator,
    FlowError,
    GroupElement,
    NamedTransformation,
    SubclassElement,
    admissibility_check,
    apply_to_solution,
    compare_equations,
    constraint_check,
    flow,
    push_forward,
    time_rescaled,
    transform_equation,
)
from .expr import ONE, Expr, as_expr, differentiate, evaluate, exp, function, par, parse, simplify, substitute
from .expr.core import rebuild
from .model import (
    DEFAULT_BOX,
    ClassEquation,
    PointTransformation,
    Profile,
    ShapeError,
    VectorField,
    antiderivative,
    antiderivative_profile,
)
from .symmetry import algebra_check, span_coefficients
from .verify import (
    DEFAULT_TOL,
    OracleDisagreement,
    ResidualReport,
    check_solution,
    finite_difference_residual,
    symbolic_residual_at,
)

CATALOG_ENV = "DIFFCONV_CATALOG"
TABLES = ("T1", "T2", "T3", "F1")
FREE = "*"
TRANSPORT_TOL = 1e-9
SPAN_TOL = 1e-8


class ConstraintError(ValueError):
    """Parameters violate a case's constraints."""


class UnknownEntry(KeyError):
    pass


class Unclassifiable(ValueError):
    """The equation is outside the template grammar used for matching."""


# ---------------------------------------------------------------------------
# parameters


def as_number(v):
    """Exact rational for short decimals and fractions, float otherwise."""
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return as_number(float(evaluate(parse(v), {})))
    fr = Fraction(float(v)).limit_denominator(1000)
    return fr if abs(float(fr) - float(v)) <= 1e-12 * max(1.0, abs(float(v))) else float(v)


def _close(a, b) -> bool:
    return abs(float(a) - float(b)) <= 1e-9


@dataclass(frozen=True)
class ParamSpec:
    """Either a finite set of choices or a sampling interval with excluded values."""

    name: str
    choices: tuple | None = None
    interval: tuple = (-3.0, 3.0)
    exclude: tuple = ()

    @classmethod
    def from_json(cls, name: str, d: Mapping) -> "ParamSpec":
        ch = d.get("choices")
        return cls(
            name,
            tuple(as_number(c) for c in ch) if ch is not None else None,
            tuple(float(v) for v in d.get("range", (-3.0, 3.0))),
            tuple(as_number(v) for v in d.get("exclude", ())),
        )

    def admits(self, v) -> bool:
        if self.choices is not None:
            return any(_close(v, c) for c in self.choices)
        return not any(_close(v, e) for e in self.exclude)

    def draw(self, rng) -> Fraction:
        """A quarter-integer in the interval avoiding the excluded values."""
        lo, hi = self.interval
        grid = [Fraction(k, 4) for k in range(int(np.ceil(lo * 4)), int(np.floor(hi * 4)) + 1)]
        grid = [g for g in grid if self.admits(g)]
        return grid[int(rng.integers(len(grid)))]

    def to_json(self) -> dict:
        if self.choices is not None:
            return {"choices": [str(c) for c in self.choices]}
        return {"range": list(self.interval), "exclude": [str(e) for e in self.exclude]}


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class CaseRecord:
    """One row of a classification table."""

    id: str
    table: str
    family: str
    f: str
    D: str
    K: str
    basis: tuple
    dimension: int
    params: Mapping = field(default_factory=dict)  # name -> ParamSpec
    fixed: Mapping = field(default_factory=dict)
    domain: Mapping = field(default_factory=dict)
    domain_rules: tuple = ()
    transformations: tuple = ()
    forbid: tuple = ()
    profile: Mapping | None = None
    notes: str = ""
    aliases: tuple = ()

    @classmethod
    def from_json(cls, d: Mapping) -> "CaseRecord":
        return cls(
            id=d["id"],
            table=d["table"],
            family=d["family"],
            f=d["f"],
            D=d["D"],
            K=d["K"],
            basis=tuple(d["basis"]),
            dimension=int(d["dimension"]),
            params={k: ParamSpec.from_json(k, v) for k, v in d.get("params", {}).items()},
            fixed={k: as_number(v) for k, v in d.get("fixed", {}).items()},
            domain={k: tuple(v) for k, v in d.get("domain", {}).items()},
            domain_rules=tuple(d.get("domain_rules", ())),
            transformations=tuple(d.get("transformations", ())),
            forbid=tuple(d.get("forbid", ())),
            profile=d.get("profile"),
            notes=d.get("notes", ""),
            aliases=tuple(d.get("aliases", ())),
        )

    def to_json(self) -> dict:
        d = {
            "id": self.id, "table": self.table, "family": self.family,
            "f": self.f, "D": self.D, "K": self.K, "basis": list(self.basis), "dimension": self.dimension,
            "params": {k: v.to_json() for k, v in self.params.items()},
            "fixed": {k: str(v) for k, v in self.fixed.items()},
            "domain_rules": list(self.domain_rules), "transformations": list(self.transformations),
        }
        for key in ("forbid", "profile", "notes", "aliases"):
            val = getattr(self, key)
            if val:
                d[key] = list(val) if isinstance(val, tuple) else val
        return d

    @property
    def parameter_names(self) -> tuple:
        return tuple(self.params) + tuple(k for k in self.fixed if k not in self.params)

    @property
    def free_slots(self) -> tuple:
        return tuple(s for s in ("f", "D", "K") if getattr(self, s) == FREE)

    def check(self, params: Mapping | None = None) -> dict:
        """Merge with fixed values and validate; raise :class:`ConstraintError`."""
        given = {k: as_number(v) for k, v in (params or {}).items()}
        out = dict(self.fixed)
        for k, v in given.items():
            if k in self.fixed and not _close(v, self.fixed[k]):
                raise ConstraintError(f"case {self.id} fixes {k}={self.fixed[k]}, got {v}")
            out[k] = v
        missing = [k for k in self.params if k not in out]
        if missing:
            raise ConstraintError(f"case {self.id} needs parameters {missing}")
        for k, spec in self.params.items():
            if not spec.admits(out[k]):
                raise ConstraintError(f"case {self.id}: {k}={out[k]} violates {spec.to_json()}")
        for combo in self.forbid:
            if all(k in out and _close(out[k], v) for k, v in combo.items()):
                raise ConstraintError(f"case {self.id}: parameter combination {combo} is excluded")
        return out

    def samples(self, n: int = 3, seed: int = 0) -> list[dict]:
        """Seeded admissible parameter sets; finite choices are cycled through."""
        rng = np.random.default_rng([seed, zlib.crc32(self.id.encode())])
        choice_names = [k for k, s in self.params.items() if s.choices is not None]
        combos = list(itertools.product(*(self.params[k].choices for k in choice_names))) or [()]
        out = []
        for i in range(200):
            p = dict(zip(choice_names, combos[i % len(combos)]))
            for k, s in self.params.items():
                if s.choices is None:
                    p[k] = s.draw(rng)
            try:
                out.append(self.check(p))
            except ConstraintError:
                continue
            if len(out) == n:
                break
        return out

    def domain_for(self, params: Mapping) -> dict:
        box = dict(self.domain)
        for rule in self.domain_rules:
            if all(k in params and _close(params[k], v) for k, v in rule["when"].items()):
                box.update({k: tuple(v) for k, v in rule["box"].items()})
        return box


@dataclass(frozen=True)
class TransformationRecord:
    """A named transformation between two cases with its parameter bindings."""

    id: str
    source: str
    target: str
    forward: tuple
    inverse: tuple
    source_params: Mapping = field(default_factory=dict)
    target_params: Mapping = field(default_factory=dict)
    target_free: Mapping = field(default_factory=dict)
    stated_target_params: Mapping | None = None
    branch: str = ""
    notes: str = ""

    @classmethod
    def from_json(cls, d: Mapping) -> "TransformationRecord":
        return cls(
            d["id"], d["source"], d["target"], tuple(d["forward"]), tuple(d["inverse"]),
            dict(d.get("source_params", {})), dict(d.get("target_params", {})),
            dict(d.get("target_free", {})), d.get("stated_target_params"),
            d.get("branch", ""), d.get("notes", ""),
        )

    def to_json(self) -> dict:
        d = {
            "id": self.id, "source": self.source, "target": self.target,
            "forward": list(self.forward), "inverse": list(self.inverse),
            "source_params": self.source_params, "target_params": self.target_params,
            "target_free": self.target_free, "branch": self.branch, "notes": self.notes,
        }
        if self.stated_target_params is not None:
            d["stated_target_params"] = self.stated_target_params
        return d

    def admits_source(self, params: Mapping) -> bool:
        for k, v in self.source_params.items():
            if isinstance(v, Mapping):
                if any(_close(params.get(k, np.nan), e) for e in v.get("exclude", ())):
                    return False
            elif not _close(params.get(k, np.nan), as_number(v)):
                return False
        return True

    def bind(self, params: Mapping) -> PointTransformation:
        vals = {k: as_expr(v) for k, v in params.items()}
        fwd = [simplify(substitute(parse(e), vals)) for e in self.forward]
        bwd = [simplify(substitute(parse(e), vals)) for e in self.inverse]
        return PointTransformation(*fwd, *bwd, branch=self.branch)

    def named(self, params: Mapping | None = None) -> NamedTransformation:
        tr = self.bind(params or {}) if params else PointTransformation.from_strings(self.forward, self.inverse, self.branch)
        return NamedTransformation(
            self.id, self.source, self.target, tr, dict(self.source_params), dict(self.target_params),
            branch=self.branch, notes=self.notes,
        )

    def target_values(self, source: Mapping, stated: bool = False) -> dict:
        spec = self.stated_target_params if stated else self.target_params
        vals = {k: as_expr(v) for k, v in source.items()}
        out = {}
        for k, v in (spec or {}).items():
            out[k] = as_number(float(evaluate(substitute(parse(str(v)), vals), {})))
        return out


@dataclass(frozen=True)
class ConditionalRow:
    constraint: str
    stated: tuple
    corrected: tuple | None = None
    notes: str = ""


@dataclass(frozen=True)
class ReductionScheme:
    """One row of a reduced-ODE table: subalgebra, ansatz, invariant and ODE."""

    id: str
    parent: str
    row: int
    subalgebra: str
    generator: str
    ansatz: str
    omega: str
    ode: str
    ode_text: str

    @classmethod
    def from_json(cls, d: Mapping) -> "ReductionScheme":
        return cls(d["id"], d["parent"], int(d["row"]), d["subalgebra"], d["generator"],
                   d["ansatz"], d["omega"], d["ode"], d["ode_text"])

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in
                ("id", "parent", "row", "subalgebra", "generator", "ansatz", "omega", "ode", "ode_text")}


@dataclass(frozen=True)
class ExactSolution:
    """A closed-form (or implicitly defined) solution of a catalog equation."""

    id: str
    case: str
    u: str
    constants: Mapping = field(default_factory=dict)
    param_samples: tuple = ({},)
    choices: Mapping = field(default_factory=dict)
    provenance: Mapping = field(default_factory=dict)
    domain: Mapping = field(default_factory=dict)
    stated: str | None = None
    notes: str = ""
    implicit: Mapping | None = None
    requires: Mapping = field(default_factory=dict)  # parameter values the solution needs

    @classmethod
    def from_json(cls, d: Mapping) -> "ExactSolution":
        return cls(
            d["id"], d["case"], d["u"],
            {k: tuple(v) for k, v in d.get("constants", {}).items()},
            tuple(d.get("param_samples", [{}])),
            {k: tuple(v) for k, v in d.get("choices", {}).items()},
            dict(d.get("provenance", {})),
            {k: tuple(v) for k, v in d.get("domain", {}).items()},
            d.get("stated"), d.get("notes", ""), d.get("implicit"),
            {k: as_number(v) for k, v in d.get("requires", {}).items()},
        )

    def to_json(self) -> dict:
        d = {
            "id": self.id, "case": self.case, "u": self.u,
            "constants": {k: list(v) for k, v in self.constants.items()},
            "param_samples": list(self.param_samples), "choices": {k: list(v) for k, v in self.choices.items()},
            "provenance": self.provenance,
        }
        for key in ("stated", "notes", "implicit"):
            if getattr(self, key):
                d[key] = getattr(self, key)
        if self.requires:
            d["requires"] = {k: str(v) for k, v in self.requires.items()}
        return d

    def applies(self, params: Mapping) -> bool:
        return all(k in params and _close(params[k], v) for k, v in self.requires.items())

    def choice_sets(self) -> list[dict]:
        names = list(self.choices)
        return [dict(zip(names, c)) for c in itertools.product(*(self.choices[k] for k in names))] or [{}]

    def expression(self, params: Mapping, choice: Mapping | None = None, stated: bool = False) -> Expr:
        text = self.stated if stated else self.u
        vals = {k: as_expr(as_number(v)) for k, v in {**params, **(choice or {})}.items()}
        fns = {self.implicit["profile"]} if self.implicit else ()
        return simplify(substitute(parse(text, functions=fns), vals))


# ---------------------------------------------------------------------------
# the catalog


def _data_dir(path=None):
    path = path or os.environ.get(CATALOG_ENV)
    if path:
        return Path(path)
    return resources.files("diffconv") / "data"


def _read(base, name):
    return json.loads((base / name).read_text(encoding="utf-8"))


class Catalog:
    """Immutable collection of all catalog records."""

    def __init__(self, cases, transformations, conditional, reductions, parents, param_choices,
                 solutions, free_samples, source: str = ""):
        self.cases = tuple(cases)
        self.transformations = tuple(transformations)
        self.conditional = tuple(conditional)
        self.reductions = tuple(reductions)
        self.parents = dict(parents)
        self.param_choices = dict(param_choices)
        self.solutions = tuple(solutions)
        self.free_samples = {k: tuple(v) for k, v in free_samples.items()}
        self.source = source
        self._by_id = {}
        for c in self.cases:
            self._by_id[c.id] = c
            for a in c.aliases:
                self._by_id.setdefault(a, c)
        self._tr = {t.id: t for t in self.transformations}

    @classmethod
    def load(cls, path=None) -> "Catalog":
        base = _data_dir(path)
        cases = _read(base, "cases.json")
        trs = _read(base, "transformations.json")
        red = _read(base, "reductions.json")
        sols = _read(base, "solutions.json")
        return cls(
            [CaseRecord.from_json(c) for c in cases["cases"]],
            [TransformationRecord.from_json(t) for t in trs["named"]],
            [ConditionalRow(r["constraint"], tuple(r["stated"]), tuple(r["corrected"]) if r.get("corrected") else None,
                            r.get("notes", "")) for r in trs.get("conditional", ())],
            [ReductionScheme.from_json(r) for r in red["rows"]],
            red["parents"], red.get("param_choices", {}),
            [ExactSolution.from_json(s) for s in sols["solutions"]],
            cases.get("free_samples", {}),
            source=str(base),
        )

    def case(self, case_id: str) -> CaseRecord:
        key = case_id[len("case "):] if case_id.startswith("case ") else case_id
        try:
            return self._by_id[key]
        except KeyError:
            raise UnknownEntry(f"no case {case_id!r} in the catalog") from None

    def transformation(self, tid: str) -> TransformationRecord:
        try:
            return self._tr[tid]
        except KeyError:
            raise UnknownEntry(f"no transformation {tid!r} in the catalog") from None

    def solution(self, sid: str) -> ExactSolution:
        for s in self.solutions:
            if s.id == sid:
                return s
        raise UnknownEntry(f"no solution {sid!r} in the catalog")

    def solutions_for(self, case_id: str) -> list[ExactSolution]:
        cid = self.case(case_id).id
        return [s for s in self.solutions if s.case == cid]

    def list_cases(self, table=None, family=None, dimension=None, min_dimension=None, max_dimension=None):
        tables = {table} if isinstance(table, str) else set(table or ())
        out = []
        for c in self.cases:
            if tables and c.table not in tables:
                continue
            if family and c.family != family:
                continue
            if dimension is not None and c.dimension != dimension:
                continue
            if min_dimension is not None and c.dimension < min_dimension:
                continue
            if max_dimension is not None and c.dimension > max_dimension:
                continue
            out.append(c)
        return out


@lru_cache(maxsize=4)
def _cached(path: str | None) -> Catalog:
    return Catalog.load(path)


def default_catalog(path=None) -> Catalog:
    return _cached(str(path) if path else os.environ.get(CATALOG_ENV))


def list_cases(table=None, family=None, dimension=None, min_dimension=None, max_dimension=None, catalog=None):
    """Case records filtered by table id, D-family and algebra dimension."""
    return (catalog or default_catalog()).list_cases(table, family, dimension, min_dimension, max_dimension)


# ---------------------------------------------------------------------------
# instantiation


@dataclass
class Instance:
    case: CaseRecord
    params: dict
    eq: ClassEquation
    basis: list
    free: dict

    def to_dict(self) -> dict:
        return {
            "case": self.case.id,
            "params": {k: str(v) for k, v in self.params.items()},
            "equation": self.eq.to_dict(),
            "basis": [str(b) for b in self.basis],
            "free": {k: str(v) for k, v in self.free.items()},
        }


def _profile_density(spec: Mapping, params: Mapping):
    """``exp(∫ integrand)``: closed form when available, quadrature anchored at 1 otherwise."""
    vals = {k: as_expr(v) for k, v in params.items()}
    h = simplify(substitute(parse(spec["integrand"]), vals))
    F = antiderivative(h, "x")
    if F is not None:
        return simplify(exp(F)), {}
    prof = antiderivative_profile(spec["name"], h, "x", anchor=1.0)
    return exp(function(spec["name"], parse("x"))), {spec["name"]: prof}


def instantiate(case, params: Mapping | None = None, free: Mapping | None = None, sample: int = 0,
                catalog: Catalog | None = None) -> Instance:
    """Concrete equation and generators of a case; raises :class:`ConstraintError`."""
    cat = catalog or default_catalog()
    rec = case if isinstance(case, CaseRecord) else cat.case(case)
    p = rec.check(params)
    vals = {k: as_expr(v) for k, v in p.items()}
    free = dict(free or {})
    used = {}

    def slot(name: str) -> Expr:
        if name not in free:
            pool = cat.free_samples.get(name) or ("1",)
            free[name] = pool[sample % len(pool)]
        used[name] = as_expr(parse(free[name]) if isinstance(free[name], str) else free[name])
        return used[name]

    profiles = {}
    if rec.f == FREE:
        f = slot("f")
    elif rec.profile:
        f, profiles = _profile_density(rec.profile, p)
    else:
        f = simplify(substitute(parse(rec.f), vals))
    D = slot("D") if rec.D == FREE else simplify(substitute(parse(rec.D), vals))
    if rec.K == FREE:
        K = slot("K")
    elif rec.K == "D":
        K = D
    else:
        K = simplify(substitute(parse(rec.K), vals))
    eq = ClassEquation(f, D, K, domain=rec.domain_for(p), profiles=profiles, label=rec.id)
    basis = [VectorField.parse(b, validate=False).subs(vals) for b in rec.basis]
    basis = [VectorField(*(simplify(c) for c in b.components)) for b in basis]
    return Instance(rec, p, eq, basis, used)


# ---------------------------------------------------------------------------
# matching an equation against the tables


@dataclass
class Match:
    case: CaseRecord
    params: dict
    chain: list  # group elements applied in order to the input equation
    normalized: ClassEquation
    basis: list  # generators in the input's own variables
    verified: bool
    residual: float

    def to_dict(self) -> dict:
        chain = []
        for g in self.chain:
            if isinstance(g, GroupElement):
                chain.append({"group_element": g.to_dict()})
            else:
                chain.append({"subclass_element": {k: str(getattr(g, k)) for k in ("a", "b", "m", "c1", "c2", "c3", "g")}})
        return {
            "case": self.case.id,
            "table": self.case.table,
            "dimension": self.case.dimension,
            "params": {k: str(v) for k, v in self.params.items()},
            "chain": chain,
            "normalized": self.normalized.to_dict(),
            "basis": [str(b) for b in self.basis],
            "verified": self.verified,
            "fit_residual": self.residual,
        }


def _numeric(e: Expr, eq: ClassEquation, var: str, pts: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(eq.evaluate(e, {var: pts}), float), pts.shape)


@dataclass(frozen=True)
class _DShape:
    """Exact family of a diffusivity: constant, exp(lam*u) or (u + shift)^mu."""

    family: str
    lam: float = 0.0
    mu: float = 0.0
    shift: float = 0.0
    side: float = 1.0  # sign of u + shift on the box


def _d_shape(eq: ClassEquation, us: np.ndarray) -> _DShape:
    D = _numeric(eq.D, eq, "u", us)
    Dp = _numeric(differentiate(eq.D, "u"), eq, "u", us)
    if np.max(np.abs(Dp)) <= 1e-12 * np.max(np.abs(D)):
        return _DShape("constant")
    g = Dp / D
    if np.ptp(g) <= 1e-10 * np.max(np.abs(g)):
        return _DShape("exp", lam=float(np.mean(g)))
    if np.all(np.abs(g) > 1e-300):
        h = 1.0 / g
        A = np.column_stack([us, np.ones_like(us)])
        (p, q), *_ = np.linalg.lstsq(A, h, rcond=None)
        if abs(p) > 1e-12 and np.max(np.abs(A @ [p, q] - h)) <= 1e-10 * (1 + np.max(np.abs(h))):
            shift = q / p
            side = np.sign(us + shift)
            if np.all(side == side[0]):
                return _DShape("power", mu=float(1.0 / p), shift=float(shift), side=float(side[0]))
    return _DShape("other")


_LOG_BOUND = 15.0
_FIT_TOL = 1e-8
_GROUP_VARS = frozenset({"e2", "e3", "e5", "e6"})
_SHIFT_BOUND = 100.0


class _Plan:
    """Fit variables and fingerprints for one case template and one choice of discrete data."""

    def __init__(self, rec: CaseRecord, choice: Mapping, shape: _DShape, f_const: bool):
        self.rec = rec
        self.choice = dict(choice)
        self.ok = True
        self.fixed = {k: float(v) for k, v in {**rec.fixed, **choice}.items()}
        self.cont = [k for k, s in rec.params.items() if s.choices is None and k not in self.fixed]
        self.u_vars: list[str] = []
        self.flip_u_options = (False,)
        self.power_shift = None
        d = rec.D
        if d == FREE:
            if shape.family in ("exp", "power", "constant") and rec.table != "T1" and rec.table != "F1":
                pass
        elif shape.family == "constant":
            mu_ok = d == "1" or (d == "u^mu" and ("mu" in self.fixed and self.fixed["mu"] == 0
                                                  or "mu" in rec.params and rec.params["mu"].admits(0)))
            if not mu_ok:
                self.ok = False
            if d == "u^mu":
                self.fixed["mu"] = 0.0
            self.u_vars = ["e6", "e3"]
            self.flip_u_options = (False, True)
        elif shape.family == "exp":
            if rec.family != "exp":
                self.ok = False
            elif d == "exp(u)":
                self.fixed["e6"] = float(np.log(abs(shape.lam)))
                self.flip_u_options = (shape.lam < 0,)
                self.u_vars = ["e3"]
            else:  # exp(mu*u)
                self.u_vars = ["e6", "e3"]
                self.flip_u_options = (False, True)
        elif shape.family == "power":
            if rec.family != "power":
                self.ok = False
            else:
                want = None
                if d == "u^mu":
                    want = self.fixed.get("mu")
                    if want is None:
                        if not rec.params["mu"].admits(shape.mu):
                            self.ok = False
                        self.fixed["mu"] = shape.mu
                else:
                    want = float(evaluate(parse(d).args[1], {})) if parse(d).op == "pow" else None
                if want is not None and abs(want - shape.mu) > 1e-9:
                    self.ok = False
                self.cont = [k for k in self.cont if k != "mu"]
                self.power_shift = shape.shift
                self.flip_u_options = (shape.side < 0,)
                self.u_vars = ["e6"]
        else:
            self.ok = False
        if self.ok and d != FREE:
            self.cont = [k for k in self.cont if k not in self.fixed]
        base = {k: as_expr(as_number(v)) for k, v in self.fixed.items() if k not in _GROUP_VARS}
        self.base = base
        self.f_log = None
        if rec.f != FREE:
            h = parse(rec.profile["integrand"]) if rec.profile else None
            if h is None:
                fe = parse(rec.f)
                h = simplify(differentiate(fe, "x") * fe**-1)
            self.f_log = simplify(substitute(h, base))
        self.D_log = None
        if d not in (FREE,):
            De = parse(d)
            self.D_log = simplify(substitute(differentiate(De, "u") * De**-1, base))
        self.galilean = f_const and rec.f == "1"
        self.K_mode = None
        self.K_target = None
        if rec.K == FREE:
            pass
        elif d == FREE:
            self.K_mode = {"0": "zero", "D": "equal_D", "1": "constant"}.get(rec.K)
            if self.K_mode is None:
                self.ok = False
            if self.galilean and self.K_mode == "zero":
                self.K_mode = "constant_or_zero"
        else:
            Ke = parse(d) if rec.K == "D" else parse(rec.K)
            if self.galilean:
                self.K_mode = "derivative"
                self.K_target = simplify(substitute(differentiate(Ke, "u") * parse(d) ** -1, base))
            else:
                self.K_mode = "ratio"
                self.K_target = simplify(substitute(Ke * parse(d) ** -1, base))
        self.names = ["e5", "e2"] + [v for v in self.u_vars if v not in self.fixed] + self.cont

    def unpack(self, z) -> dict:
        v = {k: val for k, val in self.fixed.items()}
        v.update(zip(self.names, z))
        v.setdefault("e6", 0.0)
        v.setdefault("e3", 0.0)
        return v


def _fit_plan(eq: ClassEquation, plan: _Plan, xs, us, flip_x: bool, flip_u: bool, data: dict):
    sx = -1.0 if flip_x else 1.0
    su = -1.0 if flip_u else 1.0
    fits = plan.rec

    def resid(z):
        v = plan.unpack(z)
        if plan.power_shift is not None:
            v["e3"] = su * np.exp(v["e6"]) * plan.power_shift
        pv = {k: v[k] for k in plan.cont}
        pv.update({k: v[k] for k in plan.fixed if k not in _GROUP_VARS})
        xt = sx * np.exp(v["e5"]) * xs + v["e2"]
        ut = su * np.exp(v["e6"]) * us + v["e3"]
        out = []
        if plan.f_log is not None:
            out.append(sx * np.exp(-v["e5"]) * data["f_log"] - evaluate(plan.f_log, {"x": xt, **pv}))
        if plan.D_log is not None:
            out.append(su * np.exp(-v["e6"]) * data["D_log"] - evaluate(plan.D_log, {"u": ut, **pv}))
        m = plan.K_mode
        if m == "zero":
            out.append(data["K"])
        elif m == "equal_D":
            out.append(sx * np.exp(-v["e5"]) * data["KD"] - 1.0)
        elif m in ("constant", "constant_or_zero"):
            out.append(data["Kp"])
        elif m == "derivative":
            out.append(sx * su * np.exp(-v["e5"] - v["e6"]) * data["KpD"] - evaluate(plan.K_target, {"u": ut, **pv}))
        elif m == "ratio":
            out.append(sx * np.exp(-v["e5"]) * data["KD"] - evaluate(plan.K_target, {"u": ut, **pv}))
        if not out:
            return np.zeros(1)
        r = np.concatenate([np.broadcast_to(o, xs.shape) for o in out])
        return np.where(np.isfinite(r), r, 1e6)

    n = len(plan.names)
    lo = np.array([-_LOG_BOUND if k in ("e5", "e6") else -_SHIFT_BOUND for k in plan.names])
    hi = -lo
    rng = np.random.default_rng(zlib.crc32(fits.id.encode()))
    starts = [np.zeros(n)] + [rng.uniform(-1.0, 1.0, n) for _ in range(2)]
    best = None
    for z0 in starts:
        for k, name in enumerate(plan.names):
            spec = fits.params.get(name)
            if spec is not None and not spec.admits(z0[k]):
                z0[k] += 0.37
        if n == 0:
            r = resid(z0)
            return z0, float(np.max(np.abs(r)))
        with np.errstate(all="ignore"):
            try:
                sol = optimize.least_squares(resid, z0, bounds=(lo, hi), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                             max_nfev=60 * (n + 1))
            except (ValueError, FloatingPointError):
                continue
        r = float(np.max(np.abs(sol.fun)))
        if best is None or r < best[1]:
            best = (sol.x, r)
        if r < 1e-12:
            break
    if best is None or best[1] > _FIT_TOL:
        return best
    return _polish(resid, best, plan, lo, hi)


def _polish(resid, best, plan: _Plan, lo, hi):
    """Snap fitted variables to 0, 1, -1 or nearby rationals while the fit survives."""
    z, r0 = best
    z = np.array(z, float)
    free = list(range(len(z)))
    limit = max(10 * r0, 1e-12)
    for k in list(free):
        cands = [0.0, 1.0, -1.0, float(_snap(z[k]))]
        for c in dict.fromkeys(cands):
            spec = plan.rec.params.get(plan.names[k])
            if spec is not None and not spec.admits(c):
                continue
            rest = [j for j in free if j != k]
            trial = z.copy()
            trial[k] = c

            def sub(w, trial=trial, rest=rest):
                full = trial.copy()
                full[rest] = w
                return resid(full)

            with np.errstate(all="ignore"):
                if rest:
                    try:
                        sol = optimize.least_squares(sub, trial[rest], bounds=(lo[rest], hi[rest]),
                                                     xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=100 * (len(rest) + 1))
                    except (ValueError, FloatingPointError):
                        continue
                    w, r = sol.x, float(np.max(np.abs(sol.fun)))
                else:
                    w, r = np.zeros(0), float(np.max(np.abs(sub(np.zeros(0)))))
            if np.isfinite(r) and r <= limit:
                trial[rest] = w
                z = trial
                free = rest
                break
    return z, float(np.max(np.abs(resid(z))))


def match_equation(eq: ClassEquation, catalog: Catalog | None = None, tol: float = 1e-9,
                   verify: bool = True) -> list[Match]:
    """Candidate cases, fitted parameters and normalizing group elements.

    The diffusivity family (constant, exponential, power or other) is read
    off exactly and fixes the ``u`` normalization.  Scale-free fingerprints
    of the remaining data (logarithmic derivatives of f and D, the ratio
    K/D, or K'/D when Galilean shifts are available) are fitted by bounded
    least squares.  Every candidate is rebuilt symbolically and compared with
    the instantiated case; with ``verify`` its basis is pulled back to the
    input variables and checked.  Raises :class:`Unclassifiable` when no
    template fits.
    """
    cat = catalog or default_catalog()
    rng = np.random.default_rng(17)
    xs = rng.uniform(*eq.domain["x"], 9)
    us = rng.uniform(*eq.domain["u"], 9)
    with np.errstate(all="ignore"):
        fv = _numeric(eq.f, eq, "x", xs)
        dv = _numeric(eq.D, eq, "u", us)
    if not (np.all(np.isfinite(fv)) and np.all(np.isfinite(dv))):
        raise Unclassifiable("f or D is not finite on the domain box")
    if np.any(fv == 0) or np.any(dv == 0) or np.any(np.sign(fv) != np.sign(fv[0])) or np.any(np.sign(dv) != np.sign(dv[0])):
        raise Unclassifiable("f*D vanishes or changes sign on the domain box")
    f_const = bool(np.ptp(fv) <= 1e-12 * abs(fv[0]))
    shape = _d_shape(eq, us)
    base_flips = []
    if fv[0] < 0 and dv[0] < 0:
        base_flips = ["flip_fDK"]
    elif fv[0] < 0:
        base_flips = ["flip_tDK", "flip_fDK"]
    elif dv[0] < 0:
        base_flips = ["flip_tDK"]
    d = lambda e, v: simplify(differentiate(e, v))  # noqa: E731
    with np.errstate(all="ignore"):
        data = {
            "f_log": _numeric(simplify(d(eq.f, "x") * eq.f**-1), eq, "x", xs),
            "D_log": _numeric(simplify(d(eq.D, "u") * eq.D**-1), eq, "u", us),
            "K": _numeric(eq.K, eq, "u", us),
            "KD": _numeric(simplify(eq.K * eq.D**-1), eq, "u", us),
            "Kp": _numeric(d(eq.K, "u"), eq, "u", us),
            "KpD": _numeric(simplify(d(eq.K, "u") * eq.D**-1), eq, "u", us),
        }
    k_zero = bool(np.all(data["K"] == 0))
    k_const = bool(np.ptp(data["K"]) <= 1e-12 * (1 + np.max(np.abs(data["K"]))))
    out: list[Match] = []
    for rec in cat.cases:
        if rec.f == "1" and not f_const:
            continue
        if k_zero and rec.K not in ("0", FREE):
            continue
        if not k_zero and rec.K == "0" and not (f_const and rec.f == "1" and k_const):
            continue
        choice_names = [k for k, s in rec.params.items() if s.choices is not None]
        combos = list(itertools.product(*(rec.params[k].choices for k in choice_names))) or [()]
        for combo in combos:
            plan = _Plan(rec, dict(zip(choice_names, combo)), shape, f_const)
            if not plan.ok:
                continue
            x_options = (False, True) if (plan.f_log is not None or plan.K_mode in ("ratio", "derivative", "equal_D")) else (False,)
            found = None
            for flip_u in plan.flip_u_options:
                for flip_x in x_options:
                    fit = _fit_plan(eq, plan, xs, us, flip_x, flip_u, data)
                    if fit is None or fit[1] > _FIT_TOL:
                        continue
                    m = _build_match(eq, plan, fit, flip_x, flip_u, base_flips, f_const, cat, verify)
                    if m is not None:
                        found = m
                        break
                if found:
                    break
            if found:
                out.append(found)
    if not out:
        raise Unclassifiable("unclassifiable by template matching")
    # constant densities: the finer f = 1 classification first among equals
    out.sort(key=lambda m: (-m.case.dimension, not (f_const and m.case.table == "F1"), m.case.id))
    return out


def _snap(v: float):
    """Round fitted values that are numerically rational."""
    fr = Fraction(v).limit_denominator(24)
    return fr if abs(float(fr) - v) <= 1e-7 * max(1.0, abs(v)) else v


def _build_match(eq, plan: _Plan, fit, flip_x, flip_u, base_flips, f_const, cat, verify):
    rec = plan.rec
    z, res = fit
    v = plan.unpack(z)
    # fits pinned at a bound imitate a template only asymptotically
    for k, val in zip(plan.names, z):
        bound = _LOG_BOUND if k in ("e5", "e6") else _SHIFT_BOUND
        if abs(val) >= 0.99 * bound:
            return None
    su = -1.0 if flip_u else 1.0
    if plan.power_shift is not None:
        v["e3"] = su * np.exp(v["e6"]) * plan.power_shift
    params = {**plan.choice}
    for k in rec.params:
        if k not in params:
            params[k] = as_number(_snap(v[k]))
    try:
        p = rec.check(params)
    except ConstraintError:
        return None
    flips = list(base_flips) + (["flip_xK"] if flip_x else []) + (["flip_u"] if flip_u else [])
    snap = lambda key: as_number(_snap(float(v[key])))  # noqa: E731
    g0 = GroupElement.from_params(flips=flips, eps2=snap("e2"), eps5=snap("e5"), eps6=snap("e6"), eps3=snap("e3"))
    try:
        moved = g0.apply(eq)
    except (ShapeError, EquivalenceError, ValueError, ZeroDivisionError):
        return None
    chain = [g0]
    free = {}
    for slot in ("f", "D", "K"):
        if getattr(rec, slot) == FREE:
            free[slot] = getattr(moved, slot)
    try:
        inst = instantiate(rec, p, free=free, catalog=cat)
    except (ConstraintError, ShapeError):
        return None
    rng = np.random.default_rng(5)
    box = moved.domain
    xs = rng.uniform(*box["x"], 6)
    us = rng.uniform(*box["u"], 6)
    with np.errstate(all="ignore"):
        ratio_D = _numeric(inst.eq.D, inst.eq, "u", us) / _numeric(moved.D, moved, "u", us)
        ratio_f = _numeric(inst.eq.f, inst.eq, "x", xs) / _numeric(moved.f, moved, "x", xs)
    if not (np.all(ratio_D > 0) and np.all(ratio_f > 0)):
        return None
    e7 = float(np.log(np.median(ratio_D)))
    e4 = float(np.log(np.median(ratio_f))) - e7
    g1 = GroupElement.from_params(eps4=as_number(_snap(e4)), eps7=as_number(_snap(e7)))
    moved = g1.apply(moved)
    chain.append(g1)
    if plan.galilean and rec.K != FREE:
        kv = _numeric(moved.K, moved, "u", us)
        kw = _numeric(inst.eq.K, inst.eq, "u", us)
        shift = float(np.median(kv - kw))
        fval = _numeric(moved.f, moved, "x", xs)
        if not np.allclose(fval, 1.0, rtol=1e-12, atol=0):
            return None
        moved = ClassEquation(ONE, moved.D, moved.K, moved.domain, moved.profiles, moved.label)
        if abs(shift) > 1e-12:
            sub = SubclassElement(g=as_number(_snap(shift)))
            moved = sub.apply(moved)
            chain.append(sub)
    target_eq = inst.eq.with_domain(**moved.domain)
    cmp = compare_equations(moved, target_eq, tol=TRANSPORT_TOL, allow_time_scale=True)
    if not cmp.passed:
        return None
    basis = inst.basis
    verified = False
    if verify:
        try:
            back = [VectorField(*(tidy_numbers(simplify(c)) for c in b.components))
                    for b in _pull_back_basis(chain, basis)]
            report = algebra_check(eq, back, strict=True)
        except (ShapeError, OracleDisagreement, EquivalenceError):
            return None
        if not report.passed or report.dimension != rec.dimension:
            return None
        basis, verified = back, True
    return Match(rec, p, chain, moved, basis, verified, res)


def tidy_numbers(e: Expr, max_den: int = 1000) -> Expr:
    """Replace floats that are rationals up to rounding noise by exact fractions."""
    if e.op == "num":
        if isinstance(e.value, float) and np.isfinite(e.value):
            fr = Fraction(e.value).limit_denominator(max_den)
            if abs(float(fr) - e.value) <= 1e-12 * max(1.0, abs(e.value)):
                return as_expr(fr)
        return e
    if not e.args:
        return e
    return rebuild(e, tuple(tidy_numbers(a, max_den) for a in e.args))


def _pull_back_basis(chain, basis):
    tr = PointTransformation.identity()
    for g in chain:
        tr = tr.compose(g.transformation())
    inv = tr.inverse()
    return [push_forward(inv, b) for b in basis]


# ---------------------------------------------------------------------------
# solutions


def _implicit_profile(spec: Mapping, consts: Mapping) -> Profile:
    """``phi(s)`` defined by ``∫_0^phi integrand dphi = s + shift``.

    Equivalently ``phi' = 1/integrand(phi)`` with ``phi(-shift) = 0``; the
    evaluator integrates that ODE once per call with dense output.
    """
    vals = {k: as_expr(v) for k, v in consts.items()}
    integrand = simplify(substitute(parse(spec["integrand"], functions=()), vals))
    name = spec["profile"]
    shift = float(evaluate(substitute(parse(spec.get("shift", "0")), vals), {}))
    deriv = substitute(integrand**-1, {name: function(name, par("_s"))})

    def rhs(_s, y):
        return [1.0 / float(evaluate(integrand, {name: y[0]}))]

    def evaluator(s):
        s = np.asarray(s, float)
        flat = s.reshape(-1)
        out = np.full(flat.shape, np.nan)
        s0 = -shift
        for side in (flat >= s0, flat < s0):
            if not side.any():
                continue
            end = flat[side].max() if flat[side].max() > s0 else flat[side].min()
            sol = integrate.solve_ivp(rhs, (s0, end), [0.0], method="DOP853", rtol=1e-13, atol=1e-14,
                                      dense_output=True)
            if sol.status == 0:
                out[side] = sol.sol(flat[side])[0]
        return out.reshape(s.shape)

    return Profile(name, deriv, evaluator)


@dataclass
class SolutionReport:
    id: str
    case: str
    verdict: bool
    worst: ResidualReport | None
    runs: list
    fd_agreement: float | None
    stated_verdict: bool | None = None
    stated_worst: float | None = None
    error: str = ""

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "case": self.case,
            "verdict": "pass" if self.verdict else "fail",
            "max_residual": self.worst.max_scaled if self.worst is not None else None,
            "argmax": self.worst.argmax if self.worst is not None else None,
            "runs": self.runs,
            "fd_agreement": self.fd_agreement,
        }
        if self.stated_verdict is not None:
            d["stated_verdict"] = "pass" if self.stated_verdict else "fail"
            d["stated_max_residual"] = self.stated_worst
        if self.error:
            d["error"] = self.error
        return d


def _solution_equation(cat: Catalog, sol: ExactSolution, params: Mapping) -> ClassEquation:
    inst = instantiate(sol.case, params, catalog=cat)
    eq = inst.eq
    if sol.domain:
        eq = eq.with_domain(**sol.domain)
    return eq


def _check_one(eq, expr, sol: ExactSolution, params, choice, tol, seed, assignments):
    """Residual of one parameter/choice instance over ``assignments`` constant draws."""
    if not sol.implicit:
        return check_solution(eq, expr, tol=tol, constants=sol.constants, assignments=assignments, seed=seed,
                              label=sol.id)
    rng = np.random.default_rng(seed)
    reports = []
    for k in range(assignments):
        consts = {c: rng.uniform(*sol.constants.get(c, (0.5, 2.0))) for c in sorted(sol.constants)}
        prof = _implicit_profile(sol.implicit, {**{n: as_number(v) for n, v in {**params, **choice}.items()}, **consts})
        e_k = ClassEquation(eq.f, eq.D, eq.K, eq.domain, {**eq.profiles, prof.name: prof}, eq.label)
        reports.append(check_solution(e_k, expr, tol=tol, assignments=1, seed=seed + k, label=sol.id))
    worst = max(reports, key=lambda r: r.max_scaled)
    worst.verdict = all(r.verdict for r in reports)
    return worst


def check_exact_solution(sol: ExactSolution, catalog: Catalog | None = None, tol: float = DEFAULT_TOL,
                         seed: int = 1234, assignments: int = 5, params_list=None) -> SolutionReport:
    """Residual of a catalog solution over its parameter samples and choices."""
    cat = catalog or default_catalog()
    runs, worst, ok = [], None, True
    stated_ok, stated_worst = (None, None)
    fd = 0.0
    for params in params_list or sol.param_samples:
        eq = _solution_equation(cat, sol, params)
        for choice in sol.choice_sets():
            expr = sol.expression(params, choice)
            rep = _check_one(eq, expr, sol, params, choice, tol, seed, assignments)
            runs.append({"params": {k: str(v) for k, v in params.items()}, "choice": choice,
                         "max_residual": rep.max_scaled, "verdict": "pass" if rep.verdict else "fail"})
            ok &= rep.verdict
            if worst is None or rep.max_scaled > worst.max_scaled:
                worst = rep
            if not sol.implicit:
                fd = max(fd, _fd_gap(eq, expr, sol, seed))
            if sol.stated:
                srep = check_solution(eq, sol.expression(params, choice, stated=True), tol=tol,
                                      constants=sol.constants, assignments=assignments, seed=seed, label=sol.id)
                stated_ok = srep.verdict if stated_ok is None else (stated_ok and srep.verdict)
                stated_worst = max(stated_worst or 0.0, srep.max_scaled)
    return SolutionReport(sol.id, sol.case, bool(ok), worst, runs, None if sol.implicit else fd, stated_ok, stated_worst)


def _fd_gap(eq: ClassEquation, expr: Expr, sol: ExactSolution, seed: int, points: int = 3) -> float:
    """Largest scaled gap between symbolic and finite-difference residuals."""
    consts = {c: sum(sol.constants.get(c, (0.5, 2.0))) / 2 for c in expr.free_symbols() - {"t", "x"}}
    e = substitute(expr, {k: as_expr(v) for k, v in consts.items()})
    rng = np.random.default_rng(seed)
    box = eq.domain
    gap = 0.0
    for _ in range(points):
        # stay a finite-difference step inside the box
        pt = {k: rng.uniform(box[k][0] + 0.02, box[k][1] - 0.02) for k in ("t", "x")}
        with np.errstate(all="ignore"):
            s = symbolic_residual_at(eq, e, pt)
            f = finite_difference_residual(eq, e, pt)
        scale = 1.0 + abs(float(evaluate(e, pt, eq.numeric_functions())))
        if np.isfinite(s) and np.isfinite(f):
            gap = max(gap, abs(s - f) / scale)
    return gap


# ---------------------------------------------------------------------------
# conformance


@dataclass
class Finding:
    """A table entry that failed a numeric check, with evidence."""

    kind: str
    subject: str
    message: str
    evidence: dict = field(default_factory=dict)
    severity: str = "failure"  # "failure" or "erratum" (stated form differs from a verified one)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "subject": self.subject, "message": self.message,
                "evidence": self.evidence, "severity": self.severity}


@dataclass
class ConformanceReport:
    tol: float
    seed: int
    samples: int
    cases: list = field(default_factory=list)
    transformations: list = field(default_factory=list)
    solutions: list = field(default_factory=list)
    conditional: list = field(default_factory=list)
    findings: list = field(default_factory=list)
    hard_errors: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def failures(self) -> list:
        return [f for f in self.findings if f.severity == "failure"]

    @property
    def errata(self) -> list:
        return [f for f in self.findings if f.severity == "erratum"]

    @property
    def passed(self) -> bool:
        return not self.hard_errors and not self.failures

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.passed else "fail",
            "tol": self.tol,
            "seed": self.seed,
            "samples": self.samples,
            "summary": {
                "cases": len(self.cases),
                "cases_passed": sum(c["verdict"] == "pass" for c in self.cases),
                "transformations": len(self.transformations),
                "transformations_passed": sum(t["verdict"] == "pass" for t in self.transformations),
                "solutions": len(self.solutions),
                "solutions_passed": sum(s["verdict"] == "pass" for s in self.solutions),
                "conditional_rows": len(self.conditional),
                "failures": len(self.failures),
                "errata": len(self.errata),
                "hard_errors": len(self.hard_errors),
            },
            "cases": self.cases,
            "transformations": self.transformations,
            "solutions": self.solutions,
            "conditional": self.conditional,
            "findings": [f.to_dict() for f in self.findings],
            "hard_errors": self.hard_errors,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=str, **kw)

    def to_text(self) -> str:
        lines = []
        for c in self.cases:
            dims = ",".join(str(s["dimension"]) for s in c["samples"])
            lines.append(f"case {c['id']:<7} {c['table']:<3} {c['verdict']:<5} dim {dims:<8} "
                         f"max residual {c['max_residual']:.2e}")
        for t in self.transformations:
            lines.append(f"transformation {t['id']:<6} {t['source']:>5} -> {t['target']:<6} {t['verdict']}")
        for s in self.solutions:
            res = s["max_residual"]
            lines.append(f"solution {s['id']:<9} {s['case']:<6} {s['verdict']:<5} "
                         f"max residual {res:.2e}" if res is not None else f"solution {s['id']} {s['verdict']}")
        for r in self.conditional:
            lines.append(f"conditional {r['constraint']:<12} stated {r['stated_verdict']:<5} "
                         f"corrected {r.get('corrected_verdict', '-')}")
        for f in self.findings:
            lines.append(f"[{f.severity}] {f.kind} {f.subject}: {f.message}")
        for h in self.hard_errors:
            lines.append(f"[hard error] {h['subject']}: {h['message']}")
        s = self.to_dict()["summary"]
        lines.append(
            f"verdict {'pass' if self.passed else 'fail'}: {s['cases_passed']}/{s['cases']} cases, "
            f"{s['transformations_passed']}/{s['transformations']} transformations, "
            f"{s['solutions_passed']}/{s['solutions']} solutions, {s['failures']} failures, "
            f"{s['errata']} errata, {s['hard_errors']} hard errors"
        )
        return "\n".join(lines)


def _evidence(rep: ResidualReport) -> dict:
    return {"residual": rep.max_scaled, "point": rep.argmax, "tol": rep.tol}


def verify_case(rec: CaseRecord, cat: Catalog, tol: float = DEFAULT_TOL, samples: int = 3, seed: int = 0):
    """Symmetry, closure and dimension of one case over seeded parameter samples."""
    entry = {"id": rec.id, "table": rec.table, "expected_dimension": rec.dimension, "samples": []}
    findings, hard = [], []
    worst = 0.0
    for k, params in enumerate(rec.samples(samples, seed)):
        inst = instantiate(rec, params, sample=k, catalog=cat)
        item = {"params": {n: str(v) for n, v in params.items()}, "free": {n: str(v) for n, v in inst.free.items()}}
        try:
            rep = algebra_check(inst.eq, inst.basis, tol, strict=True)
        except OracleDisagreement as err:
            hard.append({"subject": rec.id, "message": str(err), "point": err.point})
            item.update(verdict="error", dimension=None)
            entry["samples"].append(item)
            continue
        for i, v in enumerate(rep.verdicts):
            worst = max(worst, v.invariance.max_scaled)
            if not v.symmetric:
                findings.append(Finding("basis-operator", rec.id,
                                        f"operator {i + 1} ({rec.basis[i]}) is not a symmetry for {item['params']}",
                                        _evidence(v.invariance)))
        if not rep.closed:
            bad = {f"[{i + 1},{j + 1}]": r for (i, j), r in rep.closure_residuals.items() if r > 1e-8}
            findings.append(Finding("closure", rec.id, f"brackets leave the span for {item['params']}",
                                    {"residuals": bad}))
        if rep.dimension != rec.dimension:
            findings.append(Finding("dimension", rec.id,
                                    f"basis rank {rep.dimension} differs from {rec.dimension} for {item['params']}",
                                    {"rank": rep.dimension}))
        item.update(
            verdict="pass" if rep.passed and rep.dimension == rec.dimension else "fail",
            dimension=rep.dimension,
            symmetric=rep.symmetric,
            closed=rep.closed,
            max_residual=max(v.invariance.max_scaled for v in rep.verdicts) if rep.verdicts else 0.0,
            structure_constants=rep.to_dict()["structure_constants"],
        )
        entry["samples"].append(item)
    entry["max_residual"] = worst
    entry["verdict"] = "pass" if entry["samples"] and all(s["verdict"] == "pass" for s in entry["samples"]) else "fail"
    return entry, findings, hard


def _source_samples(rec: TransformationRecord, cat: Catalog, n: int, seed: int) -> list[dict]:
    """Random admissible source parameters plus the values some solutions require."""
    src = cat.case(rec.source)
    fixed = {k: as_number(v) for k, v in rec.source_params.items() if not isinstance(v, Mapping)}
    pool = src.samples(4 * n + 4, seed)
    out = []

    def add(p):
        try:
            p = src.check({**p, **fixed})
        except ConstraintError:
            return False
        if rec.admits_source(p) and p not in out:
            out.append(p)
            return True
        return False

    for p in pool:
        if len(out) == n:
            break
        add(p)
    wanted = [s.requires for s in cat.solutions_for(rec.source) if s.requires]
    wanted += [s.requires for s in cat.solutions_for(rec.target) if s.requires]
    for req in sorted({tuple(sorted(r.items())) for r in wanted}, key=str):
        req = dict(req)
        if not set(req) <= set(src.params):
            continue
        for p in pool:
            if add({**p, **req}):
                break
    return out


def verify_transformation(rec: TransformationRecord, cat: Catalog, tol: float = DEFAULT_TOL,
                          samples: int = 2, seed: int = 0):
    """Equation image, basis push-forward and solution transport for one named map."""
    src, tgt = cat.case(rec.source), cat.case(rec.target)
    entry = {"id": rec.id, "source": rec.source, "target": rec.target, "samples": []}
    findings, hard = [], []
    for k, params in enumerate(_source_samples(rec, cat, samples, seed)):
        item = {"params": {n: str(v) for n, v in params.items()}}
        try:
            inst = instantiate(src, params, sample=k, catalog=cat)
            tr = rec.bind(params)
            adm = admissibility_check(tr, inst.eq.domain)
            item["admissible"] = adm.admissible
            if not adm.admissible:
                findings.append(Finding("admissibility", rec.id, "; ".join(adm.violations)))
            image, trep = transform_equation(tr, inst.eq, tol=tol)
            item["identity_residual"] = trep.identity.max_scaled
            tparams = rec.target_values(params)
            free = {}
            for slot, text in rec.target_free.items():
                binds = {"D": inst.eq.D, "K": inst.eq.K, **{n: as_expr(v) for n, v in params.items()}}
                free[slot] = simplify(substitute(parse(text), binds))
            tinst = instantiate(tgt, tparams, free=free, catalog=cat)
            target_eq = tinst.eq.with_domain(**image.domain)
            cmp = compare_equations(image, target_eq, tol=TRANSPORT_TOL)
            item["equation"] = cmp.to_dict()
            if not cmp.passed:
                findings.append(Finding("transport-equation", rec.id,
                                        f"image of {rec.source} is not {rec.target} for {item['params']}", cmp.to_dict()))
            if rec.stated_target_params is not None:
                sparams = rec.target_values(params, stated=True)
                sinst = instantiate(tgt, sparams, free=free, catalog=cat)
                scmp = compare_equations(image, sinst.eq.with_domain(**image.domain), tol=TRANSPORT_TOL)
                item["stated_target"] = scmp.to_dict()
                if not scmp.passed and cmp.passed:
                    findings.append(Finding("stated-parameters", rec.id,
                                            f"stated target parameters {rec.stated_target_params} do not reproduce "
                                            f"the image; {rec.target_params} do", scmp.to_dict(), severity="erratum"))
            # basis push-forward
            spans = []
            for b in inst.basis:
                pushed = push_forward(tr, b, validate=False)
                _, res = span_coefficients(pushed, tinst.basis, image.domain)
                spans.append(res)
            item["span_residual"] = max(spans) if spans else 0.0
            if spans and max(spans) > SPAN_TOL:
                findings.append(Finding("transport-basis", rec.id, "pushed-forward basis leaves the target span",
                                        {"residuals": spans}))
            # solutions
            sol_items = _transport_solutions(rec, cat, params, tparams, tr, image, target_eq, cmp.f_scale, tol, seed)
            item["solutions"] = sol_items
            for s in sol_items:
                if s["verdict"] == "fail":
                    findings.append(Finding("transport-solution", rec.id,
                                            f"{s['direction']} transport of {s['solution']} fails", s))
            item["verdict"] = "pass" if (cmp.passed and adm.admissible and (not spans or max(spans) <= SPAN_TOL)
                                         and all(s["verdict"] != "fail" for s in sol_items)) else "fail"
        except OracleDisagreement as err:
            hard.append({"subject": rec.id, "message": str(err), "point": err.point})
            item["verdict"] = "error"
        except (EquivalenceError, ShapeError, ConstraintError) as err:
            findings.append(Finding("transport-equation", rec.id, str(err)))
            item["verdict"] = "fail"
        entry["samples"].append(item)
    entry["verdict"] = "pass" if entry["samples"] and all(s["verdict"] == "pass" for s in entry["samples"]) else "fail"
    return entry, findings, hard


def _transport_solutions(rec, cat, params, tparams, tr, image, target_eq, f_scale, tol, seed):
    """Forward transport of source solutions; pull-back of target solutions."""
    out = []
    for sol in cat.solutions_for(rec.source):
        if sol.implicit or not sol.applies(params):
            continue
        sp = {k: v for k, v in params.items()}
        for choice in sol.choice_sets():
            expr = sol.expression(sp, choice)
            moved = time_rescaled(apply_to_solution(tr, expr), f_scale)
            rep = check_solution(target_eq, moved, tol=tol, constants=sol.constants, seed=seed, label=sol.id)
            out.append({"solution": sol.id, "direction": "forward", "choice": choice,
                        "max_residual": rep.max_scaled, "verdict": "pass" if rep.verdict else "fail"})
    inv = tr.inverse()
    src_eq = instantiate(cat.case(rec.source), params, catalog=cat).eq
    tgt = cat.case(rec.target)
    for sol in cat.solutions_for(rec.target):
        if sol.implicit or not sol.applies(tparams):
            continue
        # restrict to the preimage of the region where the target solution is valid
        valid = {**DEFAULT_BOX, **tgt.domain_for(tparams), **sol.domain}
        valid["t"] = tuple(sorted(f_scale * v for v in valid.get("t", (0.5, 2.0))))
        inter = {k: (max(image.domain[k][0], valid[k][0]), min(image.domain[k][1], valid[k][1]))
                 for k in ("t", "x") if k in valid}
        if any(lo >= hi for lo, hi in inter.values()):
            out.append({"solution": sol.id, "direction": "pull-back", "verdict": "skipped",
                        "reason": "image box misses the solution's domain"})
            continue
        pre = inv.image_box({**image.domain, **inter})
        eq_k = src_eq.with_domain(t=pre["t"], x=pre["x"])
        for choice in sol.choice_sets():
            expr = sol.expression(tparams, choice)
            # a solution of f u_t = ... solves c f u_t = ... after t -> t/c
            scaled = substitute(expr, {"t": parse("t") * as_expr(as_number(1.0 / f_scale))}) if f_scale != 1.0 else expr
            back = simplify(apply_to_solution(inv, scaled))
            rep = check_solution(eq_k, back, tol=tol, constants=sol.constants, seed=seed, label=sol.id)
            if not rep.values:
                out.append({"solution": sol.id, "direction": "pull-back", "choice": choice,
                            "verdict": "skipped", "reason": "solution undefined on the source box"})
                continue
            out.append({"solution": sol.id, "direction": "pull-back", "choice": choice,
                        "max_residual": rep.max_scaled, "verdict": "pass" if rep.verdict else "fail"})
    return out


def verify_conditional(row: ConditionalRow, tol: float = DEFAULT_TOL, epsilon: float = 0.1):
    """Flow each stated (and corrected) generator and check the constraint is kept."""
    spec = {
        "K=D": ("1 + u^2", "1 + u^2"),
        "K=D=e^u": ("exp(u)", "exp(u)"),
        "D=e^u,K=0": ("exp(u)", "0"),
        "D=K=u^mu": ("u^mu", "u^mu"),
        "D=u^mu,K=0": ("u^mu", "0"),
    }[row.constraint]
    mu = as_expr(Fraction(1, 2))
    D = substitute(parse(spec[0]), {"mu": mu})
    K = substitute(parse(spec[1]), {"mu": mu})
    eq = ClassEquation(parse("exp(x/3)*(2 + x^2)"), D, K)
    findings = []

    def run(gens):
        res = []
        for text in gens:
            item = {"generator": text}
            try:
                g = EquivalenceGenerator.parse(str(substitute(parse(text), {"mu": mu})), row.constraint)
                fl = flow(g, epsilon, eq.domain)
                rep = constraint_check(fl, eq, tol)
                item.update(rep.to_dict())
            except (ShapeError, FlowError, EquivalenceError) as err:
                item.update(verdict="fail", detail=str(err))
            res.append(item)
        return res

    entry = {"constraint": row.constraint, "stated": run(row.stated)}
    entry["stated_verdict"] = "pass" if all(i["verdict"] == "pass" for i in entry["stated"]) else "fail"
    if row.corrected:
        entry["corrected"] = run(row.corrected)
        entry["corrected_verdict"] = "pass" if all(i["verdict"] == "pass" for i in entry["corrected"]) else "fail"
        for i in entry["stated"]:
            if i["verdict"] == "fail":
                sev = "erratum" if entry["corrected_verdict"] == "pass" else "failure"
                findings.append(Finding("conditional-generator", row.constraint,
                                        f"stated generator {i['generator']} does not preserve the constraint",
                                        {k: v for k, v in i.items() if k != "generator"}, severity=sev))
        if entry["corrected_verdict"] == "fail":
            findings.append(Finding("conditional-generator", row.constraint, "corrected generators fail as well"))
    else:
        for i in entry["stated"]:
            if i["verdict"] == "fail":
                findings.append(Finding("conditional-generator", row.constraint,
                                        f"generator {i['generator']} does not preserve the constraint",
                                        {k: v for k, v in i.items() if k != "generator"}))
    entry["verdict"] = entry.get("corrected_verdict", entry["stated_verdict"])
    return entry, findings, []


def verify_solution_entry(sol: ExactSolution, cat: Catalog, tol: float = DEFAULT_TOL, seed: int = 1234):
    findings = []
    rep = check_exact_solution(sol, cat, tol=tol, seed=seed)
    d = rep.to_dict()
    if not rep.verdict:
        findings.append(Finding("solution", sol.id, "residual above tolerance",
                                _evidence(rep.worst) if rep.worst is not None else {}))
    if rep.stated_verdict is False:
        sev = "erratum" if rep.verdict else "failure"
        findings.append(Finding("stated-solution", sol.id, sol.notes or "stated form fails",
                                {"residual": rep.stated_worst, "stated": sol.stated, "verified": sol.u}, severity=sev))
    if rep.fd_agreement is not None and rep.fd_agreement > 1e-6:
        findings.append(Finding("finite-difference", sol.id, "symbolic and finite-difference residuals disagree",
                                {"gap": rep.fd_agreement}))
    return d, findings, []


def verify_all(tables: Sequence[str] | None = None, tol: float = DEFAULT_TOL, samples: int = 3, seed: int = 0,
               threads: int = 1, sections: Iterable[str] = ("cases", "transformations", "solutions", "conditional"),
               catalog: Catalog | None = None) -> ConformanceReport:
    """Check every catalog entry; results are ordered like the catalog regardless of ``threads``."""
    cat = catalog or default_catalog()
    sections = set(sections)
    tables = set(tables) if tables else set(TABLES)
    start = time.perf_counter()
    report = ConformanceReport(tol, seed, samples)
    jobs = []
    if "cases" in sections:
        for rec in cat.cases:
            if rec.table in tables:
                jobs.append(("cases", lambda r=rec: verify_case(r, cat, tol, samples, seed)))
    if "transformations" in sections:
        for rec in cat.transformations:
            if cat.case(rec.source).table in tables:
                jobs.append(("transformations", lambda r=rec: verify_transformation(r, cat, tol, 2, seed)))
    if "solutions" in sections:
        for sol in cat.solutions:
            if cat.case(sol.case).table in tables:
                jobs.append(("solutions", lambda s=sol: verify_solution_entry(s, cat, tol)))
    if "conditional" in sections and tables == set(TABLES):
        for row in cat.conditional:
            jobs.append(("conditional", lambda r=row: verify_conditional(r, tol)))

    def run(job):
        kind, fn = job
        try:
            return kind, fn()
        except OracleDisagreement as err:
            return kind, ({"verdict": "error"}, [], [{"subject": kind, "message": str(err), "point": err.point}])

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    seen = set()
    for kind, (entry, findings, hard) in results:
        getattr(report, kind).append(entry)
        for f in findings:
            key = (f.severity, f.kind, f.subject, f.message)
            if key not in seen:
                seen.add(key)
                report.findings.append(f)
        report.hard_errors.extend(hard)
    report.runtime = time.perf_counter() - start
    return report
