import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffconv.expr import equal_numeric, evaluate, parse
from diffconv.model import (
    ClassEquation,
    PointTransformation,
    ShapeError,
    VectorField,
    lie_bracket,
    normalize_general_form,
    residual,
)
from tests.oracles import fd_jacobi

heat = ClassEquation.from_strings("1", "1", "0")


def vf(text):
    return VectorField.parse(text)


def same_field(a, b, domain=None):
    return all(equal_numeric(p, q, domain=domain) for p, q in zip(a.components, b.components))


def test_residual_examples():
    assert equal_numeric(residual(heat, parse("x^2")), parse("-2"))
    solv1 = ClassEquation.from_strings("1", "e^u", "0")
    r = residual(solv1, parse("ln(abs(c1*x + c0))"))
    assert equal_numeric(r, parse("0"), fixed={"c1": 1, "c0": 2})


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["u^2", "e^u", "1/u", "u^(-1/2)"]), st.sampled_from(["0", "u", "u^3"]),
       st.floats(-3, 3))
def test_constants_solve_every_member(D, K, c):
    eq = ClassEquation.from_strings("exp(x)", D, K)
    assert residual(eq, parse(repr(c))).is_zero()


def test_residual_is_additive_over_diffusivity_split():
    u = parse("t*x^2 + exp(x)")
    whole = residual(ClassEquation.from_strings("x", "u^2 + e^u", "u"), u)
    first = residual(ClassEquation.from_strings("x", "u^2", "u"), u)
    second = residual(ClassEquation.from_strings("x", "e^u", "0"), u)
    # the f u_t term appears in both parts, so subtract it once
    ft = residual(ClassEquation.from_strings("x", "0", "0"), u)
    assert equal_numeric(whole, first + second - ft)


def test_equation_shape_is_enforced():
    with pytest.raises(ShapeError):
        ClassEquation.from_strings("u", "1", "0")
    with pytest.raises(ShapeError):
        ClassEquation.from_strings("1", "x", "0")


def test_vector_field_shape_is_enforced():
    with pytest.raises(ShapeError):
        vf("u^2*du")
    with pytest.raises(ShapeError):
        vf("x*dt")
    with pytest.raises(ShapeError):
        vf("dt*dx")


def test_bracket_examples():
    assert same_field(lie_bracket(vf("dt"), vf("t*dt - du")), vf("dt"))
    assert lie_bracket(vf("dt"), vf("dx")).is_zero()
    assert same_field(lie_bracket(vf("x*dx + 2*du"), vf("dx")), vf("-dx"))


_fields = st.sampled_from([
    "dt", "dx", "du", "t*dt - du", "x*dx + 2*du", "t*dt + u*du", "x*dx - 2*u*du",
    "exp(x)*dx", "t^2*dt + t*x*dx - (t*u + x)*du", "2*t*dt + x*dx", "exp(t)*(x^2*dx - 2*x*u*du)",
])


@settings(max_examples=40, deadline=None)
@given(_fields, _fields)
def test_bracket_is_antisymmetric(a, b):
    a, b = vf(a), vf(b)
    assert lie_bracket(a, a).is_zero()
    assert same_field(lie_bracket(a, b), lie_bracket(b, a).scale(-1))


@settings(max_examples=30, deadline=None)
@given(_fields, _fields, _fields)
def test_bracket_satisfies_jacobi(a, b, c):
    terms = fd_jacobi(lambda p, q: lie_bracket(p, q, check=False), vf(a), vf(b), vf(c))
    total = terms[0] + terms[1] + terms[2]
    assert total.is_zero()


def test_normalize_identity_when_g_is_one():
    eq, tr = normalize_general_form(parse("x"), parse("1"), parse("u"), parse("0"))
    assert eq.f == parse("x")
    assert tr == PointTransformation.identity()


def test_normalize_quadratic_g_maps_solutions():
    # u_t = (x^2 u_x)_x has u = t + ln x; in x~ = -1/x it becomes x~^-2 u_t = u_x~x~
    eq, tr = normalize_general_form(parse("1"), parse("x^2"), parse("1"), parse("0"))
    assert equal_numeric(eq.f, parse("x^(-2)"), domain={"x": (-2, -0.5)})
    assert eq.domain["x"] == pytest.approx((-2.0, -0.5))
    assert equal_numeric(residual(eq, tr.to_new(parse("t + ln(x)"))), parse("0"),
                         domain={"x": (-2, -0.5)})


def test_normalize_exponential_g():
    eq, tr = normalize_general_form(parse("exp(-x)"), parse("exp(x)"), parse("u"), parse("0"))
    assert eq.f.is_one()
    assert equal_numeric(tr.X, parse("-exp(-x)"))


def test_normalize_falls_back_to_profiles():
    eq, tr = normalize_general_form(parse("1"), parse("1 + x^2"), parse("u"), parse("0"))
    xs = np.array([0.6, 1.0, 1.7])
    z = evaluate(tr.X, {"x": xs}, tr.numeric_functions())
    assert np.allclose(z, np.arctan(xs) - np.arctan(0.5), atol=1e-10)
    assert np.allclose(evaluate(eq.f, {"x": z}, eq.numeric_functions()), 1 + xs**2, atol=1e-9)
    assert tr.roundtrip_error() < 1e-9


def test_normalize_rejects_sign_changing_g():
    with pytest.raises(ShapeError):
        normalize_general_form(parse("1"), parse("x - 1"), parse("1"), parse("0"))


def test_serialization_roundtrip():
    eq = ClassEquation.from_strings("abs(x)^2", "u^3", "u")
    assert ClassEquation.from_dict(json.loads(json.dumps(eq.to_dict()))) == eq
    v = vf("t^2*dt + t*x*dx - (t*u + x)*du")
    assert VectorField.from_dict(json.loads(json.dumps(v.to_dict()))) == v
    tr = PointTransformation.from_strings(("t", "exp(-x)", "u"), ("t", "-ln(x)", "u"))
    assert PointTransformation.from_dict(json.loads(json.dumps(tr.to_dict()))) == tr
    assert tr.roundtrip_error() < 1e-12
