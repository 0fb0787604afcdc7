import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffconv.expr import equal_numeric, evaluate, parse
from diffconv.model import ClassEquation
from diffconv.reduction import (
    KING_OFFSET,
    Ansatz,
    ReductionError,
    _invariance_max,
    amerov_king_check,
    check_row,
    generator,
    parent_equation,
    reconstruct,
    reduce,
    roundtrip,
    row_settings,
    transport_check,
    verify_reduction_tables,
)
from tests.oracles import KING_OFFSET_EXPONENTS

solv1 = ClassEquation.from_strings("1", "e^u", "0")
solv3 = ClassEquation.from_strings("1", "u^(-1)", "0")


def proportional(a, b):
    """Numeric check that two ODE expressions differ by a constant nonzero factor."""
    rng = np.random.default_rng(0)
    pts = {"omega": rng.uniform(0.5, 2, 20), "phi": rng.uniform(0.5, 2, 20),
           "phi1": rng.uniform(-2, 2, 20), "phi2": rng.uniform(-2, 2, 20)}
    as_ode = lambda e: parse(e, functions=()) if isinstance(e, str) else e  # noqa: E731
    va = np.broadcast_to(evaluate(as_ode(a), pts), (20,))
    vb = np.broadcast_to(evaluate(as_ode(b), pts), (20,))
    m = va @ vb / (vb @ vb)
    return m != 0 and np.allclose(va, m * vb, atol=1e-10)


def test_stationary_reduction_of_the_exponential_equation():
    ode = reduce(solv1, Ansatz.parse("phi", "x"))
    assert proportional(ode.expr, "exp(phi)*(phi2 + phi1^2)")
    assert ode.render().startswith("ODE: ") and ode.render().endswith("= 0 in phi(omega)")
    assert ode.order() == 2


def test_travelling_wave_of_the_power_equation():
    mu, eps = 2, 1
    eq = ClassEquation.from_strings("1", f"u^{mu}", "0")
    ode = reduce(eq, Ansatz.parse("phi", "x - eps*t", {"eps": eps}))
    assert proportional(ode.expr, f"phi^{mu}*phi2 + {mu}*phi^{mu - 1}*phi1^2 + {eps}*phi1")


def test_scaling_reduction_of_the_reciprocal_equation():
    ode = reduce(solv3, Ansatz.parse("phi*x^(-2)", "t"))
    assert proportional(ode.expr, "phi1 - 2")
    assert json.loads(ode.to_json())["order"] == 1


def test_non_invariant_ansatz_is_rejected():
    with pytest.raises(ReductionError):
        reduce(solv1, Ansatz.parse("phi + x*t", "x"))


def test_all_rows_reproduce():
    rep = verify_reduction_tables()
    assert len(rep.rows) == 24 and rep.passed
    assert max(r.misfit for r in rep.rows) <= 1e-8
    assert {r.id for r in rep.rows if r.ode_text == "phi' = 0"} == {"solv1.1", "solv3.1", "solv5.1"}


@pytest.mark.parametrize("row,bad", [
    ("solv1.8", "exp(phi)*(phi2 + phi1^2) + delta*(-alpha*omega*phi1 + 2*alpha - 1)"),
    ("solv3.2", "phi1 + 2"),
    ("solv5.6", "phi^mu*phi2 + mu*phi^(mu-1)*phi1^2 - delta*eps*phi1 + delta/mu*phi"),
])
def test_corrupted_rows_are_caught(row, bad):
    rep = verify_reduction_tables(rows=[row], overrides={row: bad})
    assert not rep.passed and rep.findings


def test_wrong_generator_breaks_invariance(catalog):
    row = next(r for r in catalog.reductions if r.id == "solv1.8")
    params = row_settings(catalog, row)[0]
    a = Ansatz.from_row(row, params)
    gen = generator(catalog.parents["solv1"], "Q2 + 2*alpha*Q4", params)
    eq = parent_equation(catalog, catalog.parents["solv1"], params)
    assert _invariance_max(a, gen, eq.domain | {"t": a.t_box()}, 0) > 1e-3
    assert check_row(row, catalog).passed


def test_reconstruct_logarithmic_family():
    a = Ansatz.parse("phi - ln(abs(t))", "x", delta=1)
    sol = reconstruct(a, "ln(c0 - omega^2/2 + c1*omega)", eq=solv1, constants={"c0": (3, 4), "c1": (0.5, 1)})
    want = parse("ln((-x^2/2 + c1*x + c0)/t)")
    assert equal_numeric(parse(sol.u), want, fixed={"c0": 3.5, "c1": 0.7}, domain={"x": (0.5, 2)})


def test_reconstruct_rational_family():
    a = Ansatz.parse("phi*t*abs(t)^(-2*alpha)", "x*abs(t)^(-alpha)", {"alpha": 1})
    sol = reconstruct(a, "2/(omega^2 + c0)", eq=solv3)
    assert equal_numeric(parse(sol.u), parse("2*t/(c0*t^2 + x^2)"), fixed={"c0": 1.2})


def test_reconstruct_constant_profile_and_rejection():
    a = Ansatz.parse("phi", "t")
    assert parse(reconstruct(a, "c", eq=solv1).u) == parse("c")
    with pytest.raises(ReductionError):
        reconstruct(Ansatz.parse("phi", "x"), "omega^2", eq=solv1)


_second_order = ["solv1.5", "solv1.6", "solv1.7", "solv1.8", "solv3.5", "solv3.6", "solv3.7", "solv3.8",
                 "solv5.5", "solv5.6", "solv5.7", "solv5.8"]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(_second_order), st.integers(0, 5), st.sampled_from([1, -1]),
       st.floats(0.8, 1.5), st.floats(-0.3, 0.3))
def test_integrated_profiles_solve_the_parent(catalog, row_id, pick, delta, phi0, slope):
    row = next(r for r in catalog.reductions if r.id == row_id)
    settings_ = row_settings(catalog, row)
    params = settings_[pick % len(settings_)]
    eq = parent_equation(catalog, catalog.parents[row.parent], params)
    # a short omega range keeps every sampled initial value clear of blow-up
    box = {"t": tuple(sorted((delta * 1.0, delta * 1.05))), "x": (0.95, 1.05)}
    rep = roundtrip(eq, Ansatz.from_row(row, params, delta), row.ode, initial=(phi0, slope), box=box)
    assert rep.residual.max_scaled <= 1e-6


def test_roundtrip_uses_the_reduced_ode_by_default():
    rep = roundtrip(solv1, Ansatz.parse("phi", "x - eps*t", {"eps": 1}), initial=(1.0, 0.2))
    assert rep.passed


@pytest.mark.parametrize("row", ["solv1.3", "solv1.4", "solv1.8"])
@pytest.mark.parametrize("gamma", [1, -1])
def test_reductions_follow_the_localizing_map(row, gamma):
    rep = transport_check(row, "2.4", {"gamma": gamma})
    assert rep.passed, rep.to_dict()


def test_transport_rejects_rows_of_another_equation():
    with pytest.raises(ReductionError):
        transport_check("solv3.3", "2.4")


def test_quadratic_in_time_ansatz():
    for n in KING_OFFSET_EXPONENTS:
        assert n * (n - 1) == 6
    xs = np.array([0.7, 1.1, 1.8])
    got = evaluate(parse(KING_OFFSET, functions=()), {"x": xs, "c1": 0.3, "c2": 0.4})
    lo, hi = KING_OFFSET_EXPONENTS
    assert np.allclose(got, 0.3 * xs**lo + 0.4 * xs**hi)
    rep = amerov_king_check()
    assert rep.passed
    assert [f.severity for f in rep.findings] == ["erratum"]
