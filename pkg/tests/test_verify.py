import math

import pytest
from hypothesis import given, settings, strategies as st

import diffconv.model as model
from diffconv.catalog import check_exact_solution, instantiate
from diffconv.expr import differentiate, parse
from diffconv.model import ClassEquation
from diffconv.verify import (
    Grid,
    check_solution,
    finite_difference_residual,
    symbolic_residual_at,
    zero_report,
)
from tests.oracles import HAND_SOLUTIONS, pde_residual, random_box_points, residual_scale

solv1 = ClassEquation.from_strings("1", "e^u", "0")
solv3 = ClassEquation.from_strings("1", "u^(-1)", "0")


def test_grid_is_deterministic_and_honours_exclusions():
    g = Grid({"t": (0.5, 2), "x": (-1, 1)}, n=20, seed=9, exclude=[lambda p: abs(p["x"]) < 0.2])
    a, b = g.points({"t", "x"}), g.points({"t", "x"})
    assert (a["x"] == b["x"]).all() and (a["t"] == b["t"]).all()
    assert (abs(a["x"]) >= 0.2).all() and len(a["x"]) == 20
    with pytest.raises(ValueError):
        Grid({"x": (0, 1)}, exclude=[lambda p: p["x"] < 2]).points({"x"})


def test_logarithmic_solution_and_control():
    rep = check_solution(solv1, parse("ln(abs(c1*x + c0))"), constants={"c1": (1, 1), "c0": (2, 2)})
    assert rep.verdict and rep.max_abs <= 1e-10
    bad = check_solution(solv1, parse("x"))
    assert not bad.verdict and bad.max_scaled > 0.1


def test_transported_solution_on_the_localized_density():
    eq = instantiate("2.6c", {"gamma": 1}).eq
    assert check_solution(eq, parse("ln(abs(c1 + c0*(exp(-x) + 1)))")).verdict


def test_reports_are_reproducible():
    sol = parse("2*t/((x + c1)^2 + c0*t^2)")
    a = check_solution(solv3, sol, seed=5).to_json()
    b = check_solution(solv3, sol, seed=5).to_json()
    assert a == b


def test_zero_report_scale_and_verdict():
    e = parse("x^2 - x*x + 1e-6")
    rep = zero_report(e, Grid({"x": (0.5, 2)}), 1e-8, names={"x"})
    assert not rep.verdict and math.isclose(rep.max_abs, 1e-6, rel_tol=1e-6)
    assert zero_report(e, Grid({"x": (0.5, 2)}), 1e-5, names={"x"}).verdict


def test_both_oracles_on_the_rational_solution():
    sol = parse("2*t/((x + 0.3)^2 + 1.7*t^2)")
    for p in random_box_points(6, 3):
        point = {"t": p[0], "x": p[1]}
        assert abs(finite_difference_residual(solv3, sol, point) - symbolic_residual_at(solv3, sol, point)) < 1e-6


def test_constants_vanish_under_both_oracles():
    eq = ClassEquation.from_strings("x^2", "u^3", "u")
    point = {"t": 1.1, "x": 0.9}
    assert symbolic_residual_at(eq, parse("1.7"), point) == 0
    assert abs(finite_difference_residual(eq, parse("1.7"), point)) < 1e-9


def test_wrong_derivative_rule_is_exposed(monkeypatch):
    sol = parse("2*t/((x + 0.3)^2 + 1.7*t^2)")
    point = {"t": 1.2, "x": 0.8}
    honest = symbolic_residual_at(solv3, sol, point)

    def doubled(e, v):
        d = differentiate(e, v)
        return 2 * d if v == "x" else d

    monkeypatch.setattr(model, "differentiate", doubled)
    mutated = symbolic_residual_at(solv3, sol, point)
    fd = finite_difference_residual(solv3, sol, point)
    assert abs(honest - fd) < 1e-6
    assert abs(mutated - fd) > 1e-2


@pytest.mark.parametrize("name", sorted(HAND_SOLUTIONS))
def test_hand_written_oracle_agrees(name):
    f, D, K, u = HAND_SOLUTIONS[name]
    for t, x in random_box_points(8, 11):
        r = pde_residual(f, D, K, u, t, x)
        assert abs(r) <= 1e-6 * residual_scale(f, D, K, u, t, x), name


def test_hand_written_oracle_sees_a_non_solution():
    f, D, K, _ = HAND_SOLUTIONS["ln|c1 x + c0| on (1, e^u, 0)"]
    t, x = 1.0, 1.3
    assert abs(pde_residual(f, D, K, lambda t, x: x, t, x)) > 1.0


def test_library_matches_the_hand_oracle():
    # same three functions checked through the library path
    cases = [
        (solv1, "ln(abs(x + 2))"),
        (solv3, "2*t/((x + 0.5)^2 + 1.5*t^2)"),
        (ClassEquation.from_strings("1", "u^(-1/2)", "0"), "(6*t/x^2 + 1/x^2 + 0.02*x^3)^2"),
    ]
    for eq, text in cases:
        assert check_solution(eq, parse(text)).verdict, text


def test_catalog_solutions_agree_with_finite_differences(catalog):
    for sol in catalog.solutions:
        rep = check_exact_solution(sol, catalog)
        if rep.fd_agreement is not None:
            assert rep.fd_agreement < 1e-6, sol.id


@settings(max_examples=25, deadline=None)
@given(st.floats(0.6, 1.9), st.floats(0.6, 1.9), st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_symbolic_and_difference_residuals_agree(t, x, c0, c1):
    sol = parse(f"2*t/((x + {c1})^2 + {c0}*t^2)")
    point = {"t": t, "x": x}
    assert abs(finite_difference_residual(solv3, sol, point) - symbolic_residual_at(solv3, sol, point)) < 1e-6
