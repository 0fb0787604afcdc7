import json
import os
import subprocess
import sys

import pytest

import diffconv.cli as cli
from diffconv.cli import EXIT_FAIL, EXIT_INPUT, EXIT_ORACLE, EXIT_PASS, run
from diffconv.verify import OracleDisagreement

BURGERS_OP = "t^2*dt + t*x*dx - (t*u + x)*du"


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_classify_exponential_diffusivity(capsys):
    code, out, _ = call(capsys, "classify", "--f", "1", "--D", "e^u", "--K", "0", "--json")
    assert code == EXIT_PASS
    doc = json.loads(out)
    best = doc["matches"][0] if "matches" in doc else doc
    assert best["case"] == "F1.5" and len(best["basis"]) == 4


def test_check_symmetry_burgers_projective_operator(capsys):
    code, out, _ = call(capsys, "check-symmetry", "--f", "1", "--D", "1", "--K", "u", "--op", BURGERS_OP)
    assert code == EXIT_PASS and "pass" in out
    code, _, _ = call(capsys, "check-symmetry", "--f", "1", "--D", "1", "--K", "u", "--op", "u*du")
    assert code == EXIT_FAIL


def test_verify_table_one(capsys):
    code, out, _ = call(capsys, "verify-all", "--table", "T1", "--json")
    assert code == EXIT_PASS
    assert len(json.loads(out)["cases"]) == 8


def test_list_cases(capsys):
    code, out, _ = call(capsys, "list-cases", "--table", "T1")
    assert code == EXIT_PASS and len([ln for ln in out.splitlines() if ln.strip()]) >= 8


def test_reduce_and_check_solution(capsys):
    code, out, _ = call(capsys, "reduce", "--row", "solv3.2", "--json")
    assert code == EXIT_PASS and "phi1" in json.loads(out)["ode"]
    code, _, _ = call(capsys, "reduce", "--f", "1", "--D", "e^u", "--K", "0", "--ansatz", "phi + x*t",
                      "--omega", "x")
    assert code == EXIT_FAIL
    code, _, _ = call(capsys, "check-solution", "--solution", "solv3.b")
    assert code == EXIT_PASS
    code, _, _ = call(capsys, "check-solution", "--f", "1", "--D", "e^u", "--K", "0", "--u", "x")
    assert code == EXIT_FAIL


def test_transform_and_flow(capsys):
    code, _, _ = call(capsys, "transform", "--transformation", "1.5")
    assert code == EXIT_PASS
    code, out, _ = call(capsys, "transform", "--f", "x", "--D", "u^2", "--K", "u", "--params", "eps5=ln(2)",
                        "--json")
    assert code == EXIT_PASS and json.loads(out)
    code, _, _ = call(capsys, "flow", "--op", "du + f*df", "--constraint", "D=e^u,K=0", "--f", "x",
                      "--D", "exp(u)", "--K", "0")
    assert code == EXIT_PASS


@pytest.mark.parametrize("argv", [
    ["classify", "--f", "1", "--D", "e^(", "--K", "0"],
    ["check-symmetry", "--f", "1", "--D", "1", "--K", "u", "--op", "u^2*du"],
    ["classify", "--case", "3.6e", "--params", "mu=-1"],
    ["no-such-command"],
])
def test_input_errors_exit_two(capsys, argv):
    assert call(capsys, *argv)[0] == EXIT_INPUT


def test_oracle_disagreement_exits_three(capsys, monkeypatch):
    def broken(*a, **k):
        raise OracleDisagreement("forced", {"t": 1.0})

    monkeypatch.setattr(cli, "symmetry_check", broken)
    code, _, err = call(capsys, "check-symmetry", "--f", "1", "--D", "1", "--K", "u", "--op", "dt")
    assert code == EXIT_ORACLE and "forced" in err


def test_same_seed_gives_identical_bytes():
    argv = [sys.executable, "-m", "diffconv.cli", "verify-all", "--table", "T3", "--json", "--seed", "4"]
    outs = []
    for hash_seed in ("1", "2"):
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        outs.append(subprocess.run(argv, capture_output=True, env=env, check=False).stdout)
    assert outs[0] and outs[0] == outs[1]
    assert json.loads(outs[0])["verdict"] == "pass"
