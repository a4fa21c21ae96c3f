import json
import subprocess
import sys

import pytest

from algebroidkit import fixtures as F
from algebroidkit.cli import main
from algebroidkit.document import document_to_dict

FAST = ["--count", "12"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def write_fixture(tmp_path):
    def _write(name):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(document_to_dict(F.get(name))))
        return p

    return _write


def test_validate_shipped_fixture(capsys):
    code, out, _ = run(capsys, "validate", "plane.json", *FAST)
    assert code == 0
    assert out.strip().endswith("PASS")


def test_validate_failing_algebroid(capsys, write_fixture):
    code, out, _ = run(capsys, "validate", write_fixture("so3_perturbed"), *FAST)
    assert code == 1
    assert "FAIL" in out


def test_check_symplectic(capsys, write_fixture):
    assert run(capsys, "check", "symplectic", "plane.json", *FAST)[0] == 0
    code, out, _ = run(capsys, "check", "symplectic", write_fixture("tr4"), "--form", "omega_x", *FAST)
    assert code == 1
    assert "closed" in out


def test_check_triple_wrong_metric(capsys):
    code, out, _ = run(capsys, "check", "triple", "plane.json", "--metric", "g2", *FAST)
    assert code == 1
    assert "compatibility" in out


def test_check_contact(capsys):
    assert run(capsys, "check", "contact", "heisenberg.json", *FAST)[0] == 0
    assert run(capsys, "check", "contact", "tr3.json", "--form", "eta_flat", *FAST)[0] == 1


def test_contact_on_even_rank_fails(capsys):
    code, _, err = run(capsys, "check", "contact", "plane.json", "--form", "omega", *FAST)
    assert code == 1
    assert err.startswith("error:")


def table_rows(out):
    rows = {}
    for line in out.splitlines():
        if ":" in line:
            name, rest = line.split(":", 1)
            rows[name] = rest.strip()
    return rows


def test_theorem_table(capsys):
    code, out, _ = run(capsys, "check", "theorems", "heisenberg.json", *FAST)
    assert code == 0
    rows = table_rows(out)
    assert rows["contact_poisson"] == "PASS (rho(xi)=0)"
    assert rows["almost_contact"] == "PASS"
    assert rows["base_symplectic"] == "PASS"


def test_theorem_table_flat_rank4(capsys):
    code, out, _ = run(capsys, "check", "theorems", "flat_rank4.json", *FAST)
    assert code == 0
    rows = table_rows(out)
    for name in ("L0", "base_triple", "psi_isomorphism", "integrability"):
        assert rows[name].startswith("PASS")


def test_theorem_table_records_tr3(capsys):
    code, out, _ = run(capsys, "check", "theorems", "tr3.json", *FAST)
    assert code == 0
    assert table_rows(out)["contact_poisson"] == "PASS (rho(xi)!=0, jacobi recorded only)"


def test_decompose_json(capsys):
    code, out, _ = run(capsys, "decompose", "flat_rank4.json", "--at", "0.1,0.2", "--format", "json")
    assert code == 0
    data = json.loads(out)
    assert data["dims"] == {"E1": 0, "E2": 2, "L1": 0, "L2": 2}
    assert data["distribution_dim"] == 2


def test_poisson_value(capsys):
    code, out, _ = run(capsys, "poisson", "plane.json", "-f", "x", "-g", "y", "--at", "0,0")
    assert code == 0
    assert float(out) == pytest.approx(1.0)


def test_poisson_named_function(capsys):
    # f = x^2 y + sin(x): {f, f} = 0
    code, out, _ = run(capsys, "poisson", "plane.json", "-f", "f", "-g", "f", "--at", "0.3,0.2")
    assert code == 0
    assert float(out) == pytest.approx(0.0, abs=1e-12)


def test_contact_poisson_value(capsys):
    code, out, _ = run(capsys, "contact-poisson", "heisenberg.json", "-f", "x^2", "-g", "y", "--at", "0.3,0")
    assert code == 0
    assert float(out) == pytest.approx(-0.6)


def test_reeb(capsys):
    code, out, _ = run(capsys, "reeb", "heisenberg.json", "--at", "0,0", "--format", "json")
    assert code == 0
    assert json.loads(out)["xi"] == [0.0, 0.0, 1.0]


@pytest.mark.parametrize(
    "argv",
    [
        ["validate", "missing.json"],
        ["poisson", "plane.json", "-f", "x", "-g", "y", "--at", "0"],
        ["poisson", "plane.json", "-f", "x", "-g", "y", "--at", "a,b"],
        ["poisson", "plane.json", "-f", "x +", "-g", "y", "--at", "0,0"],
        ["check", "symplectic", "plane.json", "--form", "nope"],
        ["validate", "plane.json", "--tol", "-1"],
    ],
)
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert err.startswith("error:")


def test_bad_document_is_usage_error(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"schema": 1, "rank": 0}))
    assert run(capsys, "validate", p)[0] == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_json_output_is_deterministic(capsys):
    argv = ["check", "triple", "plane.json", "--format", "json", *FAST]
    first = run(capsys, *argv)[1]
    second = run(capsys, *argv)[1]
    fresh = subprocess.run([sys.executable, "-m", "algebroidkit.cli", *argv], capture_output=True, timeout=60).stdout
    assert first == second == fresh.decode()
    data = json.loads(first)
    assert set(data) >= {"tool_version", "seed", "tolerance", "checks", "pass"}
    assert data["pass"] is True


def test_seed_precedence(capsys, monkeypatch):
    monkeypatch.setenv("ALGEBROID_SEED", "7")
    data = json.loads(run(capsys, "validate", "plane.json", "--format", "json", *FAST)[1])
    assert data["seed"] == 7
    data = json.loads(run(capsys, "validate", "plane.json", "--format", "json", "--seed", "11", *FAST)[1])
    assert data["seed"] == 11


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "algebroidkit.cli", "reeb", "heisenberg.json", "--at", "0,0"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == "1.0*e3"
