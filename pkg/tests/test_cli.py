import json

import pytest

import slq_turnpike as sq
from slq_turnpike import cli


@pytest.fixture(scope="module")
def ex1_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("problems") / "ex1.json"
    sq.dump_problem(sq.example_problem(1), path)
    return str(path)


@pytest.fixture(scope="module")
def bad_r_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("problems") / "bad.json"
    prob = sq.LQProblem.from_coeffs(1, 1, Q=[[1.0]], R=[[0.0]])
    sq.dump_problem(prob, path)
    return str(path)


def run_cli(capsys, *argv):
    code = cli.run(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_examples_subcommand(capsys):
    code, out, _ = run_cli(capsys, "examples")
    assert code == 0
    assert "overall" in out and "FAIL" not in out


def test_solve_are_json_and_determinism(capsys, ex1_path):
    code, out1, _ = run_cli(capsys, "solve-are", "--problem", ex1_path,
                            "--h", "2e-3")
    assert code == 0
    payload = json.loads(out1)
    assert payload["schema_version"] == "1"
    assert payload["P"][0][0] == pytest.approx(2.0, abs=1e-9)
    assert payload["theta"][0][0] == pytest.approx(-2.0, abs=1e-9)
    assert 2.7 <= payload["rate"]["rate"] <= 3.3
    code, out2, _ = run_cli(capsys, "solve-are", "--problem", ex1_path,
                            "--h", "2e-3")
    assert out1 == out2                     # byte-identical rerun


def test_static_subcommand(capsys, ex1_path):
    code, out, _ = run_cli(capsys, "static", "--problem", ex1_path, "--h", "2e-3")
    assert code == 0
    payload = json.loads(out)
    assert payload["static"]["x_star"][0] == pytest.approx(-0.5, abs=1e-10)
    assert payload["naive"]["status"] == "feasible"
    assert payload["agrees"] is False


def test_check_stability_subcommand(capsys, ex1_path):
    code, out, _ = run_cli(capsys, "check-stability", "--problem", ex1_path)
    assert code == 0
    payload = json.loads(out)
    assert payload["mode"] == "open-loop"
    assert payload["stable"] is False
    assert payload["generator_abscissa"] == pytest.approx(1.0)

    code, out, _ = run_cli(capsys, "check-stability", "--problem", ex1_path,
                           "--closed-loop", "--h", "2e-3")
    payload = json.loads(out)
    assert payload["stable"] is True
    assert payload["beta"] == pytest.approx(3.0, abs=1e-6)
    assert payload["lyapunov_witness"] is not None


def test_riccati_csv(capsys, ex1_path, tmp_path):
    out_path = str(tmp_path / "riccati.csv")
    code, out, _ = run_cli(capsys, "riccati", "--problem", ex1_path,
                           "--T", "2.0", "--h", "1e-2", "--out", out_path)
    assert code == 0
    lines = open(out_path).read().strip().splitlines()
    assert lines[0] == "t,P_00,K_00,phi_0"
    assert len(lines) == 202
    last = [float(v) for v in lines[-1].split(",")]
    assert last[0] == pytest.approx(2.0)
    assert last[1] == 0.0 and last[2] == 0.0 and last[3] == 0.0


def test_value_subcommand(capsys, ex1_path):
    code, out, _ = run_cli(capsys, "value", "--problem", ex1_path,
                           "--x0", "1.0", "--T", "10", "--h", "2e-3")
    assert code == 0
    payload = json.loads(out)
    assert payload["V_T_over_T"] == pytest.approx(payload["V_T"] / 10.0)


def test_simulate_subcommand(capsys, ex1_path, tmp_path):
    out_path = str(tmp_path / "sim.csv")
    code, out, _ = run_cli(capsys, "simulate", "--problem", ex1_path,
                           "--x0", "1.0", "--T", "1.0", "--h", "1e-2",
                           "--paths", "500", "--seed", "42", "--out", out_path)
    assert code == 0
    payload = json.loads(out)
    assert payload["flagged_paths"] == 0
    header = open(out_path).readline().strip().split(",")
    assert header == ["t", "EX_0", "Eu_0", "EY_0", "mc_EX_0", "mc_se_0"]


def test_turnpike_subcommand(capsys, ex1_path, tmp_path):
    report_path = str(tmp_path / "report.json")
    code, out, _ = run_cli(capsys, "turnpike", "--problem", ex1_path,
                           "--x0", "1.0", "--T", "6", "--T", "12",
                           "--h", "5e-3", "--out", report_path)
    assert code == 0
    report = json.load(open(report_path))
    fits = report["runs"]["fits"]
    assert [f["T"] for f in fits] == [6.0, 12.0]
    assert all(f["max_violation"] <= 0.0 for f in fits)
    csv_lines = open(report_path[:-5] + ".csv").read().splitlines()
    assert csv_lines[0] == "T,t,deviation"


def test_missing_problem_file_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "value", "--problem", "/nonexistent.json",
                           "--x0", "1.0")
    assert code == 1
    assert json.loads(err.splitlines()[0])["error"] == "usage"


def test_invalid_problem_exits_2(capsys, bad_r_path):
    code, out, err = run_cli(capsys, "solve-are", "--problem", bad_r_path)
    assert code == 2
    assert json.loads(err.splitlines()[0])["error"] == "validation"
    payload = json.loads(out)
    assert "R not positive definite" in payload["validation"]["violations"]


def test_unknown_flag_is_usage_error(capsys, ex1_path):
    code, _, err = run_cli(capsys, "value", "--problem", ex1_path,
                           "--x0", "1.0", "--frobnicate", "9")
    assert code == 1


def test_malformed_json_is_structural(capsys, tmp_path):
    path = tmp_path / "garbage.json"
    path.write_text("not json {")
    code, _, err = run_cli(capsys, "solve-are", "--problem", str(path))
    assert code == 2
    assert json.loads(err.splitlines()[0])["error"] == "structural"


def test_divergent_problem_exits_3(capsys, tmp_path):
    prob = sq.LQProblem.from_coeffs(1, 1, A=[[1.0]], Q=[[1.0]], R=[[1.0]])
    path = tmp_path / "unstable.json"
    sq.dump_problem(prob, str(path))
    code, _, err = run_cli(capsys, "solve-are", "--problem", str(path))
    assert code == 3
    assert json.loads(err.splitlines()[0])["error"] == "numerical"


def test_bad_x0_is_usage_error(capsys, ex1_path):
    code, _, err = run_cli(capsys, "value", "--problem", ex1_path,
                           "--x0", "1.0,2.0", "--T", "5")
    assert code == 1
    assert "x0" in json.loads(err.splitlines()[0])["detail"]
