import csv
import io
import json
import math

import pytest

from starbell.cli import fmt, main
from starbell.network import dump_config, load_config, reference_config, symmetric_config
from starbell.optimizer import worst_case_objective


def read_table(path):
    lines = [l for l in open(path).read().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def manifest(path):
    out = {}
    for line in open(path):
        if line.startswith("# "):
            key, _, value = line[2:].rstrip("\n").partition(": ")
            out[key] = value
    return out


@pytest.fixture
def ref_file(tmp_path):
    p = tmp_path / "reference.json"
    dump_config(reference_config(), p)
    return p


@pytest.fixture(autouse=True)
def pinned_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def test_number_format():
    assert fmt(1.131370849898476) == "1.1313708499"
    assert fmt(2.0309068102715) == "2.03090681027"
    assert fmt(1234567.891234567) == "1234567.89123"
    assert fmt(1e-20).startswith("0.0000000000000000000")
    assert "e" not in fmt(3.5e-17)
    assert fmt(math.nan) == "nan" and fmt(7) == "7" and fmt(None) == ""


def test_evaluate_reference(ref_file, tmp_path):
    out = tmp_path / "ev.csv"
    assert main(["evaluate", str(ref_file), "-o", str(out)]) == 0
    rows = read_table(out)
    tri = [r for r in rows if r["kind"] == "tri-local"]
    bi = [r for r in rows if r["kind"] == "bi-local"]
    assert len(tri) == 8 and len(bi) == 12
    for r in rows:
        assert float(r["S_closed_form"]) == pytest.approx(1.131371, abs=1e-6)
        assert abs(float(r["S_born_rule"]) - float(r["S_closed_form"])) < 1e-10
        assert abs(float(r["difference"])) < 1e-10
    assert {r["selection"] for r in bi} >= {"(1,2,*)", "(*,2,1)", "(2,*,2)"}
    chsh = read_table(tmp_path / "ev_chsh.csv")
    assert len(chsh) == 3
    for r in chsh:
        assert float(r["chsh1"]) == pytest.approx(2.2627, abs=1e-4)
        assert float(r["chsh2"]) == pytest.approx(2.2627, abs=1e-4)
        assert float(r["projective_bound"]) == pytest.approx(2.0309, abs=1e-4)
    m = manifest(out)
    assert m["command"] == "evaluate" and m["config"] == str(ref_file)
    assert m["outputs"] == f"{out};{tmp_path / 'ev_chsh.csv'}"
    assert m["timestamp"] == "2023-11-14T22:13:20Z"
    assert manifest(tmp_path / "ev_chsh.csv") == m


def test_evaluate_single_pair(tmp_path, capsys):
    cfg = tmp_path / "one.json"
    dump_config(symmetric_config([1.0], m=1), cfg)
    assert main(["evaluate", str(cfg)]) == 0
    text = capsys.readouterr().out
    rows = [l for l in text.splitlines() if l.startswith("tri-local")]
    assert len(rows) == 1
    assert rows[0].split(",")[-3] == fmt(math.sqrt(2))


def test_evaluate_json(ref_file, tmp_path):
    out = tmp_path / "ev.json"
    assert main(["evaluate", str(ref_file), "-o", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["manifest"]["command"] == "evaluate"
    assert len(doc["selections"]) == 20 and len(doc["chsh"]) == 3


@pytest.mark.parametrize(
    "text, code, needle",
    [
        ('{"theta_degrees": 45, "branches": [[{"eta_z": 1, "eta_x": "high"}]]}', 2, "$.branches[0][0].eta_x"),
        ('{"theta_degrees": 45, "branches": [[{"eta_z": 1}]]}', 2, "$.branches[0][0].eta_x"),
        ('{"theta_degrees": 45, "branches": [[', 2, "line 1"),
        ('{"theta_degrees": 45, "branches": [[{"eta_z": 1.2, "eta_x": 1}]]}', 3, "branches[0][0].eta_z"),
        ('{"theta_degrees": 120, "branches": [[{"eta_z": 1, "eta_x": 1}]]}', 3, "theta"),
    ],
)
def test_config_failures(tmp_path, capsys, text, code, needle):
    cfg = tmp_path / "bad.json"
    cfg.write_text(text)
    assert main(["evaluate", str(cfg)]) == code
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["evaluate", str(tmp_path / "absent.json")]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    import starbell.cli as cli
    from starbell.linalg import PhysicalityError

    def boom(*a, **k):
        raise PhysicalityError("negative eigenvalue")

    monkeypatch.setattr(cli, "joint_distribution", boom)
    cfg = tmp_path / "c.json"
    dump_config(reference_config(), cfg)
    assert main(["evaluate", str(cfg)]) == 4


def test_sample_columns_and_determinism(ref_file, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sample", str(ref_file), "--shots", "40000", "--seed", "5", "--bootstrap", "50"]
    assert main(args + ["-o", str(a)]) == 0
    first = a.read_bytes()
    assert main(args + ["-o", str(a), "--threads", "3"]) == 0
    assert a.read_bytes() == first
    rows = read_table(a)
    assert list(rows[0]) == ["kind", "selection", "S_hat", "std_error", "z_score_vs_1"]
    assert len(rows) == 20
    for r in rows:
        assert float(r["z_score_vs_1"]) == pytest.approx((float(r["S_hat"]) - 1) / float(r["std_error"]), rel=1e-9)
    chsh = read_table(tmp_path / "a_chsh.csv")
    assert len(chsh) == 3 and "margin_err" in chsh[0]
    m = manifest(a)
    assert m["seed"] == "5" and m["shots"] == "40000"
    assert main(args + ["-o", str(b), "--seed", "6"]) == 0
    assert read_table(b) != rows


def test_sample_small_run_still_reports(ref_file, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["sample", str(ref_file), "--shots", "100", "--bootstrap", "50", "-o", str(out)]) == 0
    rows = read_table(out)
    assert len(rows) == 20
    finite = [float(r["std_error"]) for r in rows if r["std_error"] != "nan"]
    assert min(finite) > 0.05  # a hundred runs leave large error bars


def test_sample_rejects_zero_shots(ref_file):
    assert main(["sample", str(ref_file), "--shots", "0"]) == 3


def test_sample_run_log(ref_file, tmp_path):
    log = tmp_path / "runs.txt"
    assert main(["sample", str(ref_file), "--shots", "300", "--bootstrap", "10", "-o", str(tmp_path / "s.csv"), "--log", str(log)]) == 0
    lines = log.read_text().splitlines()
    assert len(lines) == 301 and lines[0].startswith("x y1_1")


def test_optimize_operating_point(tmp_path):
    out, cfg = tmp_path / "opt.json", tmp_path / "best.json"
    code = main(["optimize", "--m", "3", "--n", "2", "--symmetry", "per-depth", "--budget", "4", "-o", str(out), "--config-output", str(cfg)])
    assert code == 0
    doc = json.loads(out.read_text())
    values = {r["parameter"]: r["value"] for r in doc["result"]}
    assert values["eta_z[1,1]"] == pytest.approx(0.8, abs=1e-4)
    assert values["eta_x[3,2]"] == 1.0
    assert values["theta_degrees"] == pytest.approx(45.0, abs=0.01)
    assert values["objective"] == pytest.approx(1.131371, abs=1e-6)
    assert worst_case_objective(load_config(cfg)) == pytest.approx(values["objective"], abs=1e-9)


def test_optimize_single_pair(tmp_path):
    out = tmp_path / "o.json"
    assert main(["optimize", "--m", "1", "--n", "1", "--budget", "2", "-o", str(out)]) == 0
    values = {r["parameter"]: r["value"] for r in json.loads(out.read_text())["result"]}
    assert values["objective"] == pytest.approx(math.sqrt(2), abs=1e-9)
    assert values["eta_z[1,1]"] == 1.0 and values["eta_x[1,1]"] == 1.0
    assert (tmp_path / "o_config.json").exists()


def test_optimize_three_deep_config_violates(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["optimize", "--m", "3", "--n", "3", "--budget", "4", "-o", str(out)]) == 0
    assert worst_case_objective(load_config(tmp_path / "o_config.json")) > 1


def test_optimize_ragged_is_flagged(tmp_path, capsys):
    out = tmp_path / "o.json"
    assert main(["optimize", "--m", "2", "--n", "1", "2", "--symmetry", "none", "--budget", "1", "-o", str(out)]) == 0
    values = {r["parameter"]: r["value"] for r in json.loads(out.read_text())["result"]}
    assert values["exploratory"] == "true"
    assert "exploratory" in capsys.readouterr().err


def test_optimize_bad_dimensions():
    assert main(["optimize", "--m", "2", "--n", "1", "2", "3"]) == 3


def test_tradeoff_curves(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["tradeoff", "--points", "11", "-o", str(out)]) == 0
    rows = read_table(out)
    proj = [r for r in rows if r["curve"] == "projective"]
    assert (float(proj[0]["chsh1"]), float(proj[0]["chsh2"])) == pytest.approx((2, math.sqrt(10) - 1), abs=1e-10)
    assert (float(proj[-1]["chsh1"]), float(proj[-1]["chsh2"])) == pytest.approx((2 * math.sqrt(10) - 4, 2), abs=1e-10)
    unsharp = {round(float(r["parameter"]), 6): r for r in rows if r["curve"] == "unsharp"}
    assert float(unsharp[0.8]["chsh1"]) == pytest.approx(2.2627, abs=1e-4)
    assert float(unsharp[0.8]["chsh2"]) == pytest.approx(2.2627, abs=1e-4)
    assert (float(unsharp[1.0]["chsh1"]), float(unsharp[1.0]["chsh2"])) == pytest.approx((2 * math.sqrt(2), math.sqrt(2)), abs=1e-10)
    assert all(float(r["chsh1"]) == 2 for r in rows if r["curve"] == "local_chsh1")


def test_tradeoff_needs_two_points():
    assert main(["tradeoff", "--points", "1"]) == 3
