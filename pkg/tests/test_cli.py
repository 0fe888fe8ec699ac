import csv
import json

import pytest
import yaml

from psibsde.cli import main


def run(tmp_path, data, *extra, name="cfg.yaml"):
    cfg = tmp_path / name
    cfg.write_text(yaml.safe_dump(data))
    out = tmp_path / "out"
    code = main(["--config", str(cfg), "--out", str(out), *extra])
    return code, out


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


SMALL = {"grid": {"T": 1.0, "n_steps": 10}, "ensemble": {"M": 5000, "seed": 3, "seed2": 4}}


def test_psi_check(tmp_path):
    code, out = run(tmp_path, {"command": "psi-check", "psi_check": {"samples": 200}})
    assert code == 0
    rows = read_csv(out / "psi_check.csv")
    assert rows[0] == ["inequality", "index", "x", "param1", "param2", "param3", "margin",
                       "log_ratio", "ok"]
    assert len(rows) == 1 + 4 * 200
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["status"] == "pass"
    assert (out / "config.yaml").exists()


def test_gauss_check(tmp_path):
    data = dict(SMALL, command="gauss-check")
    code, out = run(tmp_path, data)
    assert code == 0
    assert read_csv(out / "gauss_check.csv")[0][0] == "check"


def test_solve_with_oracle(tmp_path):
    data = dict(SMALL, command="solve", generator={"driver": "abs_z", "gamma": 0.5},
                terminal={"name": "W_T"})
    code, out = run(tmp_path, data)
    assert code == 0
    assert read_csv(out / "solve.csv")[0][:3] == ["instance", "y0", "y0_std_error"]
    steps = read_csv(out / "solve_steps.csv")
    assert len(steps) == 12


def test_seed_override_is_recorded(tmp_path):
    data = dict(SMALL, command="solve", terminal={"name": "constant", "c": 2.0})
    code, out = run(tmp_path, data, "--seed-override", "99")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 99 and manifest["seed_override"] == 99


def test_bound_and_class_d(tmp_path):
    for command, name in (("bound-check", "bound_check.csv"), ("class-d", "class_d_summary.csv")):
        code, out = run(tmp_path, dict(SMALL, command=command))
        assert code == 0, command
        assert (out / name).exists()


def test_subcriticial_mu_is_usage_error(tmp_path):
    code, out = run(tmp_path, dict(SMALL, command="bound-check", mu=0.1))
    assert code == 1
    assert json.loads((out / "manifest.json").read_text())["status"] == "usage_error"


def test_uniqueness_and_negative_control(tmp_path):
    data = dict(SMALL, command="uniqueness", generator={"driver": "linear_y_abs_z", "beta": 0.3,
                                                        "gamma": 0.5},
                terminal={"name": "abs_W_T"}, ensemble={"M": 20000, "seed": 3, "seed2": 4})
    code, out = run(tmp_path, data)
    assert code == 0
    for name in ("uniqueness_agreement.csv", "uniqueness_delta.csv", "windows.csv",
                 "uniqueness_ui.csv", "uniqueness_steps.csv"):
        assert (out / name).exists()
    data["uniqueness"] = {"negative_control": 0.5}
    code, out = run(tmp_path, data, name="neg.yaml")
    assert code == 2


def test_truncation_ladder_small(tmp_path):
    data = dict(SMALL, command="truncation-ladder", generator={"driver": "zero"},
                truncation={"n": [1, 2], "p": [1, 2]})
    code, out = run(tmp_path, data)
    rows = read_csv(out / "truncation_ladder.csv")
    assert rows[0][-1] == "domination_excess" and len(rows) == 5
    assert code == 0


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 1
    code, _ = run(tmp_path, {"grid": {"T": "x"}}, "solve")
    assert code == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["--out", str(tmp_path / "o2")]) == 1
    assert main(["psi-check", "--jobs", "0", "--out", str(tmp_path / "o3")]) == 1


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PSIBSDE_OUTPUT_DIR", str(tmp_path / "envout"))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"command": "psi-check", "psi_check": {"samples": 50}}))
    assert main(["--config", str(cfg)]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()
