import pytest
import yaml

from psibsde.config import ExperimentConfig, from_dict, load
from psibsde.errors import ConfigError


def test_defaults_and_effective_mu():
    cfg = from_dict({})
    assert cfg.solver.basis == "hermite"
    assert cfg.effective_mu == pytest.approx(2 * cfg.generator.gamma)
    assert from_dict({"mu": 3.0}).effective_mu == 3.0


def test_roundtrip(tmp_path):
    cfg = from_dict({"generator": {"driver": "linear_y", "beta": 0.5}, "grid": {"n_steps": 10}})
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    again = load(path)
    assert again.to_dict() == cfg.to_dict()


def test_int_fields_accept_integral_floats():
    assert from_dict({"ensemble": {"M": 1e4}}).ensemble.M == 10_000


@pytest.mark.parametrize("data, field", [
    ({"generator": {"driver": "nope"}}, "generator.driver"),
    ({"generator": {"bogus": 1}}, "generator.bogus"),
    ({"grid": {"n_steps": 2.5}}, "grid.n_steps"),
    ({"grid": {"T": "long"}}, "grid.T"),
    ({"grid": {"T": -1}}, "grid.T"),
    ({"ensemble": {"seed": -3}}, "ensemble.seed"),
    ({"solver": {"basis": "spline"}}, "solver.basis"),
    ({"solver": {"basis": "partition"}, "ensemble": {"d": 2}}, "solver.basis"),
    ({"terminal": {"name": "exp_W_T_sq", "c": 0.9}}, "terminal.c"),
    ({"command": "fly"}, "command"),
    ({"grid": [1, 2]}, "grid"),
])
def test_errors_name_the_field(data, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        from_dict(data)


def test_yaml_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("grid:\n  T: 1\n  n_steps: [1,\n")
    with pytest.raises(ConfigError, match="line"):
        load(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "absent.yaml")


def test_dump_is_plain_yaml():
    data = yaml.safe_load(ExperimentConfig().dump())
    assert set(data) >= {"generator", "terminal", "grid", "ensemble", "solver"}
