import pytest

from pbir.config import ConfigError, ExperimentConfig, geomspace, load_config, parse_override


def write(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    return p


def test_defaults_build():
    cfg = ExperimentConfig()
    geom = cfg.geometry.build()
    assert geom.n_views == 180 and geom.grid.nx == 128
    assert cfg.path.build().beta_ratio == 1.45


def test_overrides(tmp_path):
    p = write(tmp_path, "solver:\n  beta: 0.01\n")
    cfg = load_config(p, ["solver.beta=0.02", "path.engine=rog", "geometry.nx=16", "nps.betas=[0.1, 0.2]"])
    assert cfg.solver.beta == 0.02 and cfg.path.engine == "rog" and cfg.geometry.nx == 16
    assert cfg.nps.betas == [0.1, 0.2]


@pytest.mark.parametrize("ov", ["solver.beta", "=3", "solver.beta.x=1"])
def test_bad_override_syntax(tmp_path, ov):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "solver: {beta: 0.1}\n"), [ov])


@pytest.mark.parametrize("text,where", [
    ("solver: {beta: -1}\n", "solver.beta"),
    ("path: {beta1: 2, beta2: 1}\n", "path"),
    ("geometry: {nx: 0}\n", "geometry.nx"),
    ("bogus: 1\n", "bogus"),
    ("phantom: {kind: file, path: /nonexistent.txt}\n", "phantom"),
    ("metrics: {references: [/nonexistent.pbir]}\n", "metrics.references"),
])
def test_validation(tmp_path, text, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        load_config(write(tmp_path, text))


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.yaml")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(write(tmp_path, "a: [1,\n"))
    with pytest.raises(ConfigError, match="mapping"):
        load_config(write(tmp_path, "- 1\n"))


def test_hash():
    a = ExperimentConfig()
    assert a.config_hash() == ExperimentConfig().config_hash()
    assert a.config_hash() == ExperimentConfig(output_dir="elsewhere").config_hash()
    b = ExperimentConfig.model_validate({"solver": {"beta": 0.5}})
    assert a.config_hash() != b.config_hash() and len(a.config_hash()) == 64


def test_override_value_parsing():
    assert parse_override("a.b=1e-3") == ("a.b", 1e-3)
    assert parse_override("a=true") == ("a", True)
    assert parse_override("a=x=y") == ("a", "x=y")


def test_geomspace():
    assert geomspace(1.0, 100.0, 3) == pytest.approx([1.0, 10.0, 100.0])
    assert geomspace(2.0, 2.0, 2) == [2.0, 2.0]
    with pytest.raises(ValueError):
        geomspace(0.0, 1.0, 3)
