import pytest

from subspace_inference import ConfigError
from subspace_inference.cli.config import ExperimentConfig, config_from_dict, load_config, parse_override


def _valid(**extra):
    raw = {"inference": {"temperature": 10.0}}
    for k, v in extra.items():
        raw.setdefault(k, {}).update(v)
    return raw


def test_defaults_need_a_temperature():
    with pytest.raises(ConfigError, match="temperature"):
        ExperimentConfig().validate()
    assert config_from_dict(_valid()).validate().inference.temperature == 10.0


def test_overrides_are_parsed_as_toml_values(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[inference]\ntemperature = "validate"\n[swa]\nnum_steps = 200\n')
    cfg = load_config(
        str(path),
        ["swa.learning_rate=0.05", "model.hidden_sizes=[8, 8]", "data.source=other.csv", "subspace.include_noise=true"],
    )
    assert cfg.swa.learning_rate == 0.05 and cfg.swa.num_steps == 200
    assert cfg.model.hidden_sizes == (8, 8)
    assert cfg.data.source == "other.csv"
    assert cfg.subspace.include_noise is True
    assert cfg.inference.temperature == "validate"


def test_integer_accepted_where_float_expected():
    cfg = config_from_dict(_valid(swa={"learning_rate": 1}))
    assert isinstance(cfg.swa.learning_rate, float)


@pytest.mark.parametrize(
    "raw",
    [
        {"bogus": {}},
        {"swa": {"nope": 1}},
        {"swa": {"num_steps": 1.5}},
        {"model": {"augment_square_input": 1}},
        {"model": {"hidden_sizes": 5}},
        {"inference": []},
    ],
)
def test_malformed_config_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


@pytest.mark.parametrize(
    "sections",
    [
        {"subspace": {"rank": 30}},
        {"subspace": {"kind": "curve", "rank": 3}},
        {"subspace": {"kind": "sideways"}},
        {"inference": {"temperature": -1.0}},
        {"inference": {"temperature": "hot"}},
        {"inference": {"prior_std": 0.0}},
        {"inference": {"method": "hmc"}},
        {"swa": {"momentum": 1.0}},
        {"data": {"test_fraction": 1.0}},
        {"protocol": {"trials": 0}},
        {"model": {"head": "laplace"}},
    ],
)
def test_invalid_values_fail_before_compute(sections):
    with pytest.raises(ConfigError):
        config_from_dict(_valid(**sections)).validate()


def test_rank_bounded_by_captured_deviations():
    ok = _valid(swa={"num_steps": 100, "capture_frequency": 25}, subspace={"rank": 4})
    config_from_dict(ok).validate()
    bad = _valid(swa={"num_steps": 100, "capture_frequency": 25}, subspace={"rank": 5})
    with pytest.raises(ConfigError, match="exceeds"):
        config_from_dict(bad).validate()


@pytest.mark.parametrize("text", ["noequals", "a=1", ".x=1", "a.b.c=1"])
def test_bad_override_syntax(text):
    with pytest.raises(ConfigError):
        parse_override(text)


def test_broken_toml_is_a_config_error(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[data\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_replace_keeps_other_fields():
    cfg = config_from_dict(_valid())
    cfg2 = cfg.replace(swa={"num_steps": 7})
    assert cfg2.swa.num_steps == 7 and cfg2.swa.learning_rate == cfg.swa.learning_rate
    assert cfg.swa.num_steps != 7
    assert cfg2.to_dict()["inference"]["temperature"] == 10.0


def test_shipped_configs_validate():
    import pathlib

    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.toml")):
        load_config(str(path)).validate()
