import json

import pytest

from shelfalign.config import CONFIG_ENV_VAR, PipelineConfig, load_config
from shelfalign.errors import ConfigError


def test_defaults():
    config = PipelineConfig()
    assert (config.sigma, config.nms_threshold, config.alpha_decay) == (7.0, 0.2, 0.75)
    assert (config.max_iterations, config.stall_window) == (10, 6)
    assert config.empty_space.dark_threshold == 60.0
    assert config.unknown_units_by_width is False


def test_overrides_skip_none():
    config = PipelineConfig().with_overrides(sigma=5.0, max_iterations=None)
    assert config.sigma == 5.0
    assert config.max_iterations == 10


@pytest.mark.parametrize("field, value", [
    ("nms_threshold", 1.5),
    ("alpha_decay", 1.0),
    ("sigma", 0.0),
    ("max_iterations", 0),
])
def test_out_of_range_override_names_the_field(field, value):
    with pytest.raises(ConfigError, match=field):
        PipelineConfig().with_overrides(**{field: value})


def test_load_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"sigma": 9.0, "empty_space": {"dark_threshold": 40}}))
    config = load_config(path)
    assert config.sigma == 9.0
    assert config.empty_space.dark_threshold == 40.0


def test_load_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "env-config.json"
    path.write_text(json.dumps({"max_iterations": 3}))
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert load_config().max_iterations == 3


def test_no_config_means_defaults(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    assert load_config() == PipelineConfig()


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(broken)


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"sigmaa": 3}))
    with pytest.raises(ConfigError, match="sigmaa"):
        load_config(path)
