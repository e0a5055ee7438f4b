import pytest

from evfield.config import ConfigError, default_config, load_config, parse_config


def test_defaults_cover_every_key():
    cfg = default_config()
    assert cfg["train.lr"] == 1e-5
    assert cfg["sampler.n"] == 2
    assert cfg["sim.preset"] == "checker-sphere"


def test_parse_overrides_and_types():
    cfg = parse_config("""
# comment line
train.lr = 0.001
train.steps = 500
sim.jitter = true
motion.model = homography
""")
    assert cfg["train.lr"] == 0.001
    assert cfg["train.steps"] == 500
    assert cfg["sim.jitter"] is True
    assert cfg["motion.model"] == "homography"
    assert cfg["train.beta"] == 0.01   # untouched default


def test_unknown_key_is_hard_error():
    with pytest.raises(ConfigError, match="unknown key 'train.lrr'"):
        parse_config("train.lrr = 0.1")


def test_duplicate_key_is_hard_error():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("train.lr = 0.1\ntrain.lr = 0.2")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match=":2:"):
        parse_config("train.lr = 0.1\ntrain.steps = soon")


def test_missing_equals_is_error():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("train.lr 0.1")


def test_non_finite_float_rejected():
    with pytest.raises(ConfigError, match="finite"):
        parse_config("train.lr = inf")


def test_bool_spellings():
    assert parse_config("sim.jitter = on")["sim.jitter"] is True
    assert parse_config("sim.jitter = 0")["sim.jitter"] is False
    with pytest.raises(ConfigError):
        parse_config("sim.jitter = maybe")


def test_load_config_names_file_in_errors(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("nope = 1\n")
    with pytest.raises(ConfigError, match="run.cfg:1"):
        load_config(p)
