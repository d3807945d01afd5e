import pytest

from demohlm.config import SCHEMA, ConfigError, RunConfig, load_config
from demohlm.policy import PolicyConfig


def test_defaults_typed():
    cfg = RunConfig()
    assert cfg.get("tracking", "time_constant") == 0.1
    assert cfg.get("synthesis", "max_episode_steps") == 3000
    assert cfg.get("synthesis", "lag_compensation") is True
    assert cfg.get("synthesis", "manip_formula") == "consistent"
    assert cfg.get("policy", "hidden_layout") == [512, 2048, 2048, 512]


def test_default_policy_config():
    p = RunConfig().policy()
    assert p == PolicyConfig()
    assert p.learning_rate == 5e-5 and p.batch_size == 512 and p.chunk_size == 20 and p.exec_horizon == 10


def test_section_policy_overrides_only_listed_keys():
    p = RunConfig().policy("scaling", seed=2)
    assert p.hidden_layout == (256, 256) and p.learning_rate == 1e-3 and p.epochs == 30
    assert p.chunk_size == 20 and p.seed == 2


def test_overrides():
    cfg = load_config(overrides=["tracking.tracking_noise_std=0", "policy.hidden_layout=64", "synthesis.lag_compensation=false"])
    assert cfg.get("tracking", "tracking_noise_std") == 0.0
    assert cfg.get("policy", "hidden_layout") == [64]
    assert cfg.get("synthesis", "lag_compensation") is False
    assert cfg.tracking().tracking_noise_std == 0.0
    assert cfg.synthesis().lag_compensation is False


@pytest.mark.parametrize(
    "item",
    ["synthesis.max_episode_steps=1.5", "synthesis.lag_compensation=yes", "gaze.k_yaw=fast", "nope.key=1", "gaze.nope=1", "gaze.k_yaw", "k_yaw=1"],
)
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        load_config(overrides=[item])


def test_int_accepted_for_float():
    cfg = load_config(overrides=["gaze.k_yaw=3"])
    assert cfg.get("gaze", "k_yaw") == 3.0 and isinstance(cfg.get("gaze", "k_yaw"), float)


def test_file_then_overrides(tmp_path):
    f = tmp_path / "run.ini"
    f.write_text(f"[meta]\nschema = {SCHEMA}\n[gaze]\nk_yaw = 4.0\nk_pitch = 3.0\n")
    cfg = load_config(f, ["gaze.k_yaw=5"])
    assert cfg.gaze().k_yaw == 5.0 and cfg.gaze().k_pitch == 3.0


def test_file_schema_and_errors(tmp_path):
    f = tmp_path / "run.ini"
    f.write_text("[meta]\nschema = demohlm-config v2\n")
    with pytest.raises(ConfigError, match="schema"):
        load_config(f)
    f.write_text("not an ini file")
    with pytest.raises(ConfigError):
        load_config(f)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_dict_round_trip():
    cfg = load_config(overrides=["gaze.k_yaw=5"])
    back = RunConfig()
    back.merge_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
