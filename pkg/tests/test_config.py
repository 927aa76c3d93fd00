import pytest

from deskbot.config import Config, ConfigError, default_config_text, load_config, parse_config


def test_defaults_cover_every_key():
    cfg = Config()
    assert cfg["sim.a_max_pos"] == 0.05
    assert cfg["sim.a_max_rot"] == 0.2
    assert cfg["sim.grip_rate"] == 0.2
    assert cfg["sim.grasp_radius"] == 0.03
    assert cfg["featurize.grip_threshold"] == 0.01
    assert cfg["featurize.pose_threshold"] == 0.05
    assert cfg["featurize.rot_scale"] == 0.1
    assert cfg["featurize.open_loop_horizon"] == 10
    assert cfg["policy.w_pos"] == 100.0
    assert cfg["policy.w_rot"] == 10.0
    assert cfg["policy.w_grip"] == 0.5
    assert cfg["policy.huber_delta"] == 1.0
    assert cfg["policy.noise_sigma"] == 0.1
    assert cfg["embed.frames_k"] == 20
    assert cfg["embed.bottleneck"] == 32
    assert cfg["embed.avg_clips"] == 10
    assert cfg["dagger.deviation_eps"] == 0.12
    assert cfg["dagger.stall_k"] == 40
    assert cfg["dagger.handback_min_steps"] == 5
    assert cfg["eval.n_seeds"] == 100
    assert cfg["teleop.decay_ticks"] == 3


def test_parse_round_trip():
    text = default_config_text()
    cfg = parse_config(text)
    assert cfg.values == Config().values
    again = parse_config(cfg.dumps())
    assert again.values == cfg.values


def test_overrides_and_types():
    cfg = parse_config("policy.lr = 0.01\nsim.t_max = 50\npolicy.torso_widths = 32, 32\n")
    assert cfg["policy.lr"] == 0.01
    assert isinstance(cfg["sim.t_max"], int)
    assert cfg["sim.t_max"] == 50
    assert cfg["policy.torso_widths"] == (32, 32)
    # untouched keys keep defaults
    assert cfg["policy.w_pos"] == 100.0


def test_comments_and_blank_lines():
    cfg = parse_config("# a comment\n\npolicy.lr = 0.002  # inline note\n")
    assert cfg["policy.lr"] == 0.002


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("nosuch.key = 1\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("policy.lr = 0.1\npolicy.lr = 0.2\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        parse_config("sim.t_max = banana\n")


def test_bool_parsing():
    cfg = parse_config("")
    assert isinstance(cfg["embed.seed"], int)
    with pytest.raises(ConfigError):
        parse_config("sim.t_max = true\n")


def test_load_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("eval.n_seeds = 7\n")
    cfg = load_config(str(path))
    assert cfg["eval.n_seeds"] == 7
    assert load_config(None).values == Config().values


def test_override_returns_new_config():
    base = Config()
    other = base.override({"policy.lr": 0.5})
    assert other["policy.lr"] == 0.5
    assert base["policy.lr"] != 0.5
    with pytest.raises(ConfigError):
        base.override({"bogus.key": 1})
