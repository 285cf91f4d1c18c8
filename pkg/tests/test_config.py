import pytest

from hjbtree.config import ConfigError, ExperimentConfig, load_config, parse_config


def test_defaults_per_model():
    assert parse_config("model = burgers").nx == 41
    cfg = parse_config("model = reaction_diffusion\n")
    assert cfg.nx == 31 and cfg.sigma == 0.1 and cfg.resolved_reduction == "deim"
    assert parse_config("model = burgers").resolved_reduction == "tensor"


def test_comments_lists_and_types():
    cfg = parse_config("""
        # header
        model = toy        # inline
        dt = 0.05
        val_controls = 1, 3
        conv_dts = 0.1, 0.05
        write_tree = false
    """)
    assert cfg.dt == 0.05 and cfg.dt_online == 0.05 and cfg.val_controls == (1, 3)
    assert cfg.conv_dts == (0.1, 0.05) and cfg.write_tree is False


@pytest.mark.parametrize("text,key", [
    ("dt = -0.1", "dt"),
    ("epsilon = -1", "epsilon"),
    ("energy = 1.5", "energy"),
    ("model = heat", "model"),
    ("stepper = rk4", "stepper"),
    ("controls = 0", "controls"),
    ("nx = 2", "nx"),
    ("colour = red", "colour"),
    ("dt = fast", "dt"),
    ("just words", "key = value"),
])
def test_rejects_with_context(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "run.cfg")
    assert "run.cfg" in str(info.value) and key in str(info.value)


def test_duplicate_key():
    with pytest.raises(ConfigError):
        parse_config("dt = 0.1\ndt = 0.2")


def test_round_trip_text(tmp_path):
    cfg = parse_config("model = burgers\ncontrols_online = 5\nprune_epsilons = 0.1, 0.0")
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    again = load_config(p)
    assert again.to_text() == cfg.to_text()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_direct_construction_validates():
    with pytest.raises(ConfigError):
        ExperimentConfig(T=0.0)
