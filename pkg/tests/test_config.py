from pathlib import Path

import pytest

from vflow.config import ConfigError, build_model, load_config, parse_config

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_parse_and_build(path):
    cfg = load_config(path)
    model = build_model(cfg)
    assert model.d_x == cfg.model.d_x and model.d_z == cfg.model.d_z
    assert (model.r is not None) == (cfg.data.kind == "quantized")


def test_headline_configs():
    names = {p.stem for p in CONFIGS}
    assert {"toy_vflow_3step_d10", "toy_glow_3step", "check_theory"} <= names
    root = Path(CONFIGS[0]).parent
    cfg = load_config(root / "toy_vflow_3step_d10.toml")
    # three steps in total: two in p, one in q
    assert cfg.model.d_x + cfg.model.d_z == 10 and cfg.model.p_steps + cfg.model.q_steps == 3
    assert load_config(root / "toy_glow_3step.toml").model.p_steps == 3
    assert cfg.train.batch_size == 64 and cfg.train.iterations == 100_000


def test_defaults():
    cfg = parse_config("")
    assert cfg.seed is None and cfg.train.clip == 100.0 and cfg.train.schedule.rate == 1e-3


def test_unknown_key_reports_line():
    text = "seed = 1\n\n[model]\nd_x = 2\nwidth = 3\n"
    with pytest.raises(ConfigError, match=r"cfg.toml:5: unknown key 'width'"):
        parse_config(text, "cfg.toml")


def test_unknown_table_reports_line():
    with pytest.raises(ConfigError, match=r":2: unknown key 'optimizer'"):
        parse_config("seed = 1\n[optimizer]\nlr = 1\n", "c")


def test_unknown_schedule_key():
    with pytest.raises(ConfigError, match=r":3: unknown key 'gamma'"):
        parse_config("[train]\n[train.schedule]\ngamma = 0.5\n", "c")


def test_type_errors_report_line():
    with pytest.raises(ConfigError, match=r":3: model.hidden must be int"):
        parse_config("[model]\nd_x = 2\nhidden = \"big\"\n", "c")
    with pytest.raises(ConfigError, match=r":2:"):
        parse_config("[train]\nbatch_size = 0\n", "c")


def test_syntax_error_has_line():
    with pytest.raises(ConfigError, match=r"c:2: TOML syntax error"):
        parse_config("seed = 1\nmodel = [\n", "c")


def test_semantic_validation():
    with pytest.raises(ConfigError, match="quantized"):
        parse_config("[data]\nkind = \"quantized\"\n")
    with pytest.raises(ConfigError, match="coupling"):
        parse_config("[model]\ncoupling = \"spline\"\n")
    with pytest.raises(ConfigError, match="at least 2"):
        parse_config("[model]\nd_x = 1\n")


def test_clip_zero_disables():
    assert parse_config("[train]\nclip = 0\n").train.clip is None


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.toml")
