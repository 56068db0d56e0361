from pathlib import Path

import pytest

from distill.config import (
    PAPER_SCALE, ConfigError, SDSConfig, dump_config, load_config, paper_scale, parse_config,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_valid():
    cfg = SDSConfig()
    assert cfg.optim.learning_rate == 0.01
    assert cfg.run.total_iters == 2000 and cfg.anneal.horizon == 1600
    assert cfg.guidance.rescale_phi == 0.5
    assert cfg.sds.weighting == "sigma_squared" and cfg.sds.view_reduce == "sum"


def test_dump_parse_roundtrip():
    cfg = SDSConfig().with_overrides({"run.seed": "5", "freeu.at_small_t": "1, 2, 3, 4", "guidance.rescale": "no"})
    assert parse_config(dump_config(cfg)) == cfg


def test_empty_text_is_defaults():
    assert parse_config("") == SDSConfig()


@pytest.mark.parametrize("text, needle", [
    ("[run]\nsede = 3\n", "sede"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[run]\nseed = three\n", "run.seed"),
    ("[guidance]\nmode = loud\n", "guidance.mode"),
    ("[optim]\nlearning_rate = 0\n", "learning_rate"),
    ("[guidance]\nrescale = maybe\n", "guidance.rescale"),
    ("[freeu]\nat_large_t = 1, 2\n", "at_large_t"),
    ("no section header\n", "malformed"),
])
def test_errors_name_the_problem(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_override_errors():
    with pytest.raises(ConfigError):
        SDSConfig().with_overrides({"nope.seed": "1"})
    with pytest.raises(ConfigError):
        SDSConfig().with_overrides({"run.nope": "1"})


def test_inline_comments():
    assert parse_config("[run]\nseed = 4  # comment\n").run.seed == 4


def test_paper_scale():
    cfg = paper_scale(SDSConfig())
    assert cfg.run.total_iters == 10000 and cfg.anneal.horizon == 8000
    assert (cfg.render.res_low, cfg.render.res_high, cfg.render.res_switch) == (32, 100, 5000)
    assert set(PAPER_SCALE) <= {f"{s}.{k}" for s in ("run", "anneal", "render", "optim") for k in
                                 ("total_iters", "horizon", "res_low", "res_high", "res_switch", "learning_rate")}


@pytest.mark.parametrize("name", ["default.ini", "smoke.ini", "trend.ini"])
def test_shipped_configs_load(name):
    load_config(CONFIGS / name)


def test_shipped_default_matches_code():
    assert load_config(CONFIGS / "default.ini") == SDSConfig()


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.ini")
