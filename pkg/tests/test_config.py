from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcm import Constant, Layered, Renewal
from rcm.config import SMOKE_CONFIG, ConfigError, load_config, parse_config


def test_defaults_and_required_seed():
    cfg = parse_config("[run]\nseed = 3\n")
    assert cfg.seed == 3
    assert cfg.replicas("nash") == 200
    assert cfg["nash"]["t_grid"] == (4.0, 8.0, 16.0, 32.0, 64.0)
    assert isinstance(cfg.field_spec.model, Constant)
    with pytest.raises(ConfigError, match="run.seed"):
        parse_config("[run]\nreplicas = 4\n")


def test_all_errors_reported_together():
    text = "[run]\nseed = x\n[nash]\nt_grid = 8, 4\nfoo = 1\n[bogus]\na = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    msg = " | ".join(exc.value.errors)
    assert "run.seed" in msg and "nash.t_grid" in msg and "nash.foo" in msg and "[bogus]" in msg
    assert len(exc.value.errors) == 4


@pytest.mark.parametrize("extra, key", [
    ("[kernel]\ndirection = diag\n", "direction"),
    ("[kernel]\nanchor = 1, 2\n", "anchor"),
    ("[kernel]\ns = 2\nt = 1\n", "kernel.t"),
    ("[gradient]\np = 3\n", "gradient.p"),
    ("[gradient]\neps = 1.5\n", "eps"),
    ("[field]\nmodel = renewal\nlaw = two_point\nlaw_params = 0.5, 2\n", "field"),
    ("[field]\nmodel = spiral\n", "field"),
    ("[run]\nreplicas = 0\n", "run.replicas"),
    ("[entropy]\ndelta_pairs = 1-4\n", "delta_pairs"),
])
def test_semantic_errors(extra, key):
    text = "[run]\nseed = 1\n" + extra
    # a second [run] section would be a parse error; merge instead
    if extra.startswith("[run]"):
        text = "[run]\nseed = 1\n" + extra.split("\n", 1)[1]
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


def test_malformed_file():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("seed = 1\n")


def test_field_models():
    cfg = parse_config("[run]\nseed = 1\n[field]\nmodel = renewal\nlaw = two_point\nlaw_params = 1; 10\n"
                       "lambda = 0.5\ndimension = 2\n")
    m = cfg.field_spec.model
    assert isinstance(m, Renewal) and m.rate == 0.5 and m.law.params == (1.0, 10.0)
    assert cfg.spec_in(3).dimension == 3
    lay = parse_config("[run]\nseed = 1\n[field]\nmodel = layered\nlaw_params = 2.5\ndimension = 2\n")
    assert isinstance(lay.field_spec.model, Layered)


def test_inline_comments_and_case():
    cfg = parse_config("[run]\nseed = 1   # master seed\n[field]\nC2 = 1.0\n")
    assert cfg.seed == 1


def test_smoke_config_round_trip(tmp_path):
    cfg = parse_config(SMOKE_CONFIG)
    again = parse_config(cfg.emit())
    assert again.values == cfg.values
    assert again.digest() == cfg.digest()
    p = tmp_path / "c.ini"
    p.write_text(cfg.emit())
    assert load_config(p).digest() == cfg.digest()


@settings(max_examples=40)
@given(st.integers(0, 2**40), st.lists(st.floats(0.5, 1e4, allow_nan=False), min_size=1, max_size=6, unique=True),
       st.integers(1, 1000))
def test_emit_parse_is_identity(seed, grid, reps):
    grid = sorted(grid)
    text = f"[run]\nseed = {seed}\nreplicas = {reps}\n[nash]\nt_grid = {', '.join(repr(g) for g in grid)}\n"
    cfg = parse_config(text)
    assert cfg["nash"]["t_grid"] == tuple(grid)
    assert parse_config(cfg.emit()).values == cfg.values


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "smoke.ini").digest() == parse_config(SMOKE_CONFIG).digest()
    for p in root.glob("*.ini"):
        load_config(p)
