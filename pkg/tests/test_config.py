"""Config schema: defaults, typed helpers, and exact-path error reporting."""

import json

import pytest

from monde.config import ConfigError, load_config, parse_config
from monde.models import CopulaConfig, MadeConfig, PumondeConfig, UmondeConfig
from monde.training import TrainConfig


def test_empty_object_gives_full_defaults():
    cfg = parse_config({})
    assert cfg.seed == 0
    assert cfg.out == "run"
    assert cfg.dataset["source"] == "synthetic"
    assert cfg.dataset["kind"] == "sin-normal"
    assert cfg.dataset["n"] == 10000
    assert cfg.dataset["fractions"] == [0.6, 0.2, 0.2]
    assert cfg.model["family"] == "umonde"
    assert cfg.train["lr"] == 1e-3
    assert cfg.train["batch_size"] == 128
    assert cfg.eval["metrics"] == ["test-ll"]
    assert cfg.eval["q"] == 0.95


def test_defaults_are_fresh_copies():
    a = parse_config({})
    b = parse_config({})
    a.dataset["fractions"][0] = 0.9
    assert b.dataset["fractions"] == [0.6, 0.2, 0.2]


def test_checksum_stable_and_sensitive():
    assert parse_config({}).checksum() == parse_config({}).checksum()
    assert parse_config({}).checksum() != parse_config({"seed": 1}).checksum()
    # explicit defaults hash like omitted ones
    assert parse_config({"train": {"lr": 1e-3}}).checksum() == parse_config({}).checksum()


def test_generator_spec_mapping():
    cfg = parse_config({"seed": 5, "dataset": {"kind": "mixture-process", "n": 500,
                                               "fractions": [0.5, 0.25, 0.25]}})
    spec = cfg.generator_spec()
    assert spec.kind == "mixture-process"
    assert spec.n == 500
    assert spec.seed == 5
    assert spec.fractions == (0.5, 0.25, 0.25)


def test_csv_source_has_no_generator():
    cfg = parse_config({"dataset": {"source": "csv", "csv_path": "d.csv",
                                    "response_cols": [0, 1]}})
    assert cfg.generator_spec() is None


def test_train_config_mapping_offsets_seed():
    cfg = parse_config({"seed": 10, "train": {"lr": 0.01, "batch_size": 64}})
    tc = cfg.train_config()
    assert isinstance(tc, TrainConfig)
    assert tc.lr == 0.01
    assert tc.batch_size == 64
    assert tc.seed == 12


def test_model_config_per_family():
    c = parse_config({"model": {"family": "umonde",
                                "umonde": {"cov_widths": [8], "mono_widths": [4, 4]}}})
    assert c.model_config() == UmondeConfig(cov_widths=(8,), mono_widths=(4, 4))

    c = parse_config({"model": {"family": "monde-made", "made": {"m": 3}}})
    assert c.model_config() == MadeConfig(m=3, hidden_layers=2)

    c = parse_config({"model": {"family": "pumonde", "pumonde": {"hx_widths": [5]}}})
    assert c.model_config() == PumondeConfig(hx_widths=(5,), hxy_widths=(32, 32),
                                             t_widths=(32, 32))

    c = parse_config({"model": {"family": "copula-const"}})
    assert c.model_config().corr == "const"
    c = parse_config({"model": {"family": "copula-param"}})
    cc = c.model_config()
    assert isinstance(cc, CopulaConfig)
    assert cc.corr == "param"


@pytest.mark.parametrize("obj,path", [
    ({"datasett": {}}, "datasett"),
    ({"train": {"lr": "fast"}}, "train.lr"),
    ({"train": {"lr": -0.1}}, "train.lr"),
    ({"train": {"beta1": 1.0}}, "train.beta1"),
    ({"seed": True}, "seed"),
    ({"seed": -1}, "seed"),
    ({"model": {"family": "rnade"}}, "model.family"),
    ({"model": {"pumonde": {"hx_widths": [8, 0]}}}, "model.pumonde.hx_widths[1]"),
    ({"dataset": {"kind": "unknown"}}, "dataset.kind"),
    ({"dataset": {"fractions": [0.5, 0.5]}}, "dataset.fractions"),
    ({"dataset": {"fractions": [0.8, 0.3, 0.3]}}, "dataset.fractions"),
    ({"eval": {"metrics": ["test-ll", "test-ll"]}}, "eval.metrics[1]"),
    ({"eval": {"metrics": ["mi", "volatility"]}}, "eval.metrics[1]"),
    ({"eval": {"pairs": [[1, 1]]}}, "eval.pairs[0]"),
    ({"eval": {"u_min": 0.4, "u_max": 0.6, "u_n": 2}}, "eval.u_n"),
    ({"dataset": {"source": "csv"}}, "dataset.csv_path"),
    ({"dataset": {"source": "csv", "csv_path": "d.csv"}}, "dataset.response_cols"),
    ({"dataset": {"csv_path": "d.csv"}}, "dataset.csv_path"),
])
def test_error_reports_exact_field_path(obj, path):
    with pytest.raises(ConfigError) as err:
        parse_config(obj)
    assert err.value.path == path
    assert str(err.value).startswith(path + ":")


def test_u_range_bounds_keep_grid_ordered():
    # per-field bounds pin u_min < 0.5 < u_max, so the grid is always ordered
    with pytest.raises(ConfigError):
        parse_config({"eval": {"u_min": 0.51}})
    with pytest.raises(ConfigError):
        parse_config({"eval": {"u_max": 0.5}})
    cfg = parse_config({"eval": {"u_min": 0.01, "u_max": 0.99}})
    assert cfg.eval["u_min"] < cfg.eval["u_max"]


def test_load_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert err.value.path == "<root>"


def test_load_config_roundtrip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "model": {"family": "pumonde"}}))
    cfg = load_config(p)
    assert cfg.seed == 3
    assert cfg.model["family"] == "pumonde"
