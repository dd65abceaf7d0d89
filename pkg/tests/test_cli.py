"""End-to-end CLI tests: subcommands, exit codes, reproducibility."""

import json
import os

import numpy as np
import pytest

from monde import cli


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and k in out else v
    return out


def _write_cfg(path, over=None):
    base = {
        "seed": 0,
        "dataset": {"kind": "sin-normal", "n": 400},
        "model": {"family": "umonde",
                  "umonde": {"cov_widths": [4], "mono_widths": [4]}},
        "train": {"max_epochs": 3, "batch_size": 64},
        "eval": {"metrics": ["test-ll"]},
    }
    obj = _merge(base, over or {})
    path.write_text(json.dumps(obj))
    return obj


@pytest.fixture(scope="module")
def copula_run(tmp_path_factory):
    """One tiny trained copula model on a 2-D response, shared by the
    metric-only subcommand tests."""
    root = tmp_path_factory.mktemp("copula")
    cfg_path = root / "cfg.json"
    _write_cfg(cfg_path, {
        "out": str(root / "run"),
        "dataset": {"kind": "mixture-process", "n": 1000},
        "model": {"family": "copula-const",
                  "copula": {"x_widths": [8], "xpart_widths": [8],
                             "y_widths": [8], "corr_widths": [8]}},
        "train": {"max_epochs": 400, "early_stop_patience": 400,
                  "batch_size": 128},
        "eval": {"metrics": ["test-ll"], "pairs": [[0, 1]],
                 "u_min": 0.05, "u_max": 0.95, "u_n": 21, "mi_grid_n": 64},
    })
    assert cli.main(["train", "--config", str(cfg_path)]) == 0
    return cfg_path, root / "run"


def test_generate_writes_csv_and_manifest(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "d")})
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    lines = (tmp_path / "d" / "dataset.csv").read_text().splitlines()
    assert lines[0] == "x0,y0,split"
    assert len(lines) == 401
    splits = {ln.rsplit(",", 1)[1] for ln in lines[1:]}
    assert splits == {"train", "val", "test"}
    man = json.loads((tmp_path / "d" / "dataset.json").read_text())
    assert man["n"] == 400
    assert man["sizes"]["train"] == 240
    assert "timestamp" not in json.dumps(man)


def test_generate_seed_flag_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "a")})
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    assert cli.main(["generate", "--config", str(cfg), "--seed", "1",
                     "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "dataset.csv").read_bytes()
    b = (tmp_path / "b" / "dataset.csv").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "b" / "dataset.json").read_text())["seed"] == 1


def test_train_writes_artifacts(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "run")})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    out = tmp_path / "run"
    for name in ("model.json", "history.csv", "manifest.json", "test_ll.json"):
        assert (out / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 0
    assert len(man["config_checksum"]) == 64
    assert man["training"]["epochs"] >= 1
    assert set(man["artifacts"]) == {"model.json", "history.csv",
                                     "manifest.json", "test_ll.json"}
    assert "timestamp" not in json.dumps(man)
    header = (out / "history.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_ll,batch_size,event"


def test_train_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "run")})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    out = tmp_path / "run"
    first = {f: (out / f).read_bytes() for f in os.listdir(out)}
    assert cli.main(["train", "--config", str(cfg)]) == 0
    second = {f: (out / f).read_bytes() for f in os.listdir(out)}
    assert first == second


def test_eval_reproduces_training_metric(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "run")})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    trained = json.loads((tmp_path / "run" / "test_ll.json").read_text())
    assert cli.main(["eval", "--config", str(cfg),
                     "--model", str(tmp_path / "run" / "model.json"),
                     "--out", str(tmp_path / "run2")]) == 0
    again = json.loads((tmp_path / "run2" / "test_ll.json").read_text())
    assert abs(again["mean_loglik"] - trained["mean_loglik"]) <= 1e-12
    assert again["n"] == trained["n"]


def test_config_error_exit_2_names_field(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"lr": "fast"}}))
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert "train.lr" in capsys.readouterr().err


def test_unknown_family_exit_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"family": "rnade"}}))
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert "model.family" in capsys.readouterr().err


def test_missing_config_exit_4(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 4


def test_missing_model_exit_4(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "o")})
    assert cli.main(["eval", "--config", str(cfg),
                     "--model", str(tmp_path / "no_model.json")]) == 4


def test_truncated_model_exit_4(tmp_path):
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "run")})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    model = tmp_path / "run" / "model.json"
    model.write_bytes(model.read_bytes()[:100])
    assert cli.main(["eval", "--config", str(cfg), "--model", str(model)]) == 4


def test_family_mismatch_exit_4(tmp_path, copula_run):
    _, run = copula_run
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "o"),
                     "dataset": {"kind": "mv-nonlinear", "n": 1000}})
    assert cli.main(["eval", "--config", str(cfg),
                     "--model", str(run / "model.json")]) == 4


def test_training_diverged_exit_3(tmp_path, monkeypatch, capsys):
    from monde.training import TrainingDiverged

    def boom(*a, **k):
        raise TrainingDiverged("batch size at cap twice")

    monkeypatch.setattr(cli, "train", boom)
    cfg = tmp_path / "cfg.json"
    _write_cfg(cfg, {"out": str(tmp_path / "run")})
    assert cli.main(["train", "--config", str(cfg)]) == 3
    assert "diverged" in capsys.readouterr().err


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as err:
        cli.main([])
    assert err.value.code == 2


def test_tail_classify_subcommand(copula_run, tmp_path):
    cfg_path, run = copula_run
    out = tmp_path / "tc"
    assert cli.main(["tail-classify", "--config", str(cfg_path),
                     "--model", str(run / "model.json"),
                     "--out", str(out)]) == 0
    res = json.loads((out / "tail_classify.json").read_text())
    assert res["q"]["q"] == 0.95
    assert res["q_alt"]["q"] == 0.90
    for tag in ("q", "q_alt"):
        assert 0.0 <= res[tag]["auc"] <= 1.0
        assert res[tag]["positives"] >= 1
    assert res["q_alt"]["positives"] > res["q"]["positives"]
    assert (out / "tail_950_roc.csv").exists()
    assert (out / "tail_900_pr.csv").exists()


def test_tail_dep_subcommand(copula_run, tmp_path):
    cfg_path, run = copula_run
    out = tmp_path / "td"
    assert cli.main(["tail-dep", "--config", str(cfg_path),
                     "--model", str(run / "model.json"),
                     "--out", str(out)]) == 0
    res = json.loads((out / "tail_dep.json").read_text())
    assert res["pairs"][0]["i"] == 0 and res["pairs"][0]["j"] == 1
    model_csv = (out / "tail_dep_model_0_1.csv").read_text().splitlines()
    emp_csv = (out / "tail_dep_empirical_0_1.csv").read_text().splitlines()
    assert model_csv[0] == "u,lambda,side,empty"
    assert len(model_csv) == 22 and len(emp_csv) == 22
    lam = [float(ln.split(",")[1]) for ln in model_csv[1:]]
    assert all(0.0 <= v <= 1.0 for v in lam)


def test_mi_subcommand(copula_run, tmp_path):
    cfg_path, run = copula_run
    out = tmp_path / "mi"
    assert cli.main(["mi", "--config", str(cfg_path),
                     "--model", str(run / "model.json"),
                     "--out", str(out)]) == 0
    res = json.loads((out / "mi.json").read_text())
    mi = res["pairs"][0]["mi"]
    assert np.isfinite(mi) and mi >= -1e-6


def test_pairwise_ll_subcommand(copula_run, tmp_path):
    cfg_path, run = copula_run
    out = tmp_path / "pw"
    assert cli.main(["pairwise-ll", "--config", str(cfg_path),
                     "--model", str(run / "model.json"),
                     "--out", str(out)]) == 0
    res = json.loads((out / "pairwise_ll.json").read_text())
    assert set(res["names"]) == {"model", "baseline"}
    # the win table always covers every response pair
    assert res["pairs"] == [[0, 1], [0, 2], [1, 2]]
    wins = np.array(res["wins"])
    assert wins.shape == (2, 2)
    assert wins.sum() <= 3  # three pairs, at most one strict winner each
    assert (out / "pairwise_ll.csv").exists()


def test_pairwise_ll_name_collision(copula_run, tmp_path):
    cfg_path, run = copula_run
    out = tmp_path / "pw2"
    assert cli.main(["pairwise-ll", "--config", str(cfg_path),
                     "--model", str(run / "model.json"),
                     "--model", str(run / "model.json"),
                     "--out", str(out)]) == 0
    res = json.loads((out / "pairwise_ll.json").read_text())
    assert set(res["names"]) == {"model", "model_2", "baseline"}
