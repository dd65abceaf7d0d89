"""Command line interface.

Subcommands: `generate` (write a dataset), `train` (fit a model and run the
configured metrics), `eval` (test log-likelihood of a saved model), and the
metric-only commands `tail-classify`, `tail-dep`, `mi`, `pairwise-ll`, which
evaluate saved models without retraining.

Exit codes: 0 success, 2 configuration error (message names the exact field),
3 training diverged, 4 I/O or model-file error.

Seed layout: dataset generation uses `seed`, parameter init `seed + 1`,
training `seed + 2`, so runs are reproducible end to end.  Artifacts carry
no timestamps; rerunning a command with the same config and seed rewrites
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, load_config, parse_config
from .data import (CsvFormatError, EmptyInput, NonPositivePrice,
                   assemble_classification_dataset, gen_synthetic, load_csv,
                   log_losses)
from .metrics import (empirical_tail_dep, model_pair_pdf, model_tail_dep,
                      mutual_information_quadrature, pairwise_ll_wins, pr_ap,
                      roc_auc, sd_box, tail_labels_scores)
from .models import DiagonalGaussian, build_model
from .persist import FORMAT_VERSION, PersistError, load_model, save_model
from .training import TrainingDiverged, evaluate_split, train


# ---------------------------------------------------------------------------
# shared plumbing


def _config_from_args(args):
    cfg = load_config(args.config)
    obj = cfg.as_dict()
    if getattr(args, "seed", None) is not None:
        obj["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        obj["out"] = args.out
    return parse_config(obj)


def _build_dataset(cfg):
    spec = cfg.generator_spec()
    if spec is not None:
        return gen_synthetic(spec)
    d = cfg.dataset
    R = load_csv(d["csv_path"], header=d["csv_header"])
    if d["prices"]:
        R = log_losses(R)
    return assemble_classification_dataset(
        R, d["response_cols"], lag=d["lag"], fractions=tuple(d["fractions"]),
        seed=cfg.seed, provenance=f"csv:{os.path.basename(d['csv_path'])}")


def _out_dir(cfg) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _check_dims(model, dataset):
    if model.d_x != dataset.d_x or model.d_y != dataset.d_y:
        raise ConfigError("dataset", f"model expects d_x={model.d_x}, "
                          f"d_y={model.d_y}; dataset has d_x={dataset.d_x}, "
                          f"d_y={dataset.d_y}")


def _eval_pairs(cfg, d_y):
    pairs = cfg.eval["pairs"]
    for k, (i, j) in enumerate(pairs):
        if i >= d_y or j >= d_y:
            raise ConfigError(f"eval.pairs[{k}]",
                              f"index out of range for {d_y} response dims")
    return [(i, j) for i, j in pairs]


def _x_cond(cfg, dataset) -> np.ndarray:
    xc = cfg.eval["x_cond"]
    if xc is None:
        X_train = dataset.split("train")[0]
        return X_train.mean(axis=0) if dataset.d_x else np.zeros(0)
    xc = np.asarray(xc, dtype=np.float64)
    if xc.size != dataset.d_x:
        raise ConfigError("eval.x_cond",
                          f"needs {dataset.d_x} values, got {xc.size}")
    return xc


def _u_grid(cfg) -> np.ndarray:
    ev = cfg.eval
    return np.linspace(ev["u_min"], ev["u_max"], ev["u_n"])


# ---------------------------------------------------------------------------
# metric runners (shared between `train` and the metric-only subcommands)


def _metric_test_ll(model, dataset, cfg, out):
    mean, se = evaluate_split(model, dataset, "test")
    _write_json(os.path.join(out, "test_ll.json"),
                {"split": "test", "mean_loglik": mean, "stderr": se,
                 "n": dataset.sizes()["test"]})
    print(f"test mean log-likelihood {mean:.6f} (stderr {se:.6f})")


def _metric_tail_classify(model, dataset, cfg, out):
    res = {}
    for tag, q in (("q", cfg.eval["q"]), ("q_alt", cfg.eval["q_alt"])):
        labels, scores = tail_labels_scores(model, dataset, q)
        roc = roc_auc(labels, scores)
        pr = pr_ap(labels, scores)
        stem = f"tail_{int(round(q * 1000)):03d}"
        roc.to_csv(os.path.join(out, f"{stem}_roc.csv"))
        pr.to_csv(os.path.join(out, f"{stem}_pr.csv"))
        res[tag] = {"q": q, "auc": roc.summary, "ap": pr.summary,
                    "positives": int(labels.sum()), "n": int(labels.size)}
        print(f"tail q={q:g}: auc {roc.summary:.4f} ap {pr.summary:.4f} "
              f"({int(labels.sum())}/{labels.size} positives)")
    _write_json(os.path.join(out, "tail_classify.json"), res)


def _metric_tail_dep(model, dataset, cfg, out):
    us = _u_grid(cfg)
    x0 = _x_cond(cfg, dataset)
    Y_test = dataset.split("test")[1]
    rows = []
    for i, j in _eval_pairs(cfg, dataset.d_y):
        g = model_tail_dep(model, i, j, x0, us=us)
        g.to_csv(os.path.join(out, f"tail_dep_model_{i}_{j}.csv"))
        e = empirical_tail_dep(Y_test[:, i], Y_test[:, j], us=us)
        e.to_csv(os.path.join(out, f"tail_dep_empirical_{i}_{j}.csv"))
        lo, hi = float(g.lam[0]), float(g.lam[-1])
        rows.append({"i": i, "j": j, "model_lambda_lo": lo,
                     "model_lambda_hi": hi})
        print(f"tail dep ({i},{j}): model lambda {lo:.4f} @u={us[0]:g}, "
              f"{hi:.4f} @u={us[-1]:g}")
    _write_json(os.path.join(out, "tail_dep.json"),
                {"pairs": rows, "x_cond": [float(v) for v in x0]})


def _metric_mi(model, dataset, cfg, out):
    x0 = _x_cond(cfg, dataset)
    rows = []
    for i, j in _eval_pairs(cfg, dataset.d_y):
        box = sd_box(dataset.stats, i, j, k=cfg.eval["mi_box_sd"])
        mi = mutual_information_quadrature(model_pair_pdf(model, i, j, x0),
                                           box, n=cfg.eval["mi_grid_n"])
        rows.append({"i": i, "j": j, "mi": mi,
                     "box": [list(box[0]), list(box[1])]})
        print(f"mi ({i},{j}): {mi:.6f}")
    _write_json(os.path.join(out, "mi.json"),
                {"pairs": rows, "x_cond": [float(v) for v in x0]})


def _metric_pairwise(models: dict, dataset, cfg, out):
    if cfg.eval["include_baseline"] and "baseline" not in models:
        models = dict(models)
        models["baseline"] = DiagonalGaussian.fit(dataset.split("train")[1])
    wt = pairwise_ll_wins(models, dataset)
    wt.to_csv(os.path.join(out, "pairwise_ll.csv"))
    _write_json(os.path.join(out, "pairwise_ll.json"),
                {"names": list(wt.names),
                 "pairs": [[int(a), int(b)] for a, b in wt.pairs],
                 "means": np.asarray(wt.means).tolist(),
                 "wins": np.asarray(wt.wins).tolist()})
    for a, name in enumerate(wt.names):
        won = int(np.asarray(wt.wins)[a].sum())
        print(f"pairwise ll: {name} wins {won} comparisons")


_METRIC_RUNNERS = {
    "test-ll": _metric_test_ll,
    "tail-classify": _metric_tail_classify,
    "tail-dep": _metric_tail_dep,
    "mi": _metric_mi,
}


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    ds = _build_dataset(cfg)
    out = _out_dir(cfg)
    names = {}
    for split, ix in ds.idx.items():
        for row in ix:
            names[int(row)] = split
    csv_path = os.path.join(out, "dataset.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        cols = [f"x{k}" for k in range(ds.d_x)] + [f"y{k}" for k in range(ds.d_y)]
        fh.write(",".join(cols + ["split"]) + "\n")
        for r in range(ds.X.shape[0]):
            vals = [f"{v:.17g}" for v in ds.X[r]] + [f"{v:.17g}" for v in ds.Y[r]]
            fh.write(",".join(vals + [names.get(r, "unused")]) + "\n")
    _write_json(os.path.join(out, "dataset.json"), ds.manifest())
    print(f"wrote {csv_path} ({ds.X.shape[0]} rows, d_x={ds.d_x}, d_y={ds.d_y})")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    ds = _build_dataset(cfg)
    model = build_model(cfg.model["family"], ds.d_x, ds.d_y, ds.stats,
                        config=cfg.model_config(), seed=cfg.seed + 1)
    hist = train(model, ds, cfg.train_config())
    out = _out_dir(cfg)
    save_model(model, os.path.join(out, "model.json"))
    hist.to_csv(os.path.join(out, "history.csv"))
    for name in cfg.eval["metrics"]:
        if name == "pairwise-ll":
            _metric_pairwise({"model": model}, ds, cfg, out)
        else:
            _METRIC_RUNNERS[name](model, ds, cfg, out)
    manifest = {
        "config": cfg.as_dict(),
        "config_checksum": cfg.checksum(),
        "seed": cfg.seed,
        "dataset": ds.manifest(),
        "model_format_version": FORMAT_VERSION,
        "training": {"epochs": len(hist.rows), "best_epoch": hist.best_epoch,
                     "best_val_ll": hist.best_val_ll,
                     "restarts": hist.restarts},
        "artifacts": sorted(f for f in os.listdir(out) if f != "manifest.json")
                     + ["manifest.json"],
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"trained {model.family}: best val log-likelihood "
          f"{hist.best_val_ll:.6f} at epoch {hist.best_epoch} "
          f"({len(hist.rows)} epochs, {hist.restarts} restarts)")
    return 0


def _loaded_model_and_data(args, cfg):
    model = load_model(args.model, family=cfg.model["family"])
    ds = _build_dataset(cfg)
    _check_dims(model, ds)
    return model, ds


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    model, ds = _loaded_model_and_data(args, cfg)
    _metric_test_ll(model, ds, cfg, _out_dir(cfg))
    return 0


def cmd_tail_classify(args) -> int:
    cfg = _config_from_args(args)
    model, ds = _loaded_model_and_data(args, cfg)
    _metric_tail_classify(model, ds, cfg, _out_dir(cfg))
    return 0


def cmd_tail_dep(args) -> int:
    cfg = _config_from_args(args)
    model, ds = _loaded_model_and_data(args, cfg)
    _metric_tail_dep(model, ds, cfg, _out_dir(cfg))
    return 0


def cmd_mi(args) -> int:
    cfg = _config_from_args(args)
    model, ds = _loaded_model_and_data(args, cfg)
    _metric_mi(model, ds, cfg, _out_dir(cfg))
    return 0


def cmd_pairwise_ll(args) -> int:
    cfg = _config_from_args(args)
    ds = _build_dataset(cfg)
    models = {}
    for path in args.model:
        model = load_model(path)
        _check_dims(model, ds)
        base = os.path.splitext(os.path.basename(path))[0]
        name, k = base, 2
        while name in models:
            name = f"{base}_{k}"
            k += 1
        models[name] = model
    _metric_pairwise(models, ds, cfg, _out_dir(cfg))
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="monde",
        description="Train and evaluate monotone-network conditional "
                    "distribution estimators.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, model="none"):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", default=None, help="output dir (overrides config)")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed (overrides config)")
        if model == "one":
            sp.add_argument("--model", required=True, help="saved model path")
        elif model == "many":
            sp.add_argument("--model", action="append", required=True,
                            help="saved model path (repeatable)")
        sp.set_defaults(func=fn)
        return sp

    add("generate", cmd_generate, "write dataset.csv and dataset.json")
    add("train", cmd_train, "fit a model, save it, run configured metrics")
    add("eval", cmd_eval, "test log-likelihood of a saved model", model="one")
    add("tail-classify", cmd_tail_classify,
        "ROC/PR for threshold-exceedance classification", model="one")
    add("tail-dep", cmd_tail_dep,
        "model and empirical tail-dependence curves", model="one")
    add("mi", cmd_mi, "pairwise mutual information by quadrature", model="one")
    add("pairwise-ll", cmd_pairwise_ll,
        "bivariate log-likelihood win table across models", model="many")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (CsvFormatError, EmptyInput, NonPositivePrice) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 4
    except PersistError as exc:
        print(f"model file error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
