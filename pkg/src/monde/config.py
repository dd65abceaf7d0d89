"""Experiment configuration.

A config is one JSON object with five blocks: `dataset`, `model`, `train`,
`eval`, plus top-level `seed` and `out`.  Every field has a default, so `{}`
is a complete config.  Validation reports the exact dotted path of the first
offending field (e.g. `train.lr: must be a number >= 0`), which the CLI maps
to exit code 2.

Dataset block rules: exactly one source.  `source: "synthetic"` draws from a
named generator (`kind`, `n`); `source: "csv"` loads a numeric table and
needs `csv_path` and `response_cols`.  With `prices: true` the CSV columns
are price series and are converted to log-loss returns before assembly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

from .data import SYNTHETIC_KINDS, GeneratorSpec
from .models import FAMILIES, CopulaConfig, MadeConfig, PumondeConfig, UmondeConfig
from .training import TrainConfig

METRICS = ("test-ll", "tail-classify", "tail-dep", "mi", "pairwise-ll")


class ConfigError(ValueError):
    """Invalid configuration; `path` holds the dotted field path."""

    def __init__(self, path: str, problem: str):
        self.path = path
        super().__init__(f"{path}: {problem}")


# ---------------------------------------------------------------------------
# field checkers: value -> canonical value, or raise with the field path


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, "must be true or false")
    return v


def _int(v, path, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, "must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(path, f"must be <= {hi}")
    return v


def _num(v, path, lo=None, hi=None, lo_open=False, hi_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, "must be a number")
    v = float(v)
    if v != v:
        raise ConfigError(path, "must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (v >= hi if hi_open else v > hi):
        raise ConfigError(path, f"must be {'<' if hi_open else '<='} {hi}")
    return v


def _string(v, path):
    if not isinstance(v, str):
        raise ConfigError(path, "must be a string")
    return v


def _choice(options):
    def check(v, path):
        if v not in options:
            raise ConfigError(path, f"must be one of {list(options)}, got {v!r}")
        return v
    return check


def _opt(check):
    def inner(v, path):
        return None if v is None else check(v, path)
    return inner


def _widths(v, path):
    if not isinstance(v, list):
        raise ConfigError(path, "must be a list of layer widths")
    return [_int(w, f"{path}[{i}]", lo=1) for i, w in enumerate(v)]


def _fractions(v, path):
    if not isinstance(v, list) or len(v) != 3:
        raise ConfigError(path, "must be [train, val, test] fractions")
    out = [_num(f, f"{path}[{i}]", lo=0.0, lo_open=True, hi=1.0) for i, f in enumerate(v)]
    if sum(out) > 1.0 + 1e-12:
        raise ConfigError(path, "fractions must sum to at most 1")
    return out


def _int_list(v, path, lo=None):
    if not isinstance(v, list):
        raise ConfigError(path, "must be a list of integers")
    return [_int(c, f"{path}[{i}]", lo=lo) for i, c in enumerate(v)]


def _pairs(v, path):
    if not isinstance(v, list):
        raise ConfigError(path, "must be a list of [i, j] index pairs")
    out = []
    for i, pair in enumerate(v):
        p = f"{path}[{i}]"
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(p, "must be a pair [i, j]")
        a = _int(pair[0], f"{p}[0]", lo=0)
        b = _int(pair[1], f"{p}[1]", lo=0)
        if a == b:
            raise ConfigError(p, "indices must differ")
        out.append([a, b])
    return out


def _float_list(v, path):
    if not isinstance(v, list):
        raise ConfigError(path, "must be a list of numbers")
    return [_num(f, f"{path}[{i}]") for i, f in enumerate(v)]


def _metrics(v, path):
    if not isinstance(v, list):
        raise ConfigError(path, f"must be a list drawn from {list(METRICS)}")
    seen = []
    for i, m in enumerate(v):
        _choice(METRICS)(m, f"{path}[{i}]")
        if m in seen:
            raise ConfigError(f"{path}[{i}]", f"duplicate metric {m!r}")
        seen.append(m)
    return seen


# ---------------------------------------------------------------------------
# schema: {block: {field: (default, checker)}}

SCHEMA = {
    "seed": (0, lambda v, p: _int(v, p, lo=0)),
    "out": ("run", _string),
    "dataset": {
        "source": ("synthetic", _choice(("synthetic", "csv"))),
        "kind": ("sin-normal", _choice(SYNTHETIC_KINDS)),
        "n": (10000, lambda v, p: _int(v, p, lo=5)),
        "fractions": ([0.6, 0.2, 0.2], _fractions),
        "csv_path": (None, _opt(_string)),
        "csv_header": (False, _bool),
        "prices": (False, _bool),
        "response_cols": ([], lambda v, p: _int_list(v, p, lo=0)),
        "lag": (1, lambda v, p: _int(v, p, lo=1)),
    },
    "model": {
        "family": ("umonde", _choice(FAMILIES)),
        "umonde": {
            "cov_widths": ([64, 64], _widths),
            "mono_widths": ([64, 64], _widths),
        },
        "made": {
            "m": (8, lambda v, p: _int(v, p, lo=1)),
            "hidden_layers": (2, lambda v, p: _int(v, p, lo=0)),
        },
        "pumonde": {
            "hx_widths": ([32, 32], _widths),
            "hxy_widths": ([32, 32], _widths),
            "t_widths": ([32, 32], _widths),
        },
        "copula": {
            "x_widths": ([32, 32], _widths),
            "xpart_widths": ([32, 32], _widths),
            "y_widths": ([32, 32], _widths),
            "corr_widths": ([32, 32], _widths),
        },
    },
    "train": {
        "lr": (1e-3, lambda v, p: _num(v, p, lo=0.0)),
        "batch_size": (128, lambda v, p: _int(v, p, lo=1)),
        "max_epochs": (200, lambda v, p: _int(v, p, lo=1)),
        "early_stop_patience": (30, lambda v, p: _int(v, p, lo=1)),
        "plateau_patience": (10, lambda v, p: _int(v, p, lo=1)),
        "beta1": (0.9, lambda v, p: _num(v, p, lo=0.0, hi=1.0, hi_open=True)),
        "beta2": (0.999, lambda v, p: _num(v, p, lo=0.0, hi=1.0, hi_open=True)),
        "eps": (1e-7, lambda v, p: _num(v, p, lo=0.0, lo_open=True)),
    },
    "eval": {
        "metrics": (["test-ll"], _metrics),
        "q": (0.95, lambda v, p: _num(v, p, lo=0.0, hi=1.0, lo_open=True, hi_open=True)),
        "q_alt": (0.90, lambda v, p: _num(v, p, lo=0.0, hi=1.0, lo_open=True, hi_open=True)),
        "pairs": ([[0, 1]], _pairs),
        "x_cond": (None, _opt(_float_list)),
        "u_min": (0.005, lambda v, p: _num(v, p, lo=0.0, hi=0.5, lo_open=True, hi_open=True)),
        "u_max": (0.995, lambda v, p: _num(v, p, lo=0.5, hi=1.0, lo_open=True, hi_open=True)),
        "u_n": (99, lambda v, p: _int(v, p, lo=3)),
        "mi_grid_n": (256, lambda v, p: _int(v, p, lo=16)),
        "mi_box_sd": (5.0, lambda v, p: _num(v, p, lo=0.0, lo_open=True)),
        "include_baseline": (True, _bool),
    },
}


def _validate(obj, schema, path):
    if not isinstance(obj, dict):
        raise ConfigError(path or "<root>", "must be an object")
    out = {}
    for key, value in obj.items():
        child = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(child, "unknown field")
        spec = schema[key]
        if isinstance(spec, dict):
            out[key] = _validate(value, spec, child)
        else:
            out[key] = spec[1](value, child)
    for key, spec in schema.items():
        if key in out:
            continue
        child = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _validate({}, spec, child)
        else:
            out[key] = json.loads(json.dumps(spec[0]))  # fresh copy of the default
    return out


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Fully defaulted, validated configuration."""

    seed: int
    out: str
    dataset: dict
    model: dict
    train: dict
    eval: dict

    def as_dict(self) -> dict:
        return {"seed": self.seed, "out": self.out, "dataset": self.dataset,
                "model": self.model, "train": self.train, "eval": self.eval}

    def checksum(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def generator_spec(self) -> GeneratorSpec | None:
        d = self.dataset
        if d["source"] != "synthetic":
            return None
        return GeneratorSpec(kind=d["kind"], n=d["n"], seed=self.seed,
                             fractions=tuple(d["fractions"]))

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(lr=t["lr"], batch_size=t["batch_size"],
                           max_epochs=t["max_epochs"],
                           early_stop_patience=t["early_stop_patience"],
                           plateau_patience=t["plateau_patience"],
                           beta1=t["beta1"], beta2=t["beta2"], eps=t["eps"],
                           seed=self.seed + 2)

    def model_config(self):
        family = self.model["family"]
        if family == "umonde":
            b = self.model["umonde"]
            return UmondeConfig(cov_widths=tuple(b["cov_widths"]),
                                mono_widths=tuple(b["mono_widths"]))
        if family == "monde-made":
            b = self.model["made"]
            return MadeConfig(m=b["m"], hidden_layers=b["hidden_layers"])
        if family == "pumonde":
            b = self.model["pumonde"]
            return PumondeConfig(hx_widths=tuple(b["hx_widths"]),
                                 hxy_widths=tuple(b["hxy_widths"]),
                                 t_widths=tuple(b["t_widths"]))
        b = self.model["copula"]
        return CopulaConfig(x_widths=tuple(b["x_widths"]),
                            xpart_widths=tuple(b["xpart_widths"]),
                            y_widths=tuple(b["y_widths"]),
                            corr="const" if family == "copula-const" else "param",
                            corr_widths=tuple(b["corr_widths"]))


def parse_config(obj: dict) -> ExperimentConfig:
    """Validate a decoded JSON object and fill every default."""
    full = _validate(obj, SCHEMA, "")
    d = full["dataset"]
    if d["source"] == "synthetic":
        if d["csv_path"] is not None:
            raise ConfigError("dataset.csv_path",
                              "must be null when source is synthetic (one data source)")
    else:
        if d["csv_path"] is None:
            raise ConfigError("dataset.csv_path", "required when source is csv")
        if not d["response_cols"]:
            raise ConfigError("dataset.response_cols", "required when source is csv")
    return ExperimentConfig(seed=full["seed"], out=full["out"], dataset=d,
                            model=full["model"], train=full["train"], eval=full["eval"])


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"not valid JSON ({exc})") from None
    return parse_config(obj)
