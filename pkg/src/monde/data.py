"""Synthetic data generators, returns preprocessing, CSV ingestion, and the
split/standardize pipeline that produces training-ready datasets."""

from __future__ import annotations

import csv as _csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .models import StandardStats

__all__ = [
    "SYNTHETIC_KINDS", "GeneratorSpec", "Dataset", "EmptyInput",
    "NonPositivePrice", "CsvFormatError", "InvalidFractions", "gen_synthetic",
    "split_standardize", "log_losses", "percentile_threshold",
    "assemble_classification_dataset", "load_csv",
]

SYNTHETIC_KINDS = ("sin-normal", "sin-t", "inv-sin-normal", "inv-sin-t",
                   "mv-nonlinear", "mixture-process")


class EmptyInput(ValueError):
    pass


class NonPositivePrice(ValueError):
    pass


class InvalidFractions(ValueError):
    pass


class CsvFormatError(ValueError):
    """Parse failure carrying 1-based row/col coordinates."""

    def __init__(self, message: str, row: int, col: int):
        super().__init__(f"{message} (row {row}, col {col})")
        self.row = row
        self.col = col


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    seed: int = 0
    fractions: tuple = (0.6, 0.2, 0.2)


@dataclass
class Dataset:
    """Raw covariate/response arrays plus split indices and the train-split
    standardization stats used everywhere downstream."""

    X: np.ndarray
    Y: np.ndarray
    idx: dict
    stats: StandardStats
    provenance: str = ""
    seed: object = None
    fractions: tuple = ()
    dropped_x: tuple = ()
    dropped_y: tuple = ()

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    def split(self, name: str):
        """Original-unit (X, Y) rows of one split."""
        ix = self.idx[name]
        return self.X[ix], self.Y[ix]

    def standardized(self, name: str):
        X, Y = self.split(name)
        return self.stats.std_x(X), self.stats.std_y(Y)

    def sizes(self) -> dict:
        return {k: len(v) for k, v in self.idx.items()}

    def manifest(self) -> dict:
        return {
            "provenance": self.provenance,
            "seed": self.seed,
            "n": int(self.X.shape[0]),
            "d_x": self.d_x,
            "d_y": self.d_y,
            "fractions": list(self.fractions),
            "sizes": self.sizes(),
            "dropped_x": list(self.dropped_x),
            "dropped_y": list(self.dropped_y),
        }


# ---------------------------------------------------------------------------
# synthetic generators


_MV_SIGMA = np.array([[16.0, 8.4], [8.4, 9.0]])
_MIX_P = np.array([[1.0, 0.8, 0.1], [0.8, 1.0, -0.5], [0.1, -0.5, 1.0]])
_MIX_SD = np.array([0.4, 0.5, 0.8])
_MIX_SIGMA = _MIX_SD[:, None] * _MIX_P * _MIX_SD[None, :]


def _sin_loc(x):
    return np.sin(4.0 * x) + 0.5 * x


def _raw_synthetic(kind: str, n: int, rng: np.random.Generator):
    if kind in ("sin-normal", "sin-t", "inv-sin-normal", "inv-sin-t"):
        u = rng.uniform(-1.5, 1.5, size=(n, 1))
        if kind.endswith("sin-normal"):
            v = _sin_loc(u) + 0.2 * rng.standard_normal((n, 1))
        else:
            v = _sin_loc(u) + 0.2 * rng.standard_t(3, size=(n, 1))
        return (v, u) if kind.startswith("inv-") else (u, v)
    if kind == "mv-nonlinear":
        x = rng.uniform(-10.0, 10.0, size=(n, 1))
        mean = np.hstack([0.1 * np.sqrt(np.abs(x)) + x - 5.0,
                          10.0 * np.sin(3.0 * x)])
        y = mean + rng.multivariate_normal(np.zeros(2), _MV_SIGMA, size=n)
        return x, y
    if kind == "mixture-process":
        c = rng.random(n) < 0.5
        mu = np.where(c[:, None], [2.0, 5.0], [-2.0, -3.0])
        x = mu + rng.standard_normal((n, 2))
        z = rng.multivariate_normal(np.zeros(3), _MIX_SIGMA, size=n)
        w = rng.chisquare(2.0, size=n)
        scale = np.where(c, np.sqrt(2.0 / w), 1.0)
        return x, z * scale[:, None]
    raise ValueError(f"unknown generator kind {kind!r}")


def gen_synthetic(spec: GeneratorSpec) -> Dataset:
    """Sample one of the synthetic processes and return it split and
    standardized. Generation and shuffling use independent streams derived
    from the one seed."""
    if spec.kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown generator kind {spec.kind!r}")
    if spec.n < 1:
        raise EmptyInput("need at least one row")
    X, Y = _raw_synthetic(spec.kind, spec.n, np.random.default_rng([spec.seed, 0]))
    ds = split_standardize(X, Y, spec.fractions, seed=[spec.seed, 1],
                           provenance=f"{spec.kind}(n={spec.n},seed={spec.seed})")
    ds.seed = spec.seed
    return ds


# ---------------------------------------------------------------------------
# splitting and standardization


def _train_stats(A: np.ndarray):
    if A.shape[1] == 0:
        return np.zeros(0), np.ones(0), []
    mean = A.mean(axis=0)
    sd = A.std(axis=0)
    dropped = [j for j in range(A.shape[1]) if sd[j] == 0.0]
    return mean, sd, dropped


def split_standardize(X, Y, fractions=(0.6, 0.2, 0.2), seed=0,
                      provenance="") -> Dataset:
    """Shuffle rows, cut train/val/test of sizes int(n*f), and z-score both
    X and Y columns by train-split moments. Constant train columns are
    dropped with a warning; sizes may leave a remainder unassigned."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y row counts differ")
    n = X.shape[0]
    if n == 0:
        raise EmptyInput("no rows")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise InvalidFractions(f"need three positive fractions, got {fractions}")
    if sum(fractions) > 1.0 + 1e-12:
        raise InvalidFractions(f"fractions sum to {sum(fractions)} > 1")
    sizes = [int(n * f) for f in fractions]
    if sizes[0] < 1:
        raise InvalidFractions("train split is empty")
    perm = np.random.default_rng(seed).permutation(n)
    cuts = np.cumsum([0] + sizes)
    idx = {name: perm[a:b] for name, a, b in
           zip(("train", "val", "test"), cuts[:-1], cuts[1:])}

    mx, sx, drop_x = _train_stats(X[idx["train"]])
    my, sy, drop_y = _train_stats(Y[idx["train"]])
    if drop_x or drop_y:
        warnings.warn("dropping constant train column(s): "
                      f"X{drop_x} Y{drop_y}", UserWarning, stacklevel=2)
        keep_x = [j for j in range(X.shape[1]) if j not in drop_x]
        keep_y = [j for j in range(Y.shape[1]) if j not in drop_y]
        X, Y = X[:, keep_x], Y[:, keep_y]
        mx, sx = mx[keep_x], sx[keep_x]
        my, sy = my[keep_y], sy[keep_y]
    stats = StandardStats(mx, sx, my, sy)
    return Dataset(X, Y, idx, stats, provenance=provenance, seed=seed,
                   fractions=fractions, dropped_x=tuple(drop_x),
                   dropped_y=tuple(drop_y))


# ---------------------------------------------------------------------------
# returns preprocessing


def log_losses(prices: np.ndarray) -> np.ndarray:
    """Per-step log losses: row t is log p(t-1) - log p(t), positive when
    the price falls. Output has one row fewer than the input; a 1-D series
    stays 1-D."""
    P = np.asarray(prices, dtype=np.float64)
    if P.size == 0:
        raise EmptyInput("no prices")
    if P.ndim == 1:
        P = P[:, None]
        flat = True
    else:
        flat = False
    if np.any(P <= 0.0) or not np.all(np.isfinite(P)):
        raise NonPositivePrice("prices must be positive and finite")
    L = np.log(P)
    out = L[:-1] - L[1:]
    return out[:, 0] if flat else out


def percentile_threshold(column: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the sorted value at 1-based index
    ceil(q*n)."""
    col = np.asarray(column, dtype=np.float64).ravel()
    if col.size == 0:
        raise EmptyInput("empty column")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must be in (0,1), got {q}")
    k = int(np.ceil(q * col.size))
    return float(np.sort(col)[k - 1])


def assemble_classification_dataset(returns: np.ndarray, response_cols,
                                    lag: int = 1,
                                    fractions=(0.6, 0.2, 0.2), seed=0,
                                    provenance="") -> Dataset:
    """Build a supervised dataset from a returns matrix: responses are the
    selected contemporaneous columns; covariates are the remaining
    contemporaneous columns followed by the full return vectors at lags
    1..lag. Keeps n-lag rows."""
    R = np.atleast_2d(np.asarray(returns, dtype=np.float64))
    n, C = R.shape
    response_cols = list(response_cols)
    if not response_cols:
        raise ValueError("need at least one response column")
    for j in response_cols:
        if not 0 <= j < C:
            raise IndexError(f"response column {j} out of range for {C} columns")
    if len(set(response_cols)) != len(response_cols):
        raise ValueError("duplicate response columns")
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if n <= lag:
        raise EmptyInput(f"need more than {lag} rows, got {n}")
    cov_cols = [j for j in range(C) if j not in set(response_cols)]
    rows = np.arange(lag, n)
    Y = R[rows][:, response_cols]
    blocks = [R[rows][:, cov_cols]]
    for ell in range(1, lag + 1):
        blocks.append(R[rows - ell])
    X = np.hstack(blocks)
    if not provenance:
        provenance = f"classification(C={C},K={len(response_cols)},lag={lag})"
    return split_standardize(X, Y, fractions, seed=seed, provenance=provenance)


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv(path, header: bool = False) -> np.ndarray:
    """Read a numeric comma-separated file into a row-major float matrix.
    Rejects ragged rows and non-numeric cells with 1-based coordinates."""
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        rows = [r for r in reader if r and not all(c.strip() == "" for c in r)]
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise EmptyInput(f"no data rows in {path}")
    width = len(rows[0])
    offset = 2 if header else 1
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CsvFormatError(
                f"ragged row: {len(row)} cells, expected {width}",
                row=i + offset, col=min(len(row), width) + 1)
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise CsvFormatError(f"non-numeric cell {cell!r}",
                                     row=i + offset, col=j + 1) from None
    return out
