"""Evaluation metrics: tail-event classification curves, tail-dependence
concentration curves (empirical and model-implied), mutual information by
quadrature, and pairwise bivariate-likelihood win tables."""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, field

import numpy as np

from .data import percentile_threshold

__all__ = [
    "Curve", "TailDepGrid", "WinTable", "OneClassOnly", "NoPositives",
    "BracketFailure", "NegativeMass", "default_u_grid", "roc_auc", "pr_ap",
    "tail_labels_scores", "empirical_tail_dep", "quantile_invert",
    "model_tail_dep", "model_pair_pdf", "sd_box",
    "mutual_information_quadrature", "pairwise_ll_wins",
]

_trapz = getattr(np, "trapezoid", None) or np.trapz


class OneClassOnly(ValueError):
    pass


class NoPositives(ValueError):
    pass


class BracketFailure(RuntimeError):
    pass


class NegativeMass(RuntimeError):
    pass


@dataclass
class Curve:
    """Ordered (x, y) points with axis labels and an optional scalar
    summary (AUC or average precision)."""

    xs: np.ndarray
    ys: np.ndarray
    x_label: str
    y_label: str
    summary: float | None = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow([self.x_label, self.y_label, "summary"])
            s = "" if self.summary is None else f"{self.summary:.17g}"
            for x, y in zip(self.xs, self.ys):
                w.writerow([f"{x:.17g}", f"{y:.17g}", s])


@dataclass
class TailDepGrid:
    """Tail-dependence values on a u-grid: lower-tail lambda for u <= 0.5,
    upper-tail lambda above. `empty` marks grid points whose tail bucket
    held no rows (value reported as 0)."""

    us: np.ndarray
    lam: np.ndarray
    side: np.ndarray
    empty: np.ndarray
    source: str = "empirical"

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["u", "lambda", "side", "empty"])
            for u, l, s, e in zip(self.us, self.lam, self.side, self.empty):
                w.writerow([f"{u:.17g}", f"{l:.17g}", s, int(e)])


@dataclass
class WinTable:
    """Strict pairwise win counts: wins[r, c] = number of response pairs on
    which model r's mean log-likelihood beats model c's."""

    names: list
    pairs: list
    means: np.ndarray
    wins: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["model"] + self.names)
            for r, name in enumerate(self.names):
                w.writerow([name] + [int(v) for v in self.wins[r]])


def default_u_grid() -> np.ndarray:
    return np.linspace(0.005, 0.995, 99)


# ---------------------------------------------------------------------------
# classification curves


def _grouped_counts(labels, scores):
    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if labels.shape != scores.shape:
        raise ValueError("labels and scores differ in length")
    order = np.argsort(-scores, kind="stable")
    l_sorted = labels[order]
    s_sorted = scores[order]
    # cumulative tp/fp at the last row of each tied-score group
    ends = np.nonzero(np.append(np.diff(s_sorted) != 0.0, True))[0]
    tp = np.cumsum(l_sorted)[ends]
    fp = np.cumsum(~l_sorted)[ends]
    return tp.astype(np.float64), fp.astype(np.float64)


def roc_auc(labels, scores) -> Curve:
    """ROC curve with tied scores grouped (diagonal segments), summarized by
    trapezoidal AUC."""
    tp, fp = _grouped_counts(labels, scores)
    P, N = tp[-1], fp[-1]
    if P == 0 or N == 0:
        raise OneClassOnly("need both classes to draw a ROC curve")
    xs = np.concatenate([[0.0], fp / N])
    ys = np.concatenate([[0.0], tp / P])
    return Curve(xs, ys, "fpr", "tpr", summary=float(_trapz(ys, xs)))


def pr_ap(labels, scores) -> Curve:
    """Precision-recall points at tie-group boundaries, summarized by
    step-interpolated average precision sum((R_k - R_{k-1}) * P_k)."""
    tp, fp = _grouped_counts(labels, scores)
    P = tp[-1]
    if P == 0:
        raise NoPositives("average precision needs at least one positive")
    recall = tp / P
    precision = tp / (tp + fp)
    ap = float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))
    return Curve(recall, precision, "recall", "precision", summary=ap)


def tail_labels_scores(model, dataset, q: float, split: str = "test"):
    """Binary tail-event labels and model scores for one split: the label is
    1 when any response dim exceeds its train-split q-quantile, the score is
    1 - F(thresholds | x)."""
    Y_train = dataset.split("train")[1]
    thr = np.array([percentile_threshold(Y_train[:, k], q)
                    for k in range(Y_train.shape[1])])
    X, Y = dataset.split(split)
    labels = (Y > thr).any(axis=1).astype(int)
    Yq = np.broadcast_to(thr, Y.shape).copy()
    F = np.asarray(model.cdf(X, Yq), dtype=np.float64)
    if F.ndim == 2 and F.shape[1] == 1:
        F = F[:, 0]
    if F.ndim != 1:
        raise ValueError("tail scoring needs a joint CDF (one value per row); "
                         f"model.cdf returned shape {F.shape}")
    scores = 1.0 - F
    return labels, scores


# ---------------------------------------------------------------------------
# tail dependence


def empirical_tail_dep(yi, yj, us=None) -> TailDepGrid:
    """Plug-in tail-dependence estimates from samples, using nearest-rank
    empirical quantiles: lower tail counts both values at or below the
    u-quantile, upper tail strictly above."""
    yi = np.asarray(yi, dtype=np.float64).ravel()
    yj = np.asarray(yj, dtype=np.float64).ravel()
    if yi.shape != yj.shape:
        raise ValueError("sample vectors differ in length")
    n = yi.size
    if n < 100:
        raise ValueError(f"need at least 100 rows, got {n}")
    us = default_u_grid() if us is None else np.asarray(us, dtype=np.float64)
    si, sj = np.sort(yi), np.sort(yj)
    lam = np.zeros(us.size)
    empty = np.zeros(us.size, dtype=bool)
    side = np.where(us <= 0.5, "L", "R")
    for t, u in enumerate(us):
        m = int(np.ceil(u * n))
        qi, qj = si[m - 1], sj[m - 1]
        if us[t] <= 0.5:
            den = np.sum(yi <= qi)
            num = np.sum((yi <= qi) & (yj <= qj))
        else:
            den = np.sum(yi > qi)
            num = np.sum((yi > qi) & (yj > qj))
        if den == 0:
            empty[t] = True
        else:
            lam[t] = num / den
    return TailDepGrid(us, lam, side, empty, source="empirical")


def quantile_invert(cdf, p, bracket=(-10.0, 10.0)):
    """Invert a monotone CDF by bisection to |F(y) - p| < 1e-8. The bracket
    doubles geometrically (up to 2^10) until it straddles p. `cdf` must
    accept vectors; scalar p gives scalar y."""
    p_arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
    scalar = np.ndim(p) == 0
    if np.any((p_arr <= 0.0) | (p_arr >= 1.0)):
        raise ValueError("p must lie strictly inside (0,1)")
    lo, hi = float(bracket[0]), float(bracket[1])
    for _ in range(11):
        if cdf(np.array([lo]))[0] <= p_arr.min() \
                and cdf(np.array([hi]))[0] >= p_arr.max():
            break
        lo, hi = 2.0 * lo, 2.0 * hi
    else:
        raise BracketFailure(f"no bracket for p range "
                             f"[{p_arr.min()}, {p_arr.max()}] within cap")
    los = np.full(p_arr.shape, lo)
    his = np.full(p_arr.shape, hi)
    done = np.zeros(p_arr.shape, dtype=bool)
    mid = 0.5 * (los + his)
    for _ in range(200):
        mid = 0.5 * (los + his)
        f = np.asarray(cdf(mid), dtype=np.float64)
        done |= np.abs(f - p_arr) < 1e-8
        if done.all():
            break
        lower = (f < p_arr) & ~done
        los = np.where(lower, mid, los)
        his = np.where(~lower & ~done, mid, his)
    else:
        raise BracketFailure("bisection did not reach 1e-8 in 200 iterations")
    return float(mid[0]) if scalar else mid


def model_tail_dep(model, i: int, j: int, x_cond, us=None) -> TailDepGrid:
    """Model-implied tail dependence at a fixed covariate value: invert the
    two marginal CDFs on the u-grid, evaluate the bivariate marginal CDF at
    the quantile pairs, and form lambda_L = F_ij/u below 0.5 and
    lambda_R = (1 - 2u + F_ij)/(1 - u) above, clipped to [0,1]."""
    us = default_u_grid() if us is None else np.asarray(us, dtype=np.float64)
    stats = model.stats
    x_row = np.asarray(x_cond, dtype=np.float64).reshape(1, -1)
    X = np.repeat(x_row, us.size, axis=0)

    def std_marginal(dim):
        mu, sd = stats.y_mean[dim], stats.y_sd[dim]
        xr = x_row

        def f(t):
            t = np.asarray(t, dtype=np.float64)
            Xr = np.repeat(xr, t.size, axis=0)
            F = model.marginal_cdf(Xr, mu + sd * t, dim)
            return np.asarray(F, dtype=np.float64).reshape(-1)
        return f

    ti = quantile_invert(std_marginal(i), us)
    tj = quantile_invert(std_marginal(j), us)
    yi = stats.y_mean[i] + stats.y_sd[i] * ti
    yj = stats.y_mean[j] + stats.y_sd[j] * tj
    Fij = np.asarray(model.pair_cdf(X, yi, yj, i, j), dtype=np.float64)
    lam = np.where(us <= 0.5, Fij / us, (1.0 - 2.0 * us + Fij) / (1.0 - us))
    lam = np.clip(lam, 0.0, 1.0)
    side = np.where(us <= 0.5, "L", "R")
    return TailDepGrid(us, lam, side, np.zeros(us.size, dtype=bool),
                       source="model")


# ---------------------------------------------------------------------------
# mutual information


def sd_box(stats, i: int, j: int, k: float = 5.0):
    """Integration box covering +-k train standard deviations of two
    response dims."""
    return ((float(stats.y_mean[i] - k * stats.y_sd[i]),
             float(stats.y_mean[i] + k * stats.y_sd[i])),
            (float(stats.y_mean[j] - k * stats.y_sd[j]),
             float(stats.y_mean[j] + k * stats.y_sd[j])))


def model_pair_pdf(model, i: int, j: int, x_cond):
    """Vectorized bivariate-marginal density of two response dims at a fixed
    covariate value, for quadrature."""
    x_row = np.asarray(x_cond, dtype=np.float64).reshape(1, -1)
    d_y = model.d_y

    def f(yi, yj):
        yi = np.asarray(yi, dtype=np.float64).ravel()
        yj = np.asarray(yj, dtype=np.float64).ravel()
        X = np.repeat(x_row, yi.size, axis=0)
        Y = np.zeros((yi.size, d_y))
        Y[:, i] = yi
        Y[:, j] = yj
        return np.exp(model.pair_logpdf(X, Y, i, j))
    return f


def mutual_information_quadrature(pdf_ij, box, n: int = 256,
                                  marginal_pdfs=None) -> float:
    """Mutual information of a bivariate density by tensor-product trapezoid
    quadrature; marginals come from 1-D quadrature of the same grid unless
    closed forms are supplied. Raises NegativeMass if the density mass on
    the box leaves [0.9, 1.05]."""
    (ai, bi), (aj, bj) = box
    gi = np.linspace(ai, bi, n)
    gj = np.linspace(aj, bj, n)
    YI, YJ = np.meshgrid(gi, gj, indexing="ij")
    f = np.asarray(pdf_ij(YI.ravel(), YJ.ravel()),
                   dtype=np.float64).reshape(n, n)
    mass = float(_trapz(_trapz(f, gj, axis=1), gi))
    if not 0.9 <= mass <= 1.05:
        raise NegativeMass(f"density mass {mass:.4f} outside [0.9, 1.05]")
    if marginal_pdfs is None:
        fi = _trapz(f, gj, axis=1)
        fj = _trapz(f, gi, axis=0)
    else:
        fi = np.asarray(marginal_pdfs[0](gi), dtype=np.float64)
        fj = np.asarray(marginal_pdfs[1](gj), dtype=np.float64)
    outer = np.outer(fi, fj)
    mask = (f >= 1e-300) & (outer > 0.0)
    integrand = np.zeros_like(f)
    integrand[mask] = f[mask] * (np.log(f[mask]) - np.log(outer[mask]))
    return float(_trapz(_trapz(integrand, gj, axis=1), gi))


# ---------------------------------------------------------------------------
# pairwise likelihood comparison


def pairwise_ll_wins(models: dict, dataset, pairs=None,
                     split: str = "test") -> WinTable:
    """Mean bivariate-marginal log-likelihood per model per response pair on
    one split, reduced to a strict win-count matrix."""
    names = list(models)
    X, Y = dataset.split(split)
    K = Y.shape[1]
    if pairs is None:
        pairs = [(i, j) for i in range(K) for j in range(i + 1, K)]
    means = np.empty((len(names), len(pairs)))
    for r, name in enumerate(names):
        model = models[name]
        for c, (i, j) in enumerate(pairs):
            means[r, c] = float(np.mean(model.pair_logpdf(X, Y, i, j)))
    wins = np.zeros((len(names), len(names)), dtype=int)
    for r in range(len(names)):
        for c in range(len(names)):
            if r != c:
                wins[r, c] = int(np.sum(means[r] > means[c]))
    return WinTable(names, list(pairs), means, wins)
