"""Model families: monotone-network estimators of conditional CDFs.

Every family outputs CDF values through monotone paths (nonneg-tagged
weights, squashing activations) and gets densities by differentiating the
network output w.r.t. response inputs via tangent channels. Public cdf/logpdf
methods take original-unit arrays and standardize internally; core_* methods
operate on pre-standardized arrays and are what the training loop calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import multivariate_normal, norm

from . import graph as g
from .graph import ChannelSpec, MDual, ParamStore, Tape, Var
from .layers import (
    FREE, NONNEG, ConstrainedLinear, InvalidDim, build_made_masks,
)

__all__ = [
    "UnknownFamily", "DimTooLarge", "SingularCorrelation", "NonPositiveD",
    "DegenerateColumn", "DENSITY_FLOOR", "CDF_CLIP", "FAMILIES",
    "StandardStats", "UmondeConfig", "MadeConfig", "CopulaConfig",
    "PumondeConfig", "UnivariateMonde", "MondeMade", "CopulaMonde",
    "Pumonde", "DiagonalGaussian", "build_model", "default_config",
    "corr_from_lowrank", "gauss_copula_logdensity", "fit_constant_correlation",
]

DENSITY_FLOOR = 1e-12   # densities are clamped here before log
CDF_CLIP = 1e-7         # marginal CDF values clipped to [CDF_CLIP, 1-CDF_CLIP]
EVAL_CHUNK = 4096
LOSS_CHUNK = 1024       # gradient tapes hold every intermediate, so cap rows


class UnknownFamily(ValueError):
    """Model family name not in the registry."""


class DimTooLarge(ValueError):
    """Full mixed-derivative density requested for more dims than supported."""


class SingularCorrelation(ValueError):
    """Correlation matrix not positive definite even after jitter."""


class NonPositiveD(ValueError):
    """Low-rank correlation got a non-positive diagonal contribution."""


class DegenerateColumn(ValueError):
    """A transformed marginal column has zero variance."""


# ---------------------------------------------------------------------------
# standardization


@dataclass
class StandardStats:
    """Per-column train-split statistics; models keep them so public methods
    can accept original units."""

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: np.ndarray
    y_sd: np.ndarray

    @staticmethod
    def identity(d_x: int, d_y: int) -> "StandardStats":
        return StandardStats(np.zeros(d_x), np.ones(d_x), np.zeros(d_y), np.ones(d_y))

    def std_x(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] == 0:
            return X
        return (X - self.x_mean) / self.x_sd

    def std_y(self, Y: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return (Y - self.y_mean) / self.y_sd

    def log_jac(self, dims) -> float:
        """log |dy_std/dy| over the given response dims (for density
        de-standardization: subtract sum log sd)."""
        return float(np.sum(np.log(self.y_sd[list(dims)])))


# ---------------------------------------------------------------------------
# copula primitives


def corr_from_lowrank(u: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Correlation matrix from (u u^T + diag(d)) rescaled to unit diagonal."""
    u = np.asarray(u, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise NonPositiveD("diagonal loading must be strictly positive")
    sigma = np.outer(u, u) + np.diag(d)
    s = np.sqrt(np.diag(sigma))
    return sigma / np.outer(s, s)


def _chol_with_jitter(rho: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(rho)
    except np.linalg.LinAlgError:
        eye = np.eye(rho.shape[-1])
        try:
            return np.linalg.cholesky(rho + 1e-9 * eye)
        except np.linalg.LinAlgError:
            raise SingularCorrelation("correlation not PD after 1e-9 jitter") from None


def gauss_copula_logdensity(z: np.ndarray, rho: np.ndarray) -> float:
    """log c(Phi(z); rho) for one point: -0.5 log det rho
    - 0.5 z^T (rho^{-1} - I) z."""
    z = np.asarray(z, dtype=np.float64).ravel()
    rho = np.asarray(rho, dtype=np.float64)
    L = _chol_with_jitter(rho)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    w = np.linalg.solve(rho, z)
    return -0.5 * logdet - 0.5 * (float(z @ w) - float(z @ z))


def gauss_copula_term(tape: Tape, z: Var, rho) -> Var:
    """Per-row copula log-density as one fused tape op.

    rho is either a constant (K,K) ndarray shared by the batch or a Var of
    per-row matrices (n,K,K). Gradients: d/dz = z - rho^{-1} z and
    d/drho = 0.5 (w w^T - rho^{-1}) with w = rho^{-1} z.
    """
    zv = z.value
    n, K = zv.shape
    if isinstance(rho, Var):
        rv = rho.value
        L = _chol_with_jitter(rv)
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        w = np.linalg.solve(rv, zv[:, :, None])[:, :, 0]
        quad = np.einsum("nk,nk->n", zv, w) - np.einsum("nk,nk->n", zv, zv)
        val = -0.5 * logdet - 0.5 * quad

        def back(adj):
            gz = adj[:, None] * (zv - w)
            rinv = np.linalg.solve(rv, np.broadcast_to(np.eye(K), rv.shape).copy())
            gr = adj[:, None, None] * 0.5 * (w[:, :, None] * w[:, None, :] - rinv)
            return (gz, gr)

        return g.custom_op(tape, val, "gauss_copula", (z, rho), back)

    rho_c = np.asarray(rho, dtype=np.float64)
    L = _chol_with_jitter(rho_c)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    w = np.linalg.solve(rho_c, zv.T).T
    quad = np.einsum("nk,nk->n", zv, w) - np.einsum("nk,nk->n", zv, zv)
    val = -0.5 * logdet - 0.5 * quad

    def back_const(adj):
        return (adj[:, None] * (zv - w),)

    return g.custom_op(tape, val, "gauss_copula", (z,), back_const)


def corr_lowrank_tape(tape: Tape, u: Var, d: Var) -> Var:
    """Batched tape version of corr_from_lowrank: u,d are (n,K)."""
    K = u.value.shape[1]
    eye = tape.const(np.eye(K))
    uu = g.mul(g.expand_dims(u, 2), g.expand_dims(u, 1))
    dd = g.mul(g.expand_dims(d, 2), eye)
    sigma = g.add(uu, dd)
    diag = g.vsum(g.mul(sigma, eye), axis=2)
    s = g.sqrt(diag)
    denom = g.mul(g.expand_dims(s, 2), g.expand_dims(s, 1))
    return g.div(sigma, denom)


def floor_to_correlation(R: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Eigenvalue-floor a symmetric matrix and rescale to unit diagonal."""
    R = 0.5 * (R + R.T)
    vals, vecs = np.linalg.eigh(R)
    if np.all(vals >= floor):
        return R
    vals = np.maximum(vals, floor)
    R = (vecs * vals) @ vecs.T
    s = np.sqrt(np.diag(R))
    return R / np.outer(s, s)


# ---------------------------------------------------------------------------
# base class


class _ModelBase:
    family = "?"

    def __init__(self, d_x: int, d_y: int, stats: StandardStats, config):
        self.d_x = int(d_x)
        self.d_y = int(d_y)
        self.stats = stats
        self.config = config
        self.store = ParamStore()
        self.last_degenerate = 0

    @property
    def n_params(self) -> int:
        return self.store.size

    def _clamped_log(self, f: Var) -> Var:
        self.last_degenerate += int(np.sum(f.value < DENSITY_FLOOR))
        return g.log(g.maximum_scalar(f, DENSITY_FLOOR))

    def _inputs(self, X, Y):
        return self.stats.std_x(X), self.stats.std_y(Y)

    def _chunked(self, fn, *arrays):
        n = arrays[0].shape[0]
        outs = []
        for lo in range(0, n, EVAL_CHUNK):
            outs.append(fn(*(a[lo:lo + EVAL_CHUNK] for a in arrays)))
        return np.concatenate(outs) if len(outs) > 1 else outs[0]

    # public original-unit surface -----------------------------------------

    def logpdf(self, X, Y) -> np.ndarray:
        xs, ys = self._inputs(X, Y)
        self.last_degenerate = 0
        ll = self._chunked(lambda a, b: self.core_logpdf(a, b, check=True), xs, ys)
        return ll - self.stats.log_jac(range(self.d_y))

    def loss_grad(self, xs: np.ndarray, ys: np.ndarray):
        """Mean negative log-likelihood and flat parameter gradient on a
        standardized batch; no finiteness checks (the caller owns those).

        Batches beyond LOSS_CHUNK rows are accumulated chunk by chunk: the
        mean of chunk means weighted by chunk size equals the batch mean, and
        the tape then never materializes more than LOSS_CHUNK rows at once.
        """
        n = ys.shape[0]
        if n <= LOSS_CHUNK:
            return self._loss_grad_tape(xs, ys)
        loss = 0.0
        grad = np.zeros(self.store.size)
        for lo in range(0, n, LOSS_CHUNK):
            l, gv = self._loss_grad_tape(xs[lo:lo + LOSS_CHUNK],
                                         ys[lo:lo + LOSS_CHUNK])
            w = min(LOSS_CHUNK, n - lo) / n
            loss += w * l
            grad += w * gv
        return loss, grad

    def _loss_grad_tape(self, xs, ys):
        tape = Tape(grad_enabled=True, check_finite=False)
        with np.errstate(all="ignore"):
            loss = g.vmean(self.core_loglik_ops(tape, xs, ys))
            tape.backward(loss, seed=-1.0)
        return -float(loss.value), tape.param_grads(self.store)

    def val_loglik(self, xs: np.ndarray, ys: np.ndarray) -> float:
        """Mean standardized log-likelihood without gradients or checks."""
        with np.errstate(all="ignore"):
            ll = self._chunked(lambda a, b: self.core_logpdf(a, b, check=False), xs, ys)
        return float(ll.mean())

    def val_jacobian(self) -> float:
        """Constant shift from standardized to original-unit objective."""
        return self.stats.log_jac(range(self.d_y))

    # family hooks ----------------------------------------------------------

    def core_logpdf(self, xs, ys, check: bool) -> np.ndarray:
        tape = Tape(grad_enabled=False, check_finite=check)
        return self.core_loglik_ops(tape, xs, ys).value

    def core_loglik_ops(self, tape: Tape, xs, ys) -> Var:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# univariate family


@dataclass(frozen=True)
class UmondeConfig:
    cov_widths: tuple = (64, 64)
    mono_widths: tuple = (64, 64)


class UnivariateMonde(_ModelBase):
    """F(y|x) for scalar y: free covariate tower fused into a monotone tanh
    tower ending in a sigmoid unit."""

    family = "umonde"

    def __init__(self, d_x: int, stats: StandardStats,
                 config: UmondeConfig = UmondeConfig(), seed: int = 0):
        super().__init__(d_x, 1, stats, config)
        rng = np.random.default_rng(seed)
        self.cov = []
        w_in = d_x
        for i, w in enumerate(config.cov_widths):
            if d_x == 0:
                break
            self.cov.append(ConstrainedLinear(f"cov{i}", w_in, w, FREE, "tanh"))
            w_in = w
        fuse_in = 1 + (w_in if d_x > 0 else 0)
        widths = tuple(config.mono_widths)
        if not widths:
            raise InvalidDim("mono_widths must be non-empty")
        tags0 = np.full((fuse_in, widths[0]), FREE, dtype=np.int8)
        tags0[0, :] = NONNEG
        self.mono = [ConstrainedLinear("mono0", fuse_in, widths[0], tags0, "tanh")]
        for i in range(1, len(widths)):
            self.mono.append(ConstrainedLinear(f"mono{i}", widths[i - 1], widths[i],
                                               NONNEG, "tanh"))
        self.final = ConstrainedLinear("final", widths[-1], 1, NONNEG, "sigmoid")
        for layer in (*self.cov, *self.mono, self.final):
            layer.register(self.store, rng)
        self.store.freeze()

    def _forward(self, tape: Tape, spec: ChannelSpec, xs, ymd: MDual) -> MDual:
        h = ymd
        if self.d_x > 0:
            xmd = g.md_const(spec, tape.const(xs))
            for layer in self.cov:
                xmd = layer.apply(tape, self.store, xmd)
            h = g.md_concat([ymd, xmd])
        for layer in self.mono:
            h = layer.apply(tape, self.store, h)
        return self.final.apply(tape, self.store, h)

    def core_cdf(self, xs, ys, check: bool = True) -> np.ndarray:
        tape = Tape(grad_enabled=False, check_finite=check)
        spec = ChannelSpec.primal()
        ymd = g.md_const(spec, tape.const(ys[:, :1]))
        return self._forward(tape, spec, xs, ymd).primal.value[:, 0]

    def core_loglik_ops(self, tape: Tape, xs, ys) -> Var:
        spec = ChannelSpec.jets(1)
        ymd = MDual(spec, {0: tape.const(ys[:, :1]),
                           1: tape.const(np.ones((ys.shape[0], 1)))})
        out = self._forward(tape, spec, xs, ymd)
        return g.reshape(self._clamped_log(out.ch[1]), (ys.shape[0],))

    def cdf(self, X, Y) -> np.ndarray:
        xs, ys = self._inputs(X, Y)
        return self._chunked(lambda a, b: self.core_cdf(a, b), xs, ys)

    def marginal_cdf(self, X, ycol, k: int = 0) -> np.ndarray:
        return self.cdf(X, np.atleast_2d(np.asarray(ycol, dtype=np.float64)).reshape(-1, 1))


# ---------------------------------------------------------------------------
# autoregressive family


@dataclass(frozen=True)
class MadeConfig:
    m: int = 8
    hidden_layers: int = 2


class MondeMade(_ModelBase):
    """Autoregressive stack of masked monotone layers; output k is
    F(y_k | y_<k, x) and the joint density is the product of the K
    own-response partials."""

    family = "monde-made"

    def __init__(self, d_x: int, d_y: int, stats: StandardStats,
                 config: MadeConfig = MadeConfig(), seed: int = 0):
        super().__init__(d_x, d_y, stats, config)
        rng = np.random.default_rng(seed)
        masks = build_made_masks(d_x, d_y, config.m)
        K, M = d_y, config.m
        act = "scaled-tanh01"
        self.layers = []
        if config.hidden_layers == 0:
            self.layers.append(ConstrainedLinear("direct", d_x + K, K,
                                                 masks.direct_tags, act))
        else:
            self.layers.append(ConstrainedLinear("in", d_x + K, K * M,
                                                 masks.input_tags, act))
            for i in range(config.hidden_layers - 1):
                self.layers.append(ConstrainedLinear(f"hid{i}", K * M, K * M,
                                                     masks.hidden_tags, act))
            self.layers.append(ConstrainedLinear("out", K * M, K,
                                                 masks.output_tags, act))
        for layer in self.layers:
            layer.register(self.store, rng)
        self.store.freeze()

    def _forward(self, tape: Tape, spec: ChannelSpec, xs, ys,
                 seed_dirs: bool) -> MDual:
        n = ys.shape[0]
        D, K = self.d_x, self.d_y
        joint = np.concatenate([xs, ys], axis=1) if D > 0 else ys
        ch = {0: tape.const(joint)}
        if seed_dirs:
            for k in range(K):
                d = np.zeros(D + K)
                d[D + k] = 1.0
                ch[1 << k] = tape.const(np.broadcast_to(d, (n, D + K)))
        md = MDual(spec, ch)
        for layer in self.layers:
            md = layer.apply(tape, self.store, md)
        return md

    def core_cdfs(self, xs, ys, check: bool = True) -> np.ndarray:
        tape = Tape(grad_enabled=False, check_finite=check)
        return self._forward(tape, ChannelSpec.primal(), xs, ys, False).primal.value

    def core_loglik_ops(self, tape: Tape, xs, ys) -> Var:
        K = self.d_y
        md = self._forward(tape, ChannelSpec.jets(K), xs, ys, True)
        total = None
        for k in range(K):
            f_k = g.take_cols(md.ch[1 << k], k, k + 1)
            lp = self._clamped_log(f_k)
            total = lp if total is None else g.add(total, lp)
        return g.reshape(total, (ys.shape[0],))

    def cdf(self, X, Y) -> np.ndarray:
        """Per-dimension conditional CDFs F(y_k | y_<k, x), shape (n,K)."""
        xs, ys = self._inputs(X, Y)
        n = xs.shape[0] if self.d_x else ys.shape[0]
        outs = [self.core_cdfs(xs[lo:lo + EVAL_CHUNK], ys[lo:lo + EVAL_CHUNK])
                for lo in range(0, n, EVAL_CHUNK)]
        return np.concatenate(outs, axis=0) if len(outs) > 1 else outs[0]


# ---------------------------------------------------------------------------
# product family


@dataclass(frozen=True)
class PumondeConfig:
    hx_widths: tuple = (32, 32)
    hxy_widths: tuple = (32, 32)
    t_widths: tuple = (32, 32)


class Pumonde(_ModelBase):
    """Joint CDF as t(prod_k h_k(y_k, x)) / t(ones): per-response monotone
    sigmoid towers multiplied elementwise, pushed through a nonneg softplus
    tower and normalized by the tower at the all-ones vector."""

    family = "pumonde"

    def __init__(self, d_x: int, d_y: int, stats: StandardStats,
                 config: PumondeConfig = PumondeConfig(), seed: int = 0):
        if d_y < 2:
            raise InvalidDim("product family needs at least 2 response dims")
        super().__init__(d_x, d_y, stats, config)
        rng = np.random.default_rng(seed)
        self.hx = []
        w_in = d_x
        for i, w in enumerate(config.hx_widths):
            if d_x == 0:
                break
            self.hx.append(ConstrainedLinear(f"hx{i}", w_in, w, FREE, "sigmoid"))
            w_in = w
        hx_out = w_in if d_x > 0 else 0
        widths = tuple(config.hxy_widths)
        self.hxy: list[list[ConstrainedLinear]] = []
        for k in range(d_y):
            tags0 = np.full((1 + hx_out, widths[0]), FREE, dtype=np.int8)
            tags0[0, :] = NONNEG
            tower = [ConstrainedLinear(f"hxy{k}_0", 1 + hx_out, widths[0], tags0, "sigmoid")]
            for i in range(1, len(widths)):
                tower.append(ConstrainedLinear(f"hxy{k}_{i}", widths[i - 1], widths[i],
                                               NONNEG, "sigmoid"))
            self.hxy.append(tower)
        self.prod_width = widths[-1]
        t_in = self.prod_width
        self.t_tower = []
        for i, w in enumerate(config.t_widths):
            self.t_tower.append(ConstrainedLinear(f"t{i}", t_in, w, NONNEG,
                                                  "softplus-stable"))
            t_in = w
        self.t_tower.append(ConstrainedLinear("t_out", t_in, 1, NONNEG,
                                              "softplus-stable"))
        for layer in (*self.hx, *(l for tw in self.hxy for l in tw), *self.t_tower):
            layer.register(self.store, rng)
        self.store.freeze()

    def _hx_forward(self, tape: Tape, spec: ChannelSpec, xs) -> MDual | None:
        if self.d_x == 0:
            return None
        md = g.md_const(spec, tape.const(xs))
        for layer in self.hx:
            md = layer.apply(tape, self.store, md)
        return md

    def _product(self, tape: Tape, spec: ChannelSpec, xs, ys,
                 active, seeds: dict[int, int]) -> MDual:
        """Elementwise product of the h towers for dims in `active`; dims
        outside contribute the constant ones vector (marginalization).
        seeds maps dim -> channel mask carrying its unit tangent."""
        n = ys.shape[0]
        hx = self._hx_forward(tape, spec, xs)
        m = None
        for k in active:
            ch = {0: tape.const(ys[:, k:k + 1])}
            if k in seeds:
                ch[seeds[k]] = tape.const(np.ones((n, 1)))
            ymd = MDual(spec, ch)
            md = g.md_concat([ymd, hx]) if hx is not None else ymd
            for layer in self.hxy[k]:
                md = layer.apply(tape, self.store, md)
            m = md if m is None else g.md_mul(m, md)
        if m is None:
            m = g.md_const(spec, tape.const(np.ones((n, self.prod_width))))
        return m

    def _t_apply(self, tape: Tape, md: MDual) -> MDual:
        for layer in self.t_tower:
            md = layer.apply(tape, self.store, md)
        return md

    def _t_norm(self, tape: Tape) -> Var:
        md = g.md_const(ChannelSpec.primal(),
                        tape.const(np.ones((1, self.prod_width))))
        return self._t_apply(tape, md).primal

    # CDFs ------------------------------------------------------------------

    def _cdf_ops(self, tape: Tape, xs, ys, active) -> Var:
        spec = ChannelSpec.primal()
        m = self._product(tape, spec, xs, ys, active, {})
        t_m = self._t_apply(tape, m).primal
        return g.div(t_m, self._t_norm(tape))

    def core_cdf(self, xs, ys, check: bool = True) -> np.ndarray:
        tape = Tape(grad_enabled=False, check_finite=check)
        return self._cdf_ops(tape, xs, ys, range(self.d_y)).value[:, 0]

    def cdf(self, X, Y) -> np.ndarray:
        xs, ys = self._inputs(X, Y)
        return self._chunked(lambda a, b: self.core_cdf(a, b), xs, ys)

    def marginal_cdf(self, X, ycol, k: int) -> np.ndarray:
        xs = self.stats.std_x(X)
        ycol = np.asarray(ycol, dtype=np.float64).reshape(-1)
        ys = np.zeros((ycol.shape[0], self.d_y))
        ys[:, k] = (ycol - self.stats.y_mean[k]) / self.stats.y_sd[k]

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            return self._cdf_ops(tape, a, b, [k]).value[:, 0]

        return self._chunked(chunk, xs, ys)

    def pair_cdf(self, X, yi, yj, i: int, j: int) -> np.ndarray:
        xs = self.stats.std_x(X)
        yi = np.asarray(yi, dtype=np.float64).reshape(-1)
        yj = np.asarray(yj, dtype=np.float64).reshape(-1)
        ys = np.zeros((yi.shape[0], self.d_y))
        ys[:, i] = (yi - self.stats.y_mean[i]) / self.stats.y_sd[i]
        ys[:, j] = (yj - self.stats.y_mean[j]) / self.stats.y_sd[j]

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            return self._cdf_ops(tape, a, b, [i, j]).value[:, 0]

        return self._chunked(chunk, xs, ys)

    # densities -------------------------------------------------------------

    def _pair_logpdf_ops(self, tape: Tape, xs, ys, i: int, j: int) -> Var:
        spec = ChannelSpec.mixed(2)
        m = self._product(tape, spec, xs, ys, [i, j], {i: 1, j: 2})
        t_md = self._t_apply(tape, m)
        f = g.div(t_md.ch[3], self._t_norm(tape))
        return g.reshape(self._clamped_log(f), (ys.shape[0],))

    def pair_logpdf(self, X, Y, i: int, j: int) -> np.ndarray:
        xs, ys = self._inputs(X, Y)
        self.last_degenerate = 0

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            return self._pair_logpdf_ops(tape, a, b, i, j).value

        return self._chunked(chunk, xs, ys) - self.stats.log_jac([i, j])

    def core_loglik_ops(self, tape: Tape, xs, ys) -> Var:
        """Composite log-likelihood: sum of bivariate-marginal log-densities
        over all response pairs. The per-dim towers are computed once and
        shared; each pair gets its own product (dims outside the pair are
        marginalized away) and t pass."""
        K = self.d_y
        n = ys.shape[0]
        spec = ChannelSpec.pair_channels(K)
        hx = self._hx_forward(tape, spec, xs)
        towers = []
        for k in range(K):
            ch = {0: tape.const(ys[:, k:k + 1]),
                  1 << k: tape.const(np.ones((n, 1)))}
            md = g.md_concat([MDual(spec, ch), hx]) if hx is not None else MDual(spec, ch)
            for layer in self.hxy[k]:
                md = layer.apply(tape, self.store, md)
            towers.append(md)
        t1 = self._t_norm(tape)
        total = None
        for i in range(K):
            for j in range(i + 1, K):
                t_md = self._t_apply(tape, g.md_mul(towers[i], towers[j]))
                f = g.div(t_md.ch[(1 << i) | (1 << j)], t1)
                lp = self._clamped_log(f)
                total = lp if total is None else g.add(total, lp)
        return g.reshape(total, (ys.shape[0],))

    def composite_loglik(self, X, Y) -> np.ndarray:
        """Original-unit composite (pairwise) log-likelihood per row."""
        xs, ys = self._inputs(X, Y)
        self.last_degenerate = 0

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            return self.core_loglik_ops(tape, a, b).value

        jac = (self.d_y - 1) * self.stats.log_jac(range(self.d_y))
        return self._chunked(chunk, xs, ys) - jac

    def full_logpdf(self, X, Y) -> np.ndarray:
        """Exact joint density from the order-K mixed channel; K <= 4."""
        K = self.d_y
        if K > 4:
            raise DimTooLarge(f"full density supports up to 4 dims, got {K}")
        xs, ys = self._inputs(X, Y)
        self.last_degenerate = 0
        spec = ChannelSpec.mixed(K)
        seeds = {k: 1 << k for k in range(K)}

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            m = self._product(tape, spec, a, b, range(K), seeds)
            f = g.div(self._t_apply(tape, m).ch[(1 << K) - 1], self._t_norm(tape))
            return g.reshape(self._clamped_log(f), (b.shape[0],)).value

        return self._chunked(chunk, xs, ys) - self.stats.log_jac(range(K))

    def logpdf(self, X, Y) -> np.ndarray:
        return self.full_logpdf(X, Y)

    def val_loglik(self, xs, ys) -> float:
        with np.errstate(all="ignore"):
            vals = []
            for lo in range(0, ys.shape[0], EVAL_CHUNK):
                tape = Tape(grad_enabled=False, check_finite=False)
                vals.append(self.core_loglik_ops(
                    tape, xs[lo:lo + EVAL_CHUNK], ys[lo:lo + EVAL_CHUNK]).value)
        return float(np.concatenate(vals).mean())

    def val_jacobian(self) -> float:
        return (self.d_y - 1) * self.stats.log_jac(range(self.d_y))


# ---------------------------------------------------------------------------
# copula family


@dataclass(frozen=True)
class CopulaConfig:
    x_widths: tuple = (32, 32)
    xpart_widths: tuple = (32, 32)
    y_widths: tuple = (32, 32)
    corr: str = "const"            # "const" or "param"
    corr_widths: tuple = (32, 32)


class CopulaMonde(_ModelBase):
    """Per-dimension monotone marginal CDF networks glued by a Gaussian
    copula whose correlation is either a constant matrix re-estimated each
    epoch or a per-row low-rank parameterization of x."""

    family_const = "copula-const"
    family_param = "copula-param"

    def __init__(self, d_x: int, d_y: int, stats: StandardStats,
                 config: CopulaConfig = CopulaConfig(), seed: int = 0):
        if config.corr not in ("const", "param"):
            raise UnknownFamily(f"unknown correlation mode {config.corr!r}")
        if len(config.xpart_widths) != len(config.y_widths):
            raise InvalidDim("xpart_widths must align with y_widths")
        super().__init__(d_x, d_y, stats, config)
        self.family = self.family_const if config.corr == "const" else self.family_param
        rng = np.random.default_rng(seed)
        self.shared = []
        w_in = d_x
        for i, w in enumerate(config.x_widths):
            if d_x == 0:
                break
            self.shared.append(ConstrainedLinear(f"x{i}", w_in, w, FREE, "tanh"))
            w_in = w
        x_out = w_in if d_x > 0 else 0
        yw = tuple(config.y_widths)
        pw = tuple(config.xpart_widths)
        self.xpart: list[list[ConstrainedLinear]] = []
        self.ytower: list[list[ConstrainedLinear]] = []
        for k in range(d_y):
            xp = []
            if d_x > 0:
                xp_in = x_out
                for i, w in enumerate(pw):
                    xp.append(ConstrainedLinear(f"xp{k}_{i}", xp_in, w, FREE, "tanh"))
                    xp_in = w
            self.xpart.append(xp)
            tags0 = np.full((1 + x_out, yw[0]), FREE, dtype=np.int8)
            tags0[0, :] = NONNEG
            yt = [ConstrainedLinear(f"y{k}_0", 1 + x_out, yw[0], tags0, "tanh")]
            for i in range(1, len(yw)):
                in_dim = yw[i - 1] + (pw[i - 1] if d_x > 0 else 0)
                tags = np.full((in_dim, yw[i]), FREE, dtype=np.int8)
                tags[:yw[i - 1], :] = NONNEG
                yt.append(ConstrainedLinear(f"y{k}_{i}", in_dim, yw[i], tags, "tanh"))
            fin_in = yw[-1] + (pw[-1] if d_x > 0 else 0)
            tags_f = np.full((fin_in, 1), FREE, dtype=np.int8)
            tags_f[:yw[-1], :] = NONNEG
            yt.append(ConstrainedLinear(f"y{k}_out", fin_in, 1, tags_f, "sigmoid"))
            self.ytower.append(yt)
        self.corr_net = []
        if config.corr == "param":
            c_in = d_x if d_x > 0 else 1
            for i, w in enumerate(config.corr_widths):
                self.corr_net.append(ConstrainedLinear(f"c{i}", c_in, w, FREE, "tanh"))
                c_in = w
            self.corr_net.append(ConstrainedLinear("c_u", c_in, d_y, FREE, "identity"))
            self.corr_net.append(ConstrainedLinear("c_d", c_in, d_y, FREE,
                                                   "softplus-stable"))
        all_layers = [*self.shared]
        for k in range(d_y):
            all_layers.extend(self.xpart[k])
            all_layers.extend(self.ytower[k])
        all_layers.extend(self.corr_net)
        for layer in all_layers:
            layer.register(self.store, rng)
        self.store.freeze()
        self.rho_ = np.eye(d_y)

    # marginal towers -------------------------------------------------------

    def _shared_forward(self, tape: Tape, spec: ChannelSpec, xs) -> MDual | None:
        if self.d_x == 0:
            return None
        md = g.md_const(spec, tape.const(xs))
        for layer in self.shared:
            md = layer.apply(tape, self.store, md)
        return md

    def _marginal(self, tape: Tape, spec: ChannelSpec, xr: MDual | None,
                  ymd: MDual, k: int) -> MDual:
        xp_outs = []
        if xr is not None:
            md = xr
            for layer in self.xpart[k]:
                md = layer.apply(tape, self.store, md)
                xp_outs.append(md)
        yt = self.ytower[k]
        h = yt[0].apply(tape, self.store,
                        g.md_concat([ymd, xr]) if xr is not None else ymd)
        for i, layer in enumerate(yt[1:], start=1):
            if xp_outs:
                h = g.md_concat([h, xp_outs[i - 1]])
            h = layer.apply(tape, self.store, h)
        return h

    def _marginals(self, tape: Tape, xs, ys, tangents: bool):
        spec = ChannelSpec.jets(1) if tangents else ChannelSpec.primal()
        xr = self._shared_forward(tape, spec, xs)
        n = ys.shape[0]
        out = []
        for k in range(self.d_y):
            ch = {0: tape.const(ys[:, k:k + 1])}
            if tangents:
                ch[1] = tape.const(np.ones((n, 1)))
            md = self._marginal(tape, spec, xr, MDual(spec, ch), k)
            out.append((md.ch[0], md.ch.get(1)))
        return out

    def _rho_ops(self, tape: Tape, xs, n: int):
        """Returns (rho ndarray or Var). Constant mode uses the stored
        epoch-fixed estimate; parameterized mode runs the correlation net."""
        if self.config.corr == "const":
            return self.rho_
        feats = xs if self.d_x > 0 else np.ones((n, 1))
        md = g.md_const(ChannelSpec.primal(), tape.const(feats))
        for layer in self.corr_net[:-2]:
            md = layer.apply(tape, self.store, md)
        u = self.corr_net[-2].apply(tape, self.store, md).primal
        d = self.corr_net[-1].apply(tape, self.store, md).primal
        d = g.maximum_scalar(d, 1e-6)
        return corr_lowrank_tape(tape, u, d)

    def pre_epoch(self, xs: np.ndarray, ys: np.ndarray) -> None:
        """Constant mode re-estimates the copula correlation from the current
        marginals before each training epoch; parameterized mode learns it by
        gradient and does nothing here."""
        if self.config.corr == "const" and self.d_y > 1:
            fit_constant_correlation(self, xs, ys)

    def rho_of_x(self, X) -> np.ndarray:
        """Correlation matrices for rows of X, shape (n,K,K)."""
        xs = self.stats.std_x(X)
        n = np.atleast_2d(np.asarray(X)).shape[0]
        if self.config.corr == "const":
            return np.broadcast_to(self.rho_, (n, self.d_y, self.d_y)).copy()
        tape = Tape(grad_enabled=False, check_finite=True)
        return self._rho_ops(tape, xs, n).value

    # densities -------------------------------------------------------------

    def core_loglik_ops(self, tape: Tape, xs, ys) -> Var:
        marg = self._marginals(tape, xs, ys, tangents=True)
        total = None
        zcols = []
        for F_k, f_k in marg:
            lp = self._clamped_log(f_k)
            total = lp if total is None else g.add(total, lp)
            zcols.append(g.ndtri_op(g.clip(F_k, CDF_CLIP, 1.0 - CDF_CLIP)))
        total = g.reshape(total, (ys.shape[0],))
        if self.d_y == 1:
            return total
        z = g.concat(zcols, axis=1)
        rho = self._rho_ops(tape, xs, ys.shape[0])
        return g.add(total, gauss_copula_term(tape, z, rho))

    # CDFs ------------------------------------------------------------------

    def marginal_cdf(self, X, ycol, k: int) -> np.ndarray:
        xs = self.stats.std_x(X)
        ycol = np.asarray(ycol, dtype=np.float64).reshape(-1, 1)
        ysk = (ycol - self.stats.y_mean[k]) / self.stats.y_sd[k]

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            spec = ChannelSpec.primal()
            xr = self._shared_forward(tape, spec, a)
            md = self._marginal(tape, spec, xr, g.md_const(spec, tape.const(b)), k)
            return md.primal.value[:, 0]

        return self._chunked(chunk, xs, ysk)

    def marginal_logpdf(self, X, ycol, k: int) -> np.ndarray:
        """Log marginal density of response dim k (original units).  Uses the
        same per-dim ops as the joint density, so with an identity copula the
        joint equals the sum of these values bit for bit."""
        xs = self.stats.std_x(X)
        ycol = np.asarray(ycol, dtype=np.float64).reshape(-1, 1)
        ysk = (ycol - self.stats.y_mean[k]) / self.stats.y_sd[k]
        self.last_degenerate = 0

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            spec = ChannelSpec.jets(1)
            xr = self._shared_forward(tape, spec, a)
            ch = {0: tape.const(b), 1: tape.const(np.ones((b.shape[0], 1)))}
            md = self._marginal(tape, spec, xr, MDual(spec, ch), k)
            return self._clamped_log(md.ch[1]).value[:, 0]

        return self._chunked(chunk, xs, ysk) - self.stats.log_jac([k])

    def _z_of(self, xs, ys) -> np.ndarray:
        tape = Tape(grad_enabled=False, check_finite=True)
        marg = self._marginals(tape, xs, ys, tangents=False)
        F = np.concatenate([Fk.value for Fk, _ in marg], axis=1)
        return ndtri(np.clip(F, CDF_CLIP, 1.0 - CDF_CLIP))

    def cdf(self, X, Y) -> np.ndarray:
        """Joint CDF via the Gaussian copula over the marginal quantiles."""
        xs, ys = self._inputs(X, Y)
        z = self._chunked(lambda a, b: self._z_of(a, b), xs, ys)
        if self.d_y == 1:
            return norm.cdf(z[:, 0])
        if self.config.corr == "const":
            mvn = multivariate_normal(mean=np.zeros(self.d_y), cov=self.rho_)
            return np.atleast_1d(mvn.cdf(z))
        rhos = self.rho_of_x(X)
        return np.array([
            multivariate_normal(mean=np.zeros(self.d_y), cov=rhos[i]).cdf(z[i])
            for i in range(z.shape[0])
        ])

    def pair_cdf(self, X, yi, yj, i: int, j: int) -> np.ndarray:
        zi = ndtri(np.clip(self.marginal_cdf(X, yi, i), CDF_CLIP, 1 - CDF_CLIP))
        zj = ndtri(np.clip(self.marginal_cdf(X, yj, j), CDF_CLIP, 1 - CDF_CLIP))
        pts = np.stack([zi, zj], axis=1)
        if self.config.corr == "const":
            r = float(self.rho_[i, j])
            mvn = multivariate_normal(mean=np.zeros(2), cov=[[1.0, r], [r, 1.0]])
            return np.atleast_1d(mvn.cdf(pts))
        rhos = self.rho_of_x(X)
        out = np.empty(pts.shape[0])
        for row in range(pts.shape[0]):
            r = float(rhos[row, i, j])
            out[row] = multivariate_normal(mean=np.zeros(2),
                                           cov=[[1.0, r], [r, 1.0]]).cdf(pts[row])
        return out

    def pair_logpdf(self, X, Y, i: int, j: int) -> np.ndarray:
        """Bivariate marginal log-density: two marginals plus the 2x2
        Gaussian copula in closed form."""
        xs, ys = self._inputs(X, Y)
        self.last_degenerate = 0

        def chunk(a, b):
            tape = Tape(grad_enabled=False, check_finite=True)
            spec = ChannelSpec.jets(1)
            xr = self._shared_forward(tape, spec, a)
            n = b.shape[0]
            vals = []
            zs = []
            for k in (i, j):
                ch = {0: tape.const(b[:, k:k + 1]), 1: tape.const(np.ones((n, 1)))}
                md = self._marginal(tape, spec, xr, MDual(spec, ch), k)
                vals.append(self._clamped_log(md.ch[1]).value[:, 0])
                zs.append(ndtri(np.clip(md.ch[0].value[:, 0], CDF_CLIP, 1 - CDF_CLIP)))
            if self.config.corr == "const":
                r = np.full(n, float(self.rho_[i, j]))
            else:
                rho = self._rho_ops(tape, a, n).value
                r = rho[:, i, j]
            zi, zj = zs
            om = 1.0 - r * r
            logc = -0.5 * np.log(om) - (r * r * (zi * zi + zj * zj)
                                        - 2.0 * r * zi * zj) / (2.0 * om)
            return vals[0] + vals[1] + logc

        return self._chunked(chunk, xs, ys) - self.stats.log_jac([i, j])


def fit_constant_correlation(model: CopulaMonde, xs: np.ndarray,
                             ys: np.ndarray) -> np.ndarray:
    """Re-estimate the constant copula correlation from current marginals on
    standardized training arrays; floors eigenvalues and stores the result
    on the model."""
    z = model._chunked(lambda a, b: model._z_of(a, b), xs, ys)
    sd = z.std(axis=0)
    if np.any(sd == 0.0):
        raise DegenerateColumn("a transformed marginal column is constant")
    R = np.corrcoef(z, rowvar=False)
    if model.d_y == 1:
        R = np.eye(1)
    model.rho_ = floor_to_correlation(np.atleast_2d(R))
    return model.rho_


# ---------------------------------------------------------------------------
# closed-form reference model


class DiagonalGaussian:
    """Independent per-column Gaussian fitted by train moments; the
    win-table and margin baselines."""

    family = "diag-gauss"

    def __init__(self, mean: np.ndarray, sd: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.sd = np.asarray(sd, dtype=np.float64)
        self.d_y = self.mean.shape[0]

    @staticmethod
    def fit(Y_train: np.ndarray) -> "DiagonalGaussian":
        Y = np.asarray(Y_train, dtype=np.float64)
        return DiagonalGaussian(Y.mean(axis=0), Y.std(axis=0))

    def logpdf(self, X, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return norm.logpdf(Y, self.mean, self.sd).sum(axis=1)

    def pair_logpdf(self, X, Y, i: int, j: int) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return (norm.logpdf(Y[:, i], self.mean[i], self.sd[i])
                + norm.logpdf(Y[:, j], self.mean[j], self.sd[j]))

    def marginal_cdf(self, X, ycol, k: int) -> np.ndarray:
        return norm.cdf(np.asarray(ycol, dtype=np.float64).reshape(-1),
                        self.mean[k], self.sd[k])

    def pair_cdf(self, X, yi, yj, i: int, j: int) -> np.ndarray:
        return self.marginal_cdf(X, yi, i) * self.marginal_cdf(X, yj, j)

    def cdf(self, X, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return norm.cdf(Y, self.mean, self.sd).prod(axis=1)


# ---------------------------------------------------------------------------
# registry


FAMILIES = ("umonde", "monde-made", "copula-const", "copula-param", "pumonde")

_CONFIG_TYPES = {
    "umonde": UmondeConfig,
    "monde-made": MadeConfig,
    "copula-const": CopulaConfig,
    "copula-param": CopulaConfig,
    "pumonde": PumondeConfig,
}


def default_config(family: str):
    try:
        cls = _CONFIG_TYPES[family]
    except KeyError:
        raise UnknownFamily(f"unknown model family {family!r}") from None
    if family == "copula-param":
        return cls(corr="param")
    return cls()


def build_model(family: str, d_x: int, d_y: int, stats: StandardStats,
                config=None, seed: int = 0):
    if family not in FAMILIES:
        raise UnknownFamily(f"unknown model family {family!r}")
    if config is None:
        config = default_config(family)
    if family == "umonde":
        return UnivariateMonde(d_x, stats, config, seed=seed)
    if family == "monde-made":
        return MondeMade(d_x, d_y, stats, config, seed=seed)
    if family == "pumonde":
        return Pumonde(d_x, d_y, stats, config, seed=seed)
    expect = "const" if family == "copula-const" else "param"
    if config.corr != expect:
        config = CopulaConfig(x_widths=config.x_widths,
                              xpart_widths=config.xpart_widths,
                              y_widths=config.y_widths, corr=expect,
                              corr_widths=config.corr_widths)
    return CopulaMonde(d_x, d_y, stats, config, seed=seed)
