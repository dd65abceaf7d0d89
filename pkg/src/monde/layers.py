"""Constrained linear layers and activation derivative chains.

Weight entries carry per-entry tags: FREE passes through, NONNEG is squared
(so the effective weight is >= 0 for any raw value), ZERO is masked out of
both the forward pass and the gradient. Activations provide their derivative
chains up to fourth order as tape expressions, which is what lets tangent
channels ride through a layer exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import graph as g
from .graph import MDual, ParamStore, Tape, Var

__all__ = [
    "FREE", "NONNEG", "ZERO", "InvalidDim",
    "scaled_tanh01", "softplus_stable", "nonneg_reparam",
    "activation_derivs", "apply_activation", "linear_apply", "glorot_init",
    "ConstrainedLinear", "MadeMaskSet", "build_made_masks",
]

FREE = ParamStore.FREE
NONNEG = ParamStore.NONNEG
ZERO = ParamStore.ZERO

ACTIVATIONS = ("identity", "tanh", "sigmoid", "scaled-tanh01", "softplus-stable")


class InvalidDim(ValueError):
    """Dimension arguments outside the supported range."""


# ---------------------------------------------------------------------------
# plain ndarray activations (data-side use and oracles)


def scaled_tanh01(x):
    """tanh squashed onto (0,1): (tanh(x)+1)/2."""
    return 0.5 * (np.tanh(x) + 1.0)


def softplus_stable(x):
    """log(1+e^x) computed without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def nonneg_reparam(w):
    """Raw-to-effective map for NONNEG entries."""
    w = np.asarray(w, dtype=np.float64)
    return w * w


def apply_activation(tag: str, x):
    if tag == "identity":
        return np.asarray(x, dtype=np.float64)
    if tag == "tanh":
        return np.tanh(x)
    if tag == "sigmoid":
        return expit(x)
    if tag == "scaled-tanh01":
        return scaled_tanh01(x)
    if tag == "softplus-stable":
        return softplus_stable(x)
    raise InvalidDim(f"unknown activation {tag!r}")


# ---------------------------------------------------------------------------
# derivative chains as tape expressions
#
# Each builder takes the pre-activation Var and an order, and returns
# [f, f', ..., f^(order)] written in terms of the primal activation value.


def _tanh_chain(v: Var, order: int) -> list[Var]:
    t = g.tanh(v)
    out = [t]
    if order >= 1:
        u = 1.0 - g.square(t)
        out.append(u)
    if order >= 2:
        out.append(-2.0 * t * u)
    if order >= 3:
        out.append((6.0 * g.square(t) - 2.0) * u)
    if order >= 4:
        out.append(t * (16.0 - 24.0 * g.square(t)) * u)
    return out


def _scaled_tanh01_chain(v: Var, order: int) -> list[Var]:
    # (tanh(x)+1)/2: same chain as tanh, halved
    chain = _tanh_chain(v, order)
    out = [0.5 * (chain[0] + 1.0)]
    out.extend(0.5 * c for c in chain[1:])
    return out


def _sigmoid_chain(v: Var, order: int) -> list[Var]:
    s = g.sigmoid(v)
    out = [s]
    if order >= 1:
        d1 = s * (1.0 - s)
        out.append(d1)
    if order >= 2:
        out.append(d1 * (1.0 - 2.0 * s))
    if order >= 3:
        q = 1.0 - 6.0 * s + 6.0 * g.square(s)
        out.append(d1 * q)
    if order >= 4:
        out.append(d1 * (1.0 - 2.0 * s) * q + (12.0 * s - 6.0) * g.square(d1))
    return out


def _softplus_chain(v: Var, order: int) -> list[Var]:
    # d/dx softplus = sigmoid, so the chain is the sigmoid chain shifted
    out = [g.softplus(v)]
    if order >= 1:
        out.extend(_sigmoid_chain(v, order - 1))
    return out


def _identity_chain(v: Var, order: int) -> list[Var]:
    tape = v.tape
    out = [v]
    if order >= 1:
        out.append(tape.const(np.ones_like(v.value)))
    for _ in range(2, order + 1):
        out.append(tape.const(np.zeros_like(v.value)))
    return out


_CHAINS = {
    "identity": _identity_chain,
    "tanh": _tanh_chain,
    "sigmoid": _sigmoid_chain,
    "scaled-tanh01": _scaled_tanh01_chain,
    "softplus-stable": _softplus_chain,
}


def activation_derivs(tag: str):
    try:
        return _CHAINS[tag]
    except KeyError:
        raise InvalidDim(f"unknown activation {tag!r}") from None


# ---------------------------------------------------------------------------
# constrained linear


def glorot_init(rng: np.random.Generator, in_dim: int, out_dim: int,
                tags: np.ndarray) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-limit, limit, size=(in_dim, out_dim))
    w[tags == NONNEG] *= 0.5
    w[tags == ZERO] = 0.0
    return w


def linear_apply(x, w, b, tags, activation: str):
    """Single plain-ndarray application: activation(x @ w_eff + b)."""
    w = np.asarray(w, dtype=np.float64)
    tags = np.asarray(tags)
    w_eff = np.where(tags == NONNEG, w * w, np.where(tags == ZERO, 0.0, w))
    return apply_activation(activation, np.asarray(x) @ w_eff + np.asarray(b))


class ConstrainedLinear:
    """One linear layer with per-entry weight tags and an activation.
    Registers `<name>.w` and `<name>.b` in the parameter store."""

    def __init__(self, name: str, in_dim: int, out_dim: int,
                 tags: np.ndarray | int, activation: str):
        if in_dim < 1 or out_dim < 1:
            raise InvalidDim(f"layer {name!r} needs positive dims")
        if activation not in ACTIVATIONS:
            raise InvalidDim(f"unknown activation {activation!r}")
        if isinstance(tags, (int, np.integer)):
            tags = np.full((in_dim, out_dim), int(tags), dtype=np.int8)
        tags = np.asarray(tags, dtype=np.int8)
        if tags.shape != (in_dim, out_dim):
            raise InvalidDim(f"layer {name!r} tag shape {tags.shape} != {(in_dim, out_dim)}")
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.tags = tags
        self.activation = activation
        self.all_free = bool(np.all(tags == FREE))
        self.nn_mask = (tags == NONNEG).astype(np.float64)
        self.free_mask = (tags == FREE).astype(np.float64)

    def register(self, store: ParamStore, rng: np.random.Generator):
        store.add(f"{self.name}.w", glorot_init(rng, self.in_dim, self.out_dim, self.tags),
                  tags=self.tags)
        store.add(f"{self.name}.b", np.zeros(self.out_dim))

    def effective_weight(self, tape: Tape, store: ParamStore) -> Var:
        w = tape.param(store, f"{self.name}.w")
        if self.all_free:
            return w
        return g.square(w) * self.nn_mask + w * self.free_mask

    def apply(self, tape: Tape, store: ParamStore, x: MDual) -> MDual:
        w = self.effective_weight(tape, store)
        b = tape.param(store, f"{self.name}.b")
        z = g.md_affine(x, w, b)
        if self.activation == "identity":
            return z
        return g.md_unary(z, activation_derivs(self.activation))


# ---------------------------------------------------------------------------
# autoregressive masks


@dataclass
class MadeMaskSet:
    """Tag matrices for an autoregressive stack of width K*M.

    input_tags:  (D+K, K*M)  covariate rows free; response row k1 against
                 column group k2 is NONNEG on k1==k2, FREE on k1<k2, ZERO on
                 k1>k2.
    hidden_tags: (K*M, K*M)  same rule on group indices.
    output_tags: (K*M, K)    collapsed to one column per response dim.
    direct_tags: (D+K, K)    the no-hidden-layer collapse of the same rule.
    """

    d_x: int
    d_y: int
    m: int
    input_tags: np.ndarray
    hidden_tags: np.ndarray
    output_tags: np.ndarray
    direct_tags: np.ndarray


def _group_rule(k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
    tags = np.full(np.broadcast_shapes(k1.shape, k2.shape), FREE, dtype=np.int8)
    tags[k1 == k2] = NONNEG
    tags[k1 > k2] = ZERO
    return tags


def build_made_masks(d_x: int, d_y: int, m: int) -> MadeMaskSet:
    if d_y < 1 or m < 1:
        raise InvalidDim(f"need d_y >= 1 and m >= 1, got d_y={d_y}, m={m}")
    if d_x < 0:
        raise InvalidDim(f"need d_x >= 0, got {d_x}")
    K, M = d_y, m
    col_group = np.tile(np.arange(K), M)          # unit j belongs to group j % K

    resp = _group_rule(np.arange(K)[:, None], col_group[None, :])
    input_tags = np.concatenate(
        [np.full((d_x, K * M), FREE, dtype=np.int8), resp], axis=0)

    hidden_tags = _group_rule(col_group[:, None], col_group[None, :])

    output_tags = _group_rule(col_group[:, None], np.arange(K)[None, :])

    direct_tags = np.concatenate(
        [np.full((d_x, K), FREE, dtype=np.int8),
         _group_rule(np.arange(K)[:, None], np.arange(K)[None, :])], axis=0)

    return MadeMaskSet(d_x, d_y, m, input_tags, hidden_tags, output_tags, direct_tags)
