"""Tape-based reverse-mode autodiff over numpy arrays, with forward
multi-tangent channels for exact derivatives w.r.t. selected inputs.

Everything is float64 and batch-first: a value is an ndarray whose leading
axis indexes rows. The forward pass can carry extra "channels" next to the
primal value, one per subset of requested tangent directions; channel
arithmetic is expressed in the same elementary ops that the tape records, so
reverse mode differentiates tangent-valued losses with no extra rules.

Channel bitmask convention: direction i owns bit (1 << i); channel 0 is the
primal. A missing channel is structurally zero, which keeps towers that do
not depend on any requested direction free of tangent cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np
from scipy.special import expit, ndtri as _ndtri

__all__ = [
    "GraphError", "TapeConsumed", "NumericalFailure", "UnsupportedOp",
    "Tape", "Var", "ChannelSpec", "MDual", "ParamStore",
    "TangentRequest", "ComputeGraph", "GraphRun",
    "eval_forward", "eval_with_tangents", "backward_params",
    "finite_diff_check", "custom_op",
    "md_const", "md_add", "md_sub", "md_mul", "md_scale", "md_affine",
    "md_concat", "md_unary",
]

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))


class GraphError(Exception):
    """Base class for engine failures."""


class TapeConsumed(GraphError):
    """Raised when backward() is invoked twice on one tape."""


class NumericalFailure(GraphError):
    """A forward value came out non-finite while checking was enabled."""

    def __init__(self, op: str, node_id: int):
        super().__init__(f"non-finite value in op '{op}' (node {node_id})")
        self.op = op
        self.node_id = node_id


class UnsupportedOp(GraphError):
    """Requested an operation or mode the engine does not provide."""


# ---------------------------------------------------------------------------
# tape and variables


class Var:
    """A node value on a tape. Holds the forward ndarray and, after
    backward(), the adjoint in .grad (None when the node needs no grad)."""

    __slots__ = ("value", "tape", "needs_grad", "grad", "node_id")

    def __init__(self, value: np.ndarray, tape: "Tape", needs_grad: bool = False):
        self.value = value
        self.tape = tape
        self.needs_grad = needs_grad
        self.grad = None
        self.node_id = -1

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar; scalars and ndarrays promote to constants
    def __add__(self, other):
        return add(self, _wrap(other, self.tape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.tape))

    def __rsub__(self, other):
        return sub(_wrap(other, self.tape), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.tape))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.tape))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.tape), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.tape))


class Tape:
    """Records ops for one forward pass. check_finite guards every produced
    value (used for public single-point evaluation); training loops switch it
    off and rely on batch-level loss/grad checks instead."""

    def __init__(self, grad_enabled: bool = True, check_finite: bool = False):
        self.ops: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.grad_enabled = grad_enabled
        self.check_finite = check_finite
        self.consumed = False
        self._n_nodes = 0
        self._params: dict[str, Var] = {}
        self._param_store = None

    def const(self, value) -> Var:
        v = np.asarray(value, dtype=np.float64)
        out = Var(v, self, needs_grad=False)
        out.node_id = self._n_nodes
        self._n_nodes += 1
        return out

    def param(self, store: "ParamStore", name: str) -> Var:
        """One Var per parameter name per tape, so adjoints accumulate."""
        if self._param_store is None:
            self._param_store = store
        elif self._param_store is not store:
            raise UnsupportedOp("one tape cannot mix parameter stores")
        v = self._params.get(name)
        if v is None:
            v = Var(store.view(name), self, needs_grad=self.grad_enabled)
            v.node_id = self._n_nodes
            self._n_nodes += 1
            self._params[name] = v
        return v

    def backward(self, root: Var, seed=1.0) -> None:
        if self.consumed:
            raise TapeConsumed("tape already differentiated")
        self.consumed = True
        if not root.needs_grad:
            return
        seed = np.asarray(seed, dtype=np.float64)
        root.grad = np.broadcast_to(seed, root.value.shape).astype(np.float64)
        for out, parents, back in reversed(self.ops):
            g = out.grad
            if g is None:
                continue
            pgrads = back(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.needs_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), p.value.shape)
                if p.grad is None:
                    p.grad = pg.copy()
                else:
                    p.grad += pg

    def param_grads(self, store: "ParamStore") -> np.ndarray:
        """Flat gradient in the store's layout; zeros for untouched names."""
        flat = np.zeros(store.size, dtype=np.float64)
        for name, var in self._params.items():
            if var.grad is not None:
                off, shape = store.layout[name]
                flat[off:off + int(np.prod(shape))] = var.grad.ravel()
        return flat


def _wrap(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.const(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _record(tape: Tape, value: np.ndarray, op: str,
            parents: tuple[Var, ...], backward: Callable) -> Var:
    value = np.asarray(value, dtype=np.float64)
    if tape.check_finite and not np.all(np.isfinite(value)):
        raise NumericalFailure(op, tape._n_nodes)
    out = Var(value, tape)
    out.node_id = tape._n_nodes
    tape._n_nodes += 1
    out.needs_grad = tape.grad_enabled and any(p.needs_grad for p in parents)
    if out.needs_grad:
        tape.ops.append((out, parents, backward))
    return out


def custom_op(tape: Tape, value, op: str, parents: tuple[Var, ...],
              backward: Callable) -> Var:
    """Extension point for fused primitives defined outside this module.
    `backward(adjoint)` must return one grad-or-None per parent."""
    return _record(tape, value, op, parents, backward)


# ---------------------------------------------------------------------------
# elementary ops


def add(a: Var, b: Var) -> Var:
    return _record(a.tape, a.value + b.value, "add", (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    return _record(a.tape, a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def neg(a: Var) -> Var:
    return _record(a.tape, -a.value, "neg", (a,), lambda g: (-g,))


def mul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return _record(a.tape, av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def div(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    out = av / bv
    return _record(a.tape, out, "div", (a, b),
                   lambda g: (g / bv, -g * out / bv))


def square(a: Var) -> Var:
    av = a.value
    return _record(a.tape, av * av, "square", (a,), lambda g: (2.0 * av * g,))


def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return _record(a.tape, av @ bv, "matmul", (a, b),
                   lambda g: (g @ bv.T, av.T @ g))


def vsum(a: Var, axis=None, keepdims: bool = False) -> Var:
    av = a.value

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape),)

    return _record(a.tape, av.sum(axis=axis, keepdims=keepdims), "sum", (a,), back)


def vmean(a: Var) -> Var:
    n = a.value.size
    return _record(a.tape, a.value.mean(), "mean", (a,),
                   lambda g: (np.broadcast_to(g / n, a.value.shape),))


def log(a: Var) -> Var:
    av = a.value
    return _record(a.tape, np.log(av), "log", (a,), lambda g: (g / av,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return _record(a.tape, out, "exp", (a,), lambda g: (g * out,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _record(a.tape, out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return _record(a.tape, out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Var) -> Var:
    out = expit(a.value)
    return _record(a.tape, out, "sigmoid", (a,),
                   lambda g: (g * out * (1.0 - out),))


def softplus(a: Var) -> Var:
    # log(1+e^x) computed from the negative side so large x cannot overflow
    av = a.value
    out = np.log1p(np.exp(-np.abs(av))) + np.maximum(av, 0.0)
    return _record(a.tape, out, "softplus", (a,), lambda g: (g * expit(av),))


def ndtri_op(a: Var) -> Var:
    # inverse standard normal CDF; d/dp = 1/phi(z) = sqrt(2pi) exp(z^2/2)
    out = _ndtri(a.value)
    return _record(a.tape, out, "ndtri", (a,),
                   lambda g: (g * _SQRT_2PI * np.exp(0.5 * out * out),))


def clip(a: Var, lo: float, hi: float) -> Var:
    av = a.value
    mask = (av >= lo) & (av <= hi)
    return _record(a.tape, np.clip(av, lo, hi), "clip", (a,),
                   lambda g: (g * mask,))


def maximum_scalar(a: Var, c: float) -> Var:
    av = a.value
    mask = av >= c
    return _record(a.tape, np.maximum(av, c), "max_scalar", (a,),
                   lambda g: (g * mask,))


def concat(parts: list[Var], axis: int = 1) -> Var:
    vals = [p.value for p in parts]
    widths = [v.shape[axis] for v in vals]
    offs = np.cumsum([0] + widths)

    def back(g):
        return tuple(np.take(g, range(offs[i], offs[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _record(parts[0].tape, np.concatenate(vals, axis=axis), "concat",
                   tuple(parts), back)


def take_cols(a: Var, j0: int, j1: int) -> Var:
    av = a.value

    def back(g):
        z = np.zeros_like(av)
        z[:, j0:j1] = g
        return (z,)

    return _record(a.tape, av[:, j0:j1], "take_cols", (a,), back)


def reshape(a: Var, shape: tuple) -> Var:
    av = a.value
    return _record(a.tape, av.reshape(shape), "reshape", (a,),
                   lambda g: (g.reshape(av.shape),))


def expand_dims(a: Var, axis: int) -> Var:
    return reshape(a, np.expand_dims(a.value, axis).shape)


# ---------------------------------------------------------------------------
# tangent channels


class ChannelSpec:
    """Fixed set of direction-subset bitmasks a forward pass propagates.
    Product channels convolve disjoint subsets; subsets outside the spec are
    truncated, which is exact because every retained term is multilinear in
    the requested directions."""

    __slots__ = ("masks", "order", "pairs")

    def __init__(self, masks):
        mlist = sorted(set(int(m) for m in masks) | {0})
        self.masks = tuple(mlist)
        self.order = max(bin(m).count("1") for m in mlist)
        self.pairs = {
            t: tuple((a, b) for a in mlist for b in mlist
                     if (a & b) == 0 and (a | b) == t)
            for t in mlist
        }

    @staticmethod
    def primal() -> "ChannelSpec":
        return ChannelSpec([0])

    @staticmethod
    def jets(ndir: int) -> "ChannelSpec":
        """First-order channels only: one per direction, no cross terms."""
        return ChannelSpec([0] + [1 << i for i in range(ndir)])

    @staticmethod
    def mixed(ndir: int) -> "ChannelSpec":
        """All 2^ndir subsets; ndir capped to keep channel counts sane."""
        if ndir > 4:
            raise UnsupportedOp(f"mixed channels support at most 4 directions, got {ndir}")
        return ChannelSpec(range(1 << ndir))

    @staticmethod
    def pair_channels(ndir: int) -> "ChannelSpec":
        """Primal, singletons, and all two-direction subsets: enough to read
        every mixed second partial in one pass."""
        masks = [0] + [1 << i for i in range(ndir)]
        masks += [(1 << i) | (1 << j) for i, j in combinations(range(ndir), 2)]
        return ChannelSpec(masks)


class MDual:
    """A multi-dual number: dict of channel Vars keyed by subset bitmask.
    Channel 0 is the primal and always present; a missing channel is
    structurally zero."""

    __slots__ = ("spec", "ch")

    def __init__(self, spec: ChannelSpec, ch: dict[int, Var]):
        self.spec = spec
        self.ch = ch

    @property
    def primal(self) -> Var:
        return self.ch[0]


def md_const(spec: ChannelSpec, v: Var) -> MDual:
    return MDual(spec, {0: v})


def md_add(a: MDual, b: MDual) -> MDual:
    out = dict(a.ch)
    for m, v in b.ch.items():
        out[m] = add(out[m], v) if m in out else v
    return MDual(a.spec, out)


def md_sub(a: MDual, b: MDual) -> MDual:
    out = dict(a.ch)
    for m, v in b.ch.items():
        out[m] = sub(out[m], v) if m in out else neg(v)
    return MDual(a.spec, out)


def md_scale(a: MDual, s) -> MDual:
    """Multiply every channel by a channel-free factor (scalar, ndarray, or
    Var that does not depend on any tangent direction)."""
    tape = a.ch[0].tape
    sv = _wrap(s, tape)
    return MDual(a.spec, {m: mul(v, sv) for m, v in a.ch.items()})


def md_mul(a: MDual, b: MDual) -> MDual:
    """Channelwise product: out[t] = sum over disjoint s1|s2 == t."""
    spec = a.spec
    out: dict[int, Var] = {}
    for t in spec.masks:
        acc = None
        for m1, m2 in spec.pairs[t]:
            v1 = a.ch.get(m1)
            v2 = b.ch.get(m2)
            if v1 is None or v2 is None:
                continue
            term = mul(v1, v2)
            acc = term if acc is None else add(acc, term)
        if acc is not None:
            out[t] = acc
    return MDual(spec, out)


def md_affine(x: MDual, w: Var, bias: Var | None = None) -> MDual:
    out = {m: matmul(v, w) for m, v in x.ch.items()}
    if bias is not None:
        out[0] = add(out[0], bias)
    return MDual(x.spec, out)


def md_concat(parts: list[MDual], axis: int = 1) -> MDual:
    spec = parts[0].spec
    tape = parts[0].ch[0].tape
    masks = set()
    for p in parts:
        masks |= set(p.ch.keys())
    out = {}
    for m in sorted(masks):
        cols = []
        for p in parts:
            v = p.ch.get(m)
            if v is None:
                v = tape.const(np.zeros_like(p.ch[0].value))
            cols.append(v)
        out[m] = concat(cols, axis=axis)
    return MDual(spec, out)


def md_take_cols(x: MDual, j0: int, j1: int) -> MDual:
    return MDual(x.spec, {m: take_cols(v, j0, j1) for m, v in x.ch.items()})


def md_unary(x: MDual, derivs: Callable[[Var, int], list[Var]]) -> MDual:
    """Apply an elementwise function through the channels via truncated
    Taylor: f(p + n) = sum_j f^(j)(p)/j! n^j with n nilpotent.

    `derivs(primal_var, order)` returns [f(p), f'(p), ..., f^(order)(p)] as
    Vars built from tape ops, so reverse mode sees the whole chain."""
    spec = x.spec
    order = min(spec.order, _max_nil_order(x))
    fs = derivs(x.ch[0], order)
    out = {0: fs[0]}
    if order == 0:
        return MDual(spec, out)
    nil = {m: v for m, v in x.ch.items() if m != 0}
    if not nil:
        return MDual(spec, out)
    power = nil
    fact = 1.0
    for j in range(1, order + 1):
        fact *= j
        if j > 1:
            power = _nil_mul(spec, power, nil)
            if not power:
                break
        coef = 1.0 / fact
        for m, v in power.items():
            term = mul(fs[j], v) if coef == 1.0 else mul(fs[j], mul(v, v.tape.const(coef)))
            out[m] = add(out[m], term) if m in out else term
    return MDual(spec, out)


def _max_nil_order(x: MDual) -> int:
    # no product of nilpotent channels can reach outside the union of the
    # direction bits actually present, so cap the Taylor depth there
    union = 0
    for m in x.ch:
        union |= m
    return min(x.spec.order, bin(union).count("1"))


def _nil_mul(spec: ChannelSpec, a: dict[int, Var], b: dict[int, Var]) -> dict[int, Var]:
    out: dict[int, Var] = {}
    for t in spec.masks:
        if t == 0:
            continue
        acc = None
        for m1, m2 in spec.pairs[t]:
            if m1 == 0 or m2 == 0:
                continue
            v1 = a.get(m1)
            v2 = b.get(m2)
            if v1 is None or v2 is None:
                continue
            term = mul(v1, v2)
            acc = term if acc is None else add(acc, term)
        if acc is not None:
            out[t] = acc
    return out


# ---------------------------------------------------------------------------
# parameter store


class ParamStore:
    """Named parameter blocks in one flat float64 vector, with per-entry
    constraint tags. Tag codes: 0 free, 1 nonneg (squared reparam), 2 zero
    (masked out of the forward and the gradient)."""

    FREE, NONNEG, ZERO = 0, 1, 2

    def __init__(self):
        self._staged: list[tuple[str, np.ndarray, np.ndarray]] = []
        self.layout: dict[str, tuple[int, tuple]] = {}
        self.flat: np.ndarray | None = None
        self.tags: dict[str, np.ndarray] = {}

    def add(self, name: str, init: np.ndarray, tags: np.ndarray | None = None):
        if self.flat is not None:
            raise UnsupportedOp("store already frozen")
        if name in (n for n, _, _ in self._staged):
            raise UnsupportedOp(f"duplicate parameter name {name!r}")
        init = np.asarray(init, dtype=np.float64)
        if tags is None:
            tags = np.zeros(init.shape, dtype=np.int8)
        tags = np.asarray(tags, dtype=np.int8)
        if tags.shape != init.shape:
            raise UnsupportedOp(f"tag shape mismatch for {name!r}")
        self._staged.append((name, init, tags))

    def freeze(self):
        off = 0
        chunks = []
        for name, init, tags in self._staged:
            self.layout[name] = (off, init.shape)
            self.tags[name] = tags
            chunks.append(init.ravel())
            off += init.size
        self.flat = np.concatenate(chunks) if chunks else np.zeros(0)
        self._staged.clear()
        return self

    @property
    def size(self) -> int:
        return 0 if self.flat is None else self.flat.size

    def view(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        return self.flat[off:off + int(np.prod(shape))].reshape(shape)

    def snapshot(self) -> np.ndarray:
        return self.flat.copy()

    def restore(self, snap: np.ndarray):
        self.flat[:] = snap

    def names(self):
        return list(self.layout.keys())


# ---------------------------------------------------------------------------
# whole-graph helpers


@dataclass
class TangentRequest:
    """Directions to differentiate along. Each direction names an input and
    gives a vector over that input's width; `order` is "first" (independent
    jets) or "mixed" (all cross partials, at most 4 directions)."""

    directions: list[tuple[str, np.ndarray]]
    order: str = "first"


@dataclass
class GraphRun:
    tape: Tape
    output: MDual
    spec: ChannelSpec


class ComputeGraph:
    """A forward function over named inputs plus a parameter store.
    `forward(tape, mduals)` consumes a dict of per-input MDuals and returns
    one MDual output."""

    def __init__(self, params: ParamStore, input_dims: dict[str, int],
                 forward: Callable[[Tape, dict[str, MDual]], MDual]):
        self.params = params
        self.input_dims = dict(input_dims)
        self.forward = forward
        self._last_run: GraphRun | None = None

    def run(self, inputs: dict[str, np.ndarray],
            req: TangentRequest | None = None,
            grad: bool = False, check_finite: bool = True) -> GraphRun:
        for name in inputs:
            if name not in self.input_dims:
                raise UnsupportedOp(f"unknown input {name!r}")
        tape = Tape(grad_enabled=grad, check_finite=check_finite)
        if req is None:
            spec = ChannelSpec.primal()
        elif req.order == "first":
            spec = ChannelSpec.jets(len(req.directions))
        elif req.order == "mixed":
            spec = ChannelSpec.mixed(len(req.directions))
        else:
            raise UnsupportedOp(f"unknown tangent order {req.order!r}")
        mduals: dict[str, MDual] = {}
        for name, width in self.input_dims.items():
            arr = np.asarray(inputs[name], dtype=np.float64)
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            if arr.shape[1] != width:
                raise UnsupportedOp(
                    f"input {name!r} has width {arr.shape[1]}, expected {width}")
            ch = {0: tape.const(arr)}
            if req is not None:
                for i, (dname, dvec) in enumerate(req.directions):
                    if dname != name:
                        continue
                    dvec = np.asarray(dvec, dtype=np.float64).reshape(1, -1)
                    if dvec.shape[1] != width:
                        raise UnsupportedOp(f"direction {i} width mismatch")
                    ch[1 << i] = tape.const(np.broadcast_to(dvec, arr.shape))
            mduals[name] = MDual(spec, ch)
        out = self.forward(tape, mduals)
        run = GraphRun(tape, out, spec)
        self._last_run = run
        return run


def eval_forward(graph: ComputeGraph, inputs: dict[str, np.ndarray]) -> np.ndarray:
    run = graph.run(inputs, req=None, grad=False)
    return run.output.primal.value


def eval_with_tangents(graph: ComputeGraph, inputs: dict[str, np.ndarray],
                       req: TangentRequest):
    """Returns (primal, {mask: channel value}) for every non-primal channel
    the request produces."""
    run = graph.run(inputs, req=req, grad=False)
    prim = run.output.primal.value
    tangents = {m: v.value for m, v in run.output.ch.items() if m != 0}
    return prim, tangents


def backward_params(graph: ComputeGraph, inputs: dict[str, np.ndarray],
                    req: TangentRequest | None = None,
                    channel: int = 0, adjoint=1.0) -> np.ndarray:
    """Gradient w.r.t. all parameters of sum(adjoint * output[channel]).
    Runs a fresh differentiable forward pass; a second backward on the same
    run would raise TapeConsumed, which tests exercise via GraphRun."""
    run = graph.run(inputs, req=req, grad=True)
    target = run.output.ch.get(channel)
    if target is None:
        raise UnsupportedOp(f"output has no channel {channel}")
    run.tape.backward(target, seed=adjoint)
    return run.tape.param_grads(graph.params)


def finite_diff_check(graph: ComputeGraph, inputs: dict[str, np.ndarray],
                      req: TangentRequest | None = None,
                      h: float = 1e-5) -> float:
    """Worst relative error between analytic parameter gradients (and, when
    requested, first-order input tangents) and central differences. Returns
    +inf if any probe fails numerically."""

    def scalar(inp) -> float:
        return float(eval_forward(graph, inp).sum())

    try:
        worst = 0.0
        grads = backward_params(graph, inputs, req=None)
        flat = graph.params.flat
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = scalar(inputs)
            flat[i] = keep - h
            dn = scalar(inputs)
            flat[i] = keep
            fd = (up - dn) / (2.0 * h)
            worst = max(worst, _rel_err(grads[i], fd))
        if req is not None and req.order == "first":
            _, tangents = eval_with_tangents(graph, inputs, req)
            for i, (name, dvec) in enumerate(req.directions):
                dvec = np.asarray(dvec, dtype=np.float64)
                shifted = dict(inputs)
                base = np.asarray(inputs[name], dtype=np.float64)
                shifted[name] = base + h * dvec
                up = scalar(shifted)
                shifted[name] = base - h * dvec
                dn = scalar(shifted)
                fd = (up - dn) / (2.0 * h)
                an = float(tangents[1 << i].sum())
                worst = max(worst, _rel_err(an, fd))
        return worst
    except NumericalFailure:
        return float("inf")


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)
