"""Reverse-mode differentiation on a recorded graph of tensor ops.

Nodes wrap float64 arrays and remember how they were produced; calling
:func:`backward` on a scalar node fills ``grad`` on every reachable node
in the reverse of recording order, which keeps accumulation
deterministic. Parameters live in a :class:`ParamSet` and are turned
into leaf nodes once per forward pass.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ContractError, NumericError, ShapeError

_ids = itertools.count()


class Node:
    __slots__ = ("value", "parents", "grad", "_backward", "_id")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad = None
        self._backward = backward
        self._id = next(_ids)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, id={self._id})"


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def backward(loss: Node) -> None:
    """Propagate d(loss)/d(node) to every node reachable from ``loss``."""
    if loss.value.ndim != 0:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    topo: list[Node] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack.append((node, True))
        for p in node.parents:
            if p._id not in seen:
                stack.append((p, False))
    loss.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --- primitive ops -------------------------------------------------------


def constant(value) -> Node:
    return Node(value)


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return Node(a.value + b.value, (a, b), bwd)


def mul(a: Node, b: Node) -> Node:
    out = ops.hadamard(a.value, b.value)

    def bwd(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return Node(out, (a, b), bwd)


def scale_shift(a: Node, scale: float, shift: float = 0.0) -> Node:
    def bwd(g):
        _accum(a, g * scale)

    return Node(a.value * scale + shift, (a,), bwd)


def sigmoid(a: Node) -> Node:
    s = ops.sigmoid(a.value)

    def bwd(g):
        _accum(a, g * s * (1.0 - s))

    return Node(s, (a,), bwd)


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)

    def bwd(g):
        _accum(a, g * (1.0 - t * t))

    return Node(t, (a,), bwd)


def conv2d(x: Node, w: Node, b: Node | None, stride: int = 1, padding: int = 0) -> Node:
    out = ops.conv2d(x.value, w.value, None if b is None else b.value, stride, padding)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gx, gw, gb = ops.conv2d_backward(x.value, w.value, stride, padding, g)
        _accum(x, gx)
        _accum(w, gw)
        if b is not None:
            _accum(b, gb)

    return Node(out, parents, bwd)


def max_pool2d(x: Node, window: int, stride: int) -> Node:
    out = ops.max_pool2d(x.value, window, stride)

    def bwd(g):
        _accum(x, ops.max_pool2d_backward(x.value, window, stride, g))

    return Node(out, (x,), bwd)


def cross_correlate(search: Node, template: Node) -> Node:
    out = ops.cross_correlate(search.value, template.value)

    def bwd(g):
        gs, gt = ops.cross_correlate_backward(search.value, template.value, g)
        _accum(search, gs)
        _accum(template, gt)

    return Node(out, (search, template), bwd)


def channel_scale(x: Node, v: Node) -> Node:
    """Per-channel scaling of a [C,H,W] map by a length-C vector."""
    if v.value.shape != (x.value.shape[0],):
        raise ShapeError(f"channel_scale: {v.value.shape} vs C={x.value.shape[0]}")
    out = x.value * v.value[:, None, None]

    def bwd(g):
        _accum(x, g * v.value[:, None, None])
        _accum(v, (g * x.value).sum(axis=(1, 2)))

    return Node(out, (x, v), bwd)


def flatten(x: Node) -> Node:
    shape = x.value.shape

    def bwd(g):
        _accum(x, g.reshape(shape))

    return Node(x.value.reshape(-1), (x,), bwd)


def concat(nodes: list[Node]) -> Node:
    sizes = [n.value.size for n in nodes]
    out = np.concatenate([n.value.reshape(-1) for n in nodes])
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            _accum(n, g[lo:hi].reshape(n.value.shape))

    return Node(out, tuple(nodes), bwd)


def affine(w: Node, x: Node, b: Node) -> Node:
    """w [out,in] @ x [in] + b [out]."""
    if w.value.shape[1] != x.value.shape[0] or b.value.shape[0] != w.value.shape[0]:
        raise ShapeError(
            f"affine shapes: w{w.value.shape} x{x.value.shape} b{b.value.shape}"
        )
    out = w.value @ x.value + b.value

    def bwd(g):
        _accum(w, np.outer(g, x.value))
        _accum(x, w.value.T @ g)
        _accum(b, g)

    return Node(out, (w, x, b), bwd)


def sum_all(x: Node) -> Node:
    def bwd(g):
        _accum(x, np.full_like(x.value, float(g)))

    return Node(np.asarray(x.value.sum()), (x,), bwd)


def pick(x: Node, index: int) -> Node:
    """Scalar element of a 1-D node."""

    def bwd(g):
        gg = np.zeros_like(x.value)
        gg[index] = float(g)
        _accum(x, gg)

    return Node(np.asarray(x.value[index]), (x,), bwd)


def mean_scalars(nodes: list[Node]) -> Node:
    inv = 1.0 / len(nodes)
    out = sum(float(n.value) for n in nodes) * inv

    def bwd(g):
        for n in nodes:
            _accum(n, np.asarray(float(g) * inv))

    return Node(np.asarray(out), tuple(nodes), bwd)


def sigmoid_cross_entropy(logit: Node, label: float) -> Node:
    """Numerically stable binary CE on a scalar logit node."""
    z = float(logit.value)
    loss = max(z, 0.0) - label * z + np.log1p(np.exp(-abs(z)))

    sz = float(ops.sigmoid(np.asarray([z]))[0])

    def bwd(g):
        _accum(logit, np.asarray(float(g) * (sz - label)))

    return Node(np.asarray(loss), (logit,), bwd)


# --- parameters ----------------------------------------------------------


@dataclass
class Param:
    value: np.ndarray
    frozen: bool = False


class ParamSet:
    """Named parameter tensors with per-parameter freeze flags."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value, frozen: bool = False) -> Param:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Param(np.asarray(value, dtype=np.float64), frozen)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def freeze(self, prefix: str) -> None:
        for name, p in self._params.items():
            if name.startswith(prefix):
                p.frozen = True

    def leaves(self) -> dict[str, Node]:
        """Fresh leaf nodes for one forward pass (values are shared storage)."""
        return {name: Node(p.value) for name, p in self._params.items()}


def collect_grads(params: ParamSet, leaves: dict[str, Node]) -> dict[str, np.ndarray]:
    return {
        name: (leaves[name].grad if leaves[name].grad is not None
               else np.zeros_like(params[name].value))
        for name in params.names()
    }


def grad_check(fn, params: ParamSet, eps: float = 1e-5,
               samples_per_tensor: int = 50, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a leaves dict to a scalar Node. A deterministic subset of
    entries is probed per tensor (all entries when the tensor is small).
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    leaves = params.leaves()
    loss = fn(leaves)
    if not np.isfinite(loss.value):
        raise NumericError("non-finite loss in grad_check")
    backward(loss)
    analytic = collect_grads(params, leaves)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        n = p.value.size
        if n <= samples_per_tensor:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=samples_per_tensor, replace=False)
        flat = p.value.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(params.leaves()).value)
            flat[i] = orig - eps
            fm = float(fn(params.leaves()).value)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite probe for {name}[{i}]")
            num = (fp - fm) / (2.0 * eps)
            a = aflat[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
