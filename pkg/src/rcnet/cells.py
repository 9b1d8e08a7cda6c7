"""Convolutional recurrent cells and the severed-recurrence template encoder.

The LSTM variant follows the gated form

    i, f, o = sigmoid(w_x. * x_t + w_h. * h_prev + b_.)
    c_t     = f o c_prev + i o tanh(w_xc * x_t + w_hc * h_prev + b_c)
    h_t     = o o tanh(c_t)

with '*' a same-padded convolution and 'o' the Hadamard product. The
candidate-memory coupling on h_prev is convolutional by default; a
per-channel Hadamard coupling is available behind ``literal_coupling``
for study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamSet
from .errors import ShapeError

LSTM_GATES = ("i", "f", "c", "o")
GRU_GATES = ("z", "r", "h")


@dataclass
class ConvLstmWeights:
    """Leaf nodes for one LSTM cell, bound for a single forward pass."""

    w_xi: Node; w_hi: Node; b_i: Node
    w_xf: Node; w_hf: Node; b_f: Node
    w_xc: Node; w_hc: Node; b_c: Node
    w_xo: Node; w_ho: Node; b_o: Node
    k: int = 3
    literal_coupling: bool = False


@dataclass
class ConvGruWeights:
    w_xz: Node; w_hz: Node; b_z: Node
    w_xr: Node; w_hr: Node; b_r: Node
    w_xh: Node; w_hh: Node; b_h: Node
    k: int = 3


@dataclass
class ConvLstmState:
    h: Node
    c: Node


def _uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    s = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-s, s, size=shape)


def init_conv_lstm(params: ParamSet, prefix: str, in_ch: int, ch: int, k: int,
                   rng: np.random.Generator, literal_coupling: bool = False) -> None:
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    for g in LSTM_GATES:
        params.add(f"{prefix}.w_x{g}", _uniform(rng, (ch, in_ch, k, k)))
        if g == "c" and literal_coupling:
            params.add(f"{prefix}.w_h{g}", _uniform(rng, (ch,)))
        else:
            params.add(f"{prefix}.w_h{g}", _uniform(rng, (ch, ch, k, k)))
        # positive forget bias so freshly initialized cells retain memory
        params.add(f"{prefix}.b_{g}", np.full(ch, 1.5) if g == "f" else np.zeros(ch))


def init_conv_gru(params: ParamSet, prefix: str, in_ch: int, ch: int, k: int,
                  rng: np.random.Generator) -> None:
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    for g in GRU_GATES:
        params.add(f"{prefix}.w_x{g}", _uniform(rng, (ch, in_ch, k, k)))
        params.add(f"{prefix}.w_h{g}", _uniform(rng, (ch, ch, k, k)))
        # z is the carry gate; bias it toward keeping the previous state
        params.add(f"{prefix}.b_{g}", np.full(ch, 1.5) if g == "z" else np.zeros(ch))


def bind_lstm(leaves: dict[str, Node], prefix: str, k: int,
              literal_coupling: bool = False) -> ConvLstmWeights:
    kw = {}
    for g in LSTM_GATES:
        kw[f"w_x{g}"] = leaves[f"{prefix}.w_x{g}"]
        kw[f"w_h{g}"] = leaves[f"{prefix}.w_h{g}"]
        kw[f"b_{g}"] = leaves[f"{prefix}.b_{g}"]
    return ConvLstmWeights(k=k, literal_coupling=literal_coupling, **kw)


def bind_gru(leaves: dict[str, Node], prefix: str, k: int) -> ConvGruWeights:
    kw = {}
    for g in GRU_GATES:
        kw[f"w_x{g}"] = leaves[f"{prefix}.w_x{g}"]
        kw[f"w_h{g}"] = leaves[f"{prefix}.w_h{g}"]
        kw[f"b_{g}"] = leaves[f"{prefix}.b_{g}"]
    return ConvGruWeights(k=k, **kw)


def zero_state(ch: int, h: int, w: int) -> ConvLstmState:
    return ConvLstmState(Node(np.zeros((ch, h, w))), Node(np.zeros((ch, h, w))))


def _gate(x: Node, h: Node, wx: Node, wh: Node, b: Node, pad: int) -> Node:
    return ad.add(ad.conv2d(x, wx, b, 1, pad), ad.conv2d(h, wh, None, 1, pad))


def conv_lstm_step(x_t: Node, prev: ConvLstmState, w: ConvLstmWeights
                   ) -> tuple[Node, ConvLstmState]:
    pad = w.k // 2
    i = ad.sigmoid(_gate(x_t, prev.h, w.w_xi, w.w_hi, w.b_i, pad))
    f = ad.sigmoid(_gate(x_t, prev.h, w.w_xf, w.w_hf, w.b_f, pad))
    o = ad.sigmoid(_gate(x_t, prev.h, w.w_xo, w.w_ho, w.b_o, pad))
    cand_x = ad.conv2d(x_t, w.w_xc, w.b_c, 1, pad)
    if w.literal_coupling:
        cand = ad.add(cand_x, ad.channel_scale(prev.h, w.w_hc))
    else:
        cand = ad.add(cand_x, ad.conv2d(prev.h, w.w_hc, None, 1, pad))
    c_t = ad.add(ad.mul(f, prev.c), ad.mul(i, ad.tanh(cand)))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, ConvLstmState(h_t, c_t)


def conv_gru_step(x_t: Node, h_prev: Node, w: ConvGruWeights) -> Node:
    pad = w.k // 2
    z = ad.sigmoid(_gate(x_t, h_prev, w.w_xz, w.w_hz, w.b_z, pad))
    r = ad.sigmoid(_gate(x_t, h_prev, w.w_xr, w.w_hr, w.b_r, pad))
    cand = ad.add(
        ad.conv2d(x_t, w.w_xh, w.b_h, 1, pad),
        ad.conv2d(ad.mul(r, h_prev), w.w_hh, None, 1, pad),
    )
    one_minus_z = ad.scale_shift(z, -1.0, 1.0)
    return ad.add(ad.mul(z, h_prev), ad.mul(one_minus_z, ad.tanh(cand)))


def template_encode(x: Node, w: ConvLstmWeights) -> Node:
    """LSTM step with the recurrence severed: zero previous state, zero forget.

    Shares weight storage with :func:`conv_lstm_step`; equivalent to a
    gated convolutional layer with tanh nonlinearity.
    """
    pad = w.k // 2
    i = ad.sigmoid(ad.conv2d(x, w.w_xi, w.b_i, 1, pad))
    o = ad.sigmoid(ad.conv2d(x, w.w_xo, w.b_o, 1, pad))
    c = ad.mul(i, ad.tanh(ad.conv2d(x, w.w_xc, w.b_c, 1, pad)))
    return ad.mul(o, ad.tanh(c))
