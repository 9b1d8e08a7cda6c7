"""Dense tensor kernels: convolution, pooling, elementwise maps, correlation.

All functions operate on float64 numpy arrays with shapes
[channels, height, width] for feature maps and
[out_ch, in_ch, kh, kw] for kernel stacks. They are pure and
deterministic; every kernel has an explicit backward counterpart so the
autodiff layer can reuse one well-tested inner routine.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    # ascontiguousarray promotes 0-d to 1-d; keep scalars 0-d
    return np.ascontiguousarray(a) if a.ndim else a


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Gather sliding patches of ``x`` [C,H,W] into a [Ho*Wo, C*kh*kw] matrix."""
    c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[1], x.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError(
            f"window {kh}x{kw} larger than padded input {hp}x{wp} (axes H/W)"
        )
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    return win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw), ho, wo


def col2im(cols: np.ndarray, shape, kh, kw, stride, padding, ho, wo) -> np.ndarray:
    """Scatter-add the transpose of :func:`im2col`; used by backward passes."""
    c, h, w = shape
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding))
    g = cols.reshape(ho, wo, c, kh, kw).transpose(2, 0, 1, 3, 4)
    for dy in range(kh):
        for dx in range(kw):
            xp[:, dy : dy + ho * stride : stride, dx : dx + wo * stride : stride] += g[
                :, :, :, dy, dx
            ]
    if padding:
        return xp[:, padding : padding + h, padding : padding + w]
    return xp


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """2D cross-correlation-style convolution with zero padding.

    x: [Cin,H,W]; kernels: [Cout,Cin,kh,kw]; bias: [Cout] or None.
    """
    x = _as_f64(x)
    kernels = _as_f64(kernels)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(
            f"conv2d expects input rank 3 and kernels rank 4, got {x.ndim}/{kernels.ndim}"
        )
    cout, cin, kh, kw = kernels.shape
    if x.shape[0] != cin:
        raise ShapeError(
            f"channel mismatch on axis 0: input has {x.shape[0]}, kernels expect {cin}"
        )
    if stride < 1 or padding < 0:
        raise ShapeError(f"bad stride/padding {stride}/{padding}")
    cols, ho, wo = im2col(x, kh, kw, stride, padding)
    out = (cols @ kernels.reshape(cout, -1).T).T.reshape(cout, ho, wo)
    if bias is not None:
        bias = _as_f64(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} != ({cout},) on axis 0")
        out += bias[:, None, None]
    return out


def conv2d_backward(x, kernels, stride, padding, gout):
    """Gradients of conv2d w.r.t. (input, kernels, bias)."""
    cout, cin, kh, kw = kernels.shape
    cols, ho, wo = im2col(x, kh, kw, stride, padding)
    gflat = gout.reshape(cout, -1)
    gk = (gflat @ cols).reshape(kernels.shape)
    gcols = gflat.T @ kernels.reshape(cout, -1)
    gx = col2im(gcols, x.shape, kh, kw, stride, padding, ho, wo)
    gb = gout.sum(axis=(1, 2))
    return gx, gk, gb


def max_pool2d(x, window: int, stride: int) -> np.ndarray:
    x = _as_f64(x)
    c, h, w = x.shape
    if h < window or w < window:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return win.max(axis=(3, 4))


def max_pool2d_backward(x, window, stride, gout):
    c, h, w = x.shape
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    flat = win.reshape(c, ho, wo, -1)
    idx = flat.argmax(axis=3)  # first occurrence wins on ties
    gx = np.zeros_like(x)
    dy, dx = np.divmod(idx, window)
    ci, yi, xi = np.meshgrid(
        np.arange(c), np.arange(ho), np.arange(wo), indexing="ij"
    )
    np.add.at(gx, (ci, yi * stride + dy, xi * stride + dx), gout)
    return gx


def sigmoid(x) -> np.ndarray:
    x = _as_f64(x)
    e = np.exp(-np.abs(x))  # never overflows
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh_op(x) -> np.ndarray:
    return np.tanh(_as_f64(x))


def hadamard(a, b) -> np.ndarray:
    a, b = _as_f64(a), _as_f64(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard dims mismatch: {a.shape} vs {b.shape}")
    return a * b


def cross_correlate(search, template) -> np.ndarray:
    """Valid-mode multi-channel correlation map, shape [1, Hs-Ht+1, Ws-Wt+1].

    Each map cell is the inner product between the template and the
    like-sized patch of the search features at that offset.
    """
    search = _as_f64(search)
    template = _as_f64(template)
    if search.ndim != 3 or template.ndim != 3:
        raise ShapeError("cross_correlate expects rank-3 inputs")
    if search.shape[0] != template.shape[0]:
        raise ShapeError(
            f"channel mismatch on axis 0: {search.shape[0]} vs {template.shape[0]}"
        )
    if template.shape[1] > search.shape[1] or template.shape[2] > search.shape[2]:
        raise ShapeError(
            f"template {template.shape[1:]} larger than search {search.shape[1:]}"
        )
    return conv2d(search, template[None, ...], stride=1, padding=0)


def cross_correlate_backward(search, template, gout):
    """Gradients w.r.t. both correlation inputs (the layer is bilinear)."""
    gsearch, gtemplate, _ = conv2d_backward(
        search, template[None, ...], 1, 0, gout
    )
    return gsearch, gtemplate[0]


def argmax2d(corr_map) -> tuple[int, int]:
    """Row-major first occurrence of the maximum of a [1,H,W] map."""
    m = _as_f64(corr_map)
    if m.ndim != 3 or m.shape[0] != 1 or m.size == 0:
        raise ShapeError(f"expected non-empty [1,H,W] map, got {m.shape}")
    flat = int(np.argmax(m[0]))
    return flat // m.shape[2], flat % m.shape[2]
