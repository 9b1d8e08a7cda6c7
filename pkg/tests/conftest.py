"""Shared oracles and fixtures.

The oracle implementations here are deliberately naive (nested loops,
direct transcriptions) and independent of the package's vectorized
kernels; tests compare the two.
"""

import math

import numpy as np
import pytest

from rcnet.localizer import BoundingBox
from rcnet.model import ModelConfig, RcnModel


def conv2d_loops(x, kernels, bias, stride, padding):
    """Six-nested-loop convolution oracle."""
    cout, cin, kh, kw = kernels.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for c in range(cout):
        for y in range(ho):
            for z in range(wo):
                acc = bias[c] if bias is not None else 0.0
                for ci in range(cin):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += xp[ci, y * stride + dy, z * stride + dx] \
                                * kernels[c, ci, dy, dx]
                out[c, y, z] = acc
    return out


def max_pool_loops(x, window, stride):
    c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((c, ho, wo))
    for ci in range(c):
        for y in range(ho):
            for z in range(wo):
                out[ci, y, z] = x[ci, y * stride : y * stride + window,
                                  z * stride : z * stride + window].max()
    return out


def cross_correlate_loops(search, template):
    c, hs, ws = search.shape
    _, ht, wt = template.shape
    out = np.zeros((1, hs - ht + 1, ws - wt + 1))
    for py in range(out.shape[1]):
        for px in range(out.shape[2]):
            acc = 0.0
            for ci in range(c):
                for qy in range(ht):
                    for qx in range(wt):
                        acc += search[ci, py + qy, px + qx] * template[ci, qy, qx]
            out[0, py, px] = acc
    return out


def scalar_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_lstm_step(x, h, c, w):
    """Direct scalar transcription of the gated cell equations.

    ``w`` is a dict of scalars keyed like the kernel names.
    """
    i = scalar_sigmoid(w["w_xi"] * x + w["w_hi"] * h + w["b_i"])
    f = scalar_sigmoid(w["w_xf"] * x + w["w_hf"] * h + w["b_f"])
    o = scalar_sigmoid(w["w_xo"] * x + w["w_ho"] * h + w["b_o"])
    c_new = f * c + i * math.tanh(w["w_xc"] * x + w["w_hc"] * h + w["b_c"])
    h_new = o * math.tanh(c_new)
    return h_new, c_new


def scalar_gru_step(x, h, w):
    z = scalar_sigmoid(w["w_xz"] * x + w["w_hz"] * h + w["b_z"])
    r = scalar_sigmoid(w["w_xr"] * x + w["w_hr"] * h + w["b_r"])
    cand = math.tanh(w["w_xh"] * x + w["w_hh"] * (r * h) + w["b_h"])
    return z * h + (1 - z) * cand


def scalar_template_encode(x, w):
    i = scalar_sigmoid(w["w_xi"] * x + w["b_i"])
    o = scalar_sigmoid(w["w_xo"] * x + w["b_o"])
    c = i * math.tanh(w["w_xc"] * x + w["b_c"])
    return o * math.tanh(c)


# --- crafted tracking model --------------------------------------------------


def crafted_tracker(channels=4, L=5) -> RcnModel:
    """Model whose forward pass reduces to h_t = tanh(tanh(local mean)).

    Saturated input/output gates and a zero forget gate make the
    recurrent step equal the severed template encoder, so window and
    template features match exactly and correlation localization is
    analytically transparent.
    """
    cfg = ModelConfig(channels=(channels,), backbone_k=3, rnn_channels=channels,
                      k=3, L=L, alpha=0.5, hidden=8, template_res=16,
                      window_res=32, seed=0)
    m = RcnModel(cfg)
    p = m.params
    p["backbone.conv0.w"].value[...] = 0.0
    for c in range(channels):
        p["backbone.conv0.w"].value[c, 0] = 1.0 / 9.0
    p["backbone.conv0.b"].value[...] = 0.0
    for g in ("i", "f", "c", "o"):
        p[f"cell0.w_x{g}"].value[...] = 0.0
        p[f"cell0.w_h{g}"].value[...] = 0.0
        p[f"cell0.b_{g}"].value[...] = 0.0
    p["cell0.b_i"].value[...] = 20.0
    p["cell0.b_f"].value[...] = -20.0
    p["cell0.b_o"].value[...] = 20.0
    for c in range(channels):
        p["cell0.w_xc"].value[c, c, 1, 1] = 1.0
    return m


def moving_patch_frames(n_frames, step_xy, start=(20.0, 24.0), frame=96,
                        patch=16, value=200):
    """Black frames with a textured bright patch translating at a fixed step."""
    rng = np.random.default_rng(3)
    texture = rng.uniform(100, 255, (patch, patch)).astype(np.uint8)
    frames, boxes = [], []
    x, y = start
    for _ in range(n_frames):
        f = np.zeros((frame, frame), dtype=np.uint8)
        xi, yi = int(round(x)), int(round(y))
        f[yi : yi + patch, xi : xi + patch] = texture
        frames.append(f)
        boxes.append(BoundingBox(xi, yi, patch, patch))
        x += step_xy[0]
        y += step_xy[1]
    return frames, boxes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
