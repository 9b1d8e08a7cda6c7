"""Search-window geometry and correlation-peak localization.

Boxes and windows are in frame pixel coordinates (top-left origin, y
down). Correlation peaks live on the feature grid of the window crop;
``peak_to_frame`` maps them back using the effective pixel pitch of one
feature cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ContractError


@dataclass
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ContractError(f"box extents must be positive: {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def clamped(self, frame_w: int, frame_h: int) -> "BoundingBox":
        """Slide the box inside the frame, preserving extents when possible."""
        w = min(self.w, frame_w)
        h = min(self.h, frame_h)
        x = min(max(self.x, 0.0), frame_w - w)
        y = min(max(self.y, 0.0), frame_h - h)
        return BoundingBox(x, y, w, h)

    def intersects(self, frame_w: int, frame_h: int) -> bool:
        return self.x < frame_w and self.y < frame_h and self.x + self.w > 0 and self.y + self.h > 0


@dataclass
class SearchWindowSpec:
    cx: float
    cy: float
    side: int
    alpha: float
    radius: float
    x0: int
    y0: int
    degenerate: bool = False


def make_search_window(prev_box: BoundingBox, alpha: float,
                       frame_dims: tuple[int, int]) -> SearchWindowSpec:
    """Square window of side max(W,H)+2R around the previous box center.

    R = alpha * max(W, H). The window slides inward when it crosses a
    frame border; if the frame itself is smaller than the window, the
    window degenerates to the largest centered square and is flagged.
    """
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    frame_w, frame_h = frame_dims
    m = max(prev_box.w, prev_box.h)
    radius = alpha * m
    side = int(round(m + 2 * radius))
    cx, cy = prev_box.center
    degenerate = False
    if side > min(frame_w, frame_h):
        side = min(frame_w, frame_h)
        degenerate = True
    x0 = int(round(cx - side / 2.0))
    y0 = int(round(cy - side / 2.0))
    x0 = min(max(x0, 0), frame_w - side)
    y0 = min(max(y0, 0), frame_h - side)
    return SearchWindowSpec(cx, cy, side, alpha, radius, x0, y0, degenerate)


def crop_resample(frame: np.ndarray, x0: int, y0: int, side: int,
                  out_res: int) -> np.ndarray:
    """Nearest-neighbor square crop-and-resize of a [H,W] frame."""
    idx = np.floor((np.arange(out_res) + 0.5) * side / out_res).astype(int)
    ys = np.clip(y0 + idx, 0, frame.shape[0] - 1)
    xs = np.clip(x0 + idx, 0, frame.shape[1] - 1)
    return frame[np.ix_(ys, xs)]


def localize(search_feat: np.ndarray, template_feat: np.ndarray
             ) -> tuple[tuple[int, int], np.ndarray]:
    """Correlation map plus its (row, col) peak on the feature grid."""
    corr = ops.cross_correlate(search_feat, template_feat)
    return ops.argmax2d(corr), corr


def peak_to_frame(peak: tuple[int, int], window: SearchWindowSpec, stride: float,
                  template_box: BoundingBox,
                  frame_dims: tuple[int, int] | None = None) -> BoundingBox:
    """Translate a feature-grid peak into a frame-pixel box.

    The box keeps the template's extents; its top-left lands at the
    window origin plus peak * stride (translation-only tracking).
    """
    py, px = peak
    box = BoundingBox(window.x0 + px * stride, window.y0 + py * stride,
                      template_box.w, template_box.h)
    if frame_dims is not None:
        box = box.clamped(frame_dims[0], frame_dims[1])
    return box


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0
