"""Synthetic small-flying-object video with motion-borne class labels.

Targets are two-lobed blobs whose lobe (wing) angle oscillates over
time while the object translates; distractors are rendered by the same
blob model with the wing angle frozen at a phase drawn from the same
distribution. Single-frame appearance is therefore uninformative about
the class by construction; only the temporal flap separates them.

Also provides the frame-difference proposal generator used to seed
detection: running-median background, thresholded absolute difference,
one dilation pass, 8-connected components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GenerationError
from .localizer import BoundingBox

CLASS_TARGET = 1
CLASS_DISTRACTOR = 0

# intensity level defining an object's visible support, used both for the
# ground-truth tight boxes and (as the default diff threshold) by the
# proposal generator
GT_MASK_LEVEL = 35.0


@dataclass
class SceneConfig:
    frame_w: int = 96
    frame_h: int = 96
    n_frames: int = 12
    size_min: int = 10
    size_max: int = 18
    n_targets: int = 1
    n_distractors: int = 2
    speed_min: float = 2.5
    speed_max: float = 4.0
    flap_period_min: float = 4.0
    flap_period_max: float = 8.0
    flap_amp_min: float = 0.9
    flap_amp_max: float = 1.3
    bg_level: float = 70.0
    bg_amp: float = 16.0
    bg_drift: float = 0.01
    noise_sigma: float = 2.0


@dataclass
class ObjectTrack:
    track_id: int
    cls: int
    boxes: list[tuple[int, BoundingBox]] = field(default_factory=list)


@dataclass
class SequenceSample:
    frames: list[np.ndarray]
    tracks: list[ObjectTrack]


@dataclass
class ProposalParams:
    diff_threshold: float = 35.0
    min_area: int = 6
    dilation: int = 1
    history: int = 6


def _render_blob(canvas: np.ndarray, cx: float, cy: float, size: float,
                 theta: float, amp: float) -> None:
    """Add a two-lobed blob (body + mirrored wings at angle theta) in place."""
    h, w = canvas.shape
    r = int(np.ceil(size))
    x_lo, x_hi = max(0, int(cx) - r), min(w, int(cx) + r + 1)
    y_lo, y_hi = max(0, int(cy) - r), min(h, int(cy) + r + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    ys, xs = np.mgrid[y_lo:y_hi, x_lo:x_hi]
    dx = xs - cx
    dy = ys - cy

    body_sig = 0.14 * size
    val = np.exp(-(dx ** 2 + dy ** 2) / (2 * body_sig ** 2))

    d = 0.30 * size
    sig_l = 0.22 * size
    sig_w = 0.09 * size
    for sign in (1.0, -1.0):
        # wing direction; raised wings point toward negative y (image up)
        ux, uy = sign * np.cos(theta), -np.sin(theta)
        wx = dx - d * ux
        wy = dy - d * uy
        along = wx * ux + wy * uy
        across = -wx * uy + wy * ux
        val += np.exp(-(along ** 2 / (2 * sig_l ** 2) + across ** 2 / (2 * sig_w ** 2)))

    canvas[y_lo:y_hi, x_lo:x_hi] += amp * val


def _background(cfg: SceneConfig, t: int, phases: np.ndarray) -> np.ndarray:
    ys = np.arange(cfg.frame_h)[:, None] / cfg.frame_h
    xs = np.arange(cfg.frame_w)[None, :] / cfg.frame_w
    px, py, fx, fy = phases
    return cfg.bg_level + cfg.bg_amp * (
        np.sin(2 * np.pi * (fx * xs + px + cfg.bg_drift * t))
        * np.sin(2 * np.pi * (fy * ys + py + cfg.bg_drift * t))
    )


def _simulate_path(x, y, vx, vy, margin, cfg: SceneConfig) -> list[tuple[float, float]]:
    """Bouncing linear path; positions for every frame."""
    pts = []
    for _ in range(cfg.n_frames):
        pts.append((x, y))
        x += vx
        y += vy
        if x < margin or x > cfg.frame_w - margin:
            lim = margin if x < margin else cfg.frame_w - margin
            x, vx = 2 * lim - x, -vx
        if y < margin or y > cfg.frame_h - margin:
            lim = margin if y < margin else cfg.frame_h - margin
            y, vy = 2 * lim - y, -vy
    return pts


def _draw_objects(cfg: SceneConfig, rng: np.random.Generator) -> list[dict]:
    """One candidate configuration; paths kept disjoint over all frames so
    blobs never merge (collisions would make proposals/GT ambiguous)."""
    n_obj = cfg.n_targets + cfg.n_distractors
    for _ in range(200):
        objs = []
        for i in range(n_obj):
            cls = CLASS_TARGET if i < cfg.n_targets else CLASS_DISTRACTOR
            size = rng.uniform(cfg.size_min, cfg.size_max)
            margin = size / 2.0 + 2.0
            if 2 * margin >= min(cfg.frame_w, cfg.frame_h):
                raise GenerationError(f"object size {size:.0f} too large for frame")
            speed = rng.uniform(cfg.speed_min, cfg.speed_max)
            direction = rng.uniform(0, 2 * np.pi)
            objs.append(dict(
                cls=cls, size=size,
                path=_simulate_path(rng.uniform(margin, cfg.frame_w - margin),
                                    rng.uniform(margin, cfg.frame_h - margin),
                                    speed * np.cos(direction),
                                    speed * np.sin(direction), margin, cfg),
                amp=rng.uniform(120.0, 180.0),
                flap_amp=rng.uniform(cfg.flap_amp_min, cfg.flap_amp_max),
                period=rng.uniform(cfg.flap_period_min, cfg.flap_period_max),
                phase=rng.uniform(0, 2 * np.pi),
            ))
        ok = all(
            np.hypot(a["path"][t][0] - b["path"][t][0],
                     a["path"][t][1] - b["path"][t][1])
            >= (a["size"] + b["size"]) / 2.0 + 4.0
            for t in range(cfg.n_frames)
            for j, a in enumerate(objs) for b in objs[j + 1:])
        if ok:
            return objs
    raise GenerationError("could not place disjoint object paths (overcrowding)")


def generate_sequence(cfg: SceneConfig, seed: int) -> SequenceSample:
    """Render one sequence; all randomness is derived from ``seed``."""
    rng = np.random.default_rng(seed)
    phases = np.array([rng.uniform(), rng.uniform(),
                       rng.integers(1, 3), rng.integers(1, 3)], dtype=float)
    objs = _draw_objects(cfg, rng)

    frames: list[np.ndarray] = []
    tracks = [ObjectTrack(track_id=i, cls=o["cls"]) for i, o in enumerate(objs)]
    for t in range(cfg.n_frames):
        canvas = _background(cfg, t, phases)
        for i, o in enumerate(objs):
            if o["cls"] == CLASS_TARGET:
                theta = o["flap_amp"] * np.sin(2 * np.pi * t / o["period"] + o["phase"])
            else:
                theta = o["flap_amp"] * np.sin(o["phase"])  # frozen flap phase
            layer = np.zeros_like(canvas)
            x, y = o["path"][t]
            _render_blob(layer, x, y, o["size"], theta, o["amp"])
            canvas += layer
            # ground truth is the tight box of the blob's visible support
            ys, xs = np.where(layer > GT_MASK_LEVEL)
            box = BoundingBox(float(xs.min()), float(ys.min()),
                              float(xs.max() - xs.min() + 1),
                              float(ys.max() - ys.min() + 1))
            tracks[i].boxes.append((t, box.clamped(cfg.frame_w, cfg.frame_h)))
        if cfg.noise_sigma > 0:
            canvas = canvas + rng.normal(0.0, cfg.noise_sigma, canvas.shape)
        frames.append(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return SequenceSample(frames, tracks)


def bg_subtract_proposals(frames: list[np.ndarray], t0: int | None = None,
                          params: ProposalParams | None = None) -> list[BoundingBox]:
    """Moving-object proposals for frame t0 by median-background differencing."""
    if len(frames) < 2:
        raise GenerationError("need at least two frames for background subtraction")
    params = params or ProposalParams()
    if t0 is None:
        t0 = min(params.history, len(frames) - 1)
    lo = max(0, t0 - params.history)
    history = frames[lo:t0] if t0 > 0 else frames[1 : params.history + 1]
    bg = np.median(np.stack([f.astype(np.float64) for f in history]), axis=0)
    # positive-side difference: objects are brighter than background, and
    # one-sided thresholding ignores the ghosts the median leaves behind
    diff = frames[t0].astype(np.float64) - bg
    mask = diff > params.diff_threshold
    if params.dilation > 0:
        mask = ndimage.binary_dilation(
            mask, structure=np.ones((3, 3), bool), iterations=params.dilation
        )
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), int))
    out = []
    for idx, s in enumerate(ndimage.find_objects(labels), start=1):
        if s is None:
            continue
        area = int((labels[s] == idx).sum())
        if area < params.min_area:
            continue
        y, x = s
        out.append(BoundingBox(x.start, y.start, x.stop - x.start, y.stop - y.start))
    return out
