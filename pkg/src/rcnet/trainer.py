"""Two-stage training: single-frame pretraining, then recurrent
fine-tuning on teacher-forced trajectories with the conv stack frozen.

Stage 1 trains the backbone plus a temporary single-frame head on
(template crop, label) pairs. Stage 2 loads that checkpoint, freezes
every ``backbone.*`` tensor, precomputes trajectories for all samples
with a correlation-only tracker, and trains the recurrent cell and
scorer on the stored window crops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ops
from .autodiff import Node, ParamSet
from .errors import ConfigError, NumericError
from .localizer import (BoundingBox, crop_resample, iou, make_search_window,
                        peak_to_frame)
from .model import RcnModel
from .synthgen import CLASS_TARGET, ProposalParams, SequenceSample, bg_subtract_proposals


@dataclass
class TrainConfig:
    lr0: float = 0.01
    decay_factor: float = 0.1
    decay_period: int = 1000
    iters: int = 4000
    batch: int = 5
    momentum: float = 0.9
    stage: int = 1
    seed: int = 0
    L: int = 5

    def __post_init__(self):
        if self.lr0 <= 0 or not (0 < self.decay_factor <= 1) or self.batch < 1:
            raise ConfigError("need lr0 > 0, 0 < decay_factor <= 1, batch >= 1")


@dataclass
class TrainingSample:
    seq_id: str
    t0: int
    proposal: BoundingBox
    label: int
    template: np.ndarray  # uint8 template-resolution crop
    windows: list[np.ndarray] = field(default_factory=list)  # uint8 window crops
    trajectory: list[BoundingBox] = field(default_factory=list)
    lost: bool = False


def sigmoid_cross_entropy(logit: float, label: int) -> float:
    """Stable binary cross-entropy: max(z,0) - y*z + ln(1 + e^-|z|)."""
    if label not in (0, 1):
        raise ConfigError(f"label must be 0 or 1, got {label!r}")
    z = float(logit)
    return max(z, 0.0) - label * z + math.log1p(math.exp(-abs(z)))


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    if iteration < 0:
        raise ConfigError("iteration must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** (iteration // cfg.decay_period)


class SgdState:
    """Per-parameter velocity buffers for momentum SGD."""

    def __init__(self):
        self.velocity: dict[str, np.ndarray] = {}


def sgd_step(params: ParamSet, grads: dict[str, np.ndarray], lr: float,
             momentum: float, state: SgdState | None = None) -> None:
    """v <- momentum*v + grad; p <- p - lr*v. Frozen parameters skipped."""
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    state = state if state is not None else SgdState()
    for name, p in params.items():
        if p.frozen:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        v = state.velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        state.velocity[name] = v
        p.value -= lr * v


# --- sample construction ---------------------------------------------------


def labeled_proposals(frames, tracks, t0: int, pp: ProposalParams,
                      iou_thresh: float = 0.5) -> list[tuple[BoundingBox, int]]:
    props = bg_subtract_proposals(frames, t0, pp)
    gts = [box for tr in tracks if tr.cls == CLASS_TARGET
           for f, box in tr.boxes if f == t0]
    return [(p, int(any(iou(p, g) >= iou_thresh for g in gts))) for p in props]


def _window_crop(model: RcnModel, frame, box) -> np.ndarray:
    fh, fw = frame.shape
    win = make_search_window(box, model.cfg.alpha, (fw, fh))
    return crop_resample(frame, win.x0, win.y0, win.side,
                         model.cfg.window_res_effective), win


def precompute_trajectories(sequences: list[tuple[str, list, list]],
                            model: RcnModel, t0: int, L: int,
                            pp: ProposalParams, cache_dir=None,
                            fixed_window: bool = False,
                            iou_thresh: float = 0.5) -> list[TrainingSample]:
    """Correlation-only tracking (backbone + severed encoder, no memory)
    for every positive and negative proposal; window crops are stored.

    ``fixed_window`` keeps every window at the proposal location instead
    (the tracking-ablated teacher).
    """
    leaves = model.params.leaves()
    samples: list[TrainingSample] = []
    for seq_id, frames, tracks in sequences:
        fh, fw = frames[0].shape
        for prop, label in labeled_proposals(frames, tracks, t0, pp, iou_thresh):
            tpl_enc, _ = model.template_features(leaves, frames[t0], prop)
            tpl_u8 = np.rint(model.template_crop(frames[t0], prop) * 255).astype(np.uint8)
            sample = TrainingSample(seq_id=seq_id, t0=t0, proposal=prop,
                                    label=label, template=tpl_u8)
            box = prop
            cws = model._bind_cells(leaves)
            for t in range(L + 1):
                src_box = prop if fixed_window else box
                crop, win = _window_crop(model, frames[t0 + t], src_box)
                sample.windows.append(crop)
                sample.trajectory.append(src_box)
                if t < L and not fixed_window:
                    feat = model.encode_window(
                        model.backbone(leaves, crop.astype(np.float64) / 255.0), cws)
                    corr = ops.cross_correlate(feat.value, tpl_enc.value)
                    peak = ops.argmax2d(corr)
                    eff = model.cfg.stride * win.side / model.cfg.window_res_effective
                    nb = peak_to_frame(peak, win, eff, prop)
                    if nb.intersects(fw, fh):
                        box = nb.clamped(fw, fh)
                    else:
                        sample.lost = True  # hold the last valid box
            samples.append(sample)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            np.savez(cache_dir / f"sample_{i:05d}.npz",
                     template=s.template, windows=np.stack(s.windows),
                     label=s.label, lost=s.lost)
    return samples


def _balanced_batches(samples, batch, iters, rng):
    pos = [i for i, s in enumerate(samples) if s.label == 1]
    neg = [i for i, s in enumerate(samples) if s.label == 0]
    if not pos or not neg:
        raise ConfigError("training needs both positive and negative samples")
    n_pos = (batch + 1) // 2
    for _ in range(iters):
        ip = rng.choice(pos, size=n_pos, replace=len(pos) < n_pos)
        ineg = rng.choice(neg, size=batch - n_pos, replace=len(neg) < batch - n_pos)
        yield [samples[i] for i in np.concatenate([ip, ineg])]


def _write_log(log_path, rows):
    if log_path is not None:
        with open(log_path, "w") as f:
            for it, lr, loss in rows:
                f.write(f"{it}\t{lr:g}\t{loss:.6f}\n")


# --- stages ------------------------------------------------------------------


def train_stage1(sequences, model: RcnModel, tcfg: TrainConfig, t0: int,
                 pp: ProposalParams, log_path=None) -> list[float]:
    rng = np.random.default_rng(tcfg.seed)
    samples = []
    for seq_id, frames, tracks in sequences:
        for prop, label in labeled_proposals(frames, tracks, t0, pp):
            crop = model.template_crop(frames[t0], prop)
            samples.append(TrainingSample(seq_id=seq_id, t0=t0, proposal=prop,
                                          label=label,
                                          template=np.rint(crop * 255).astype(np.uint8)))
    state = SgdState()
    losses, log_rows = [], []
    for it, batch in enumerate(_balanced_batches(samples, tcfg.batch,
                                                 tcfg.iters, rng)):
        leaves = model.params.leaves()
        per_sample = []
        for s in batch:
            feat = model.backbone(leaves, s.template.astype(np.float64) / 255.0)
            logit = model.stage1_logit(leaves, ad.flatten(feat))
            per_sample.append(ad.sigmoid_cross_entropy(logit, float(s.label)))
        loss = ad.mean_scalars(per_sample)
        ad.backward(loss)
        grads = ad.collect_grads(model.params, leaves)
        lr = lr_at(it, tcfg)
        sgd_step(model.params, grads, lr, tcfg.momentum, state)
        losses.append(float(loss.value))
        log_rows.append((it, lr, losses[-1]))
    _write_log(log_path, log_rows)
    return losses


def train_stage2(sequences, model: RcnModel, tcfg: TrainConfig, t0: int,
                 pp: ProposalParams, cache_dir=None, log_path=None) -> list[float]:
    """Teacher-forced fine-tuning; requires stage-1 weights already loaded."""
    model.params.freeze("backbone.")
    rng = np.random.default_rng(tcfg.seed)
    fixed = model.cfg.variant in ("no_tracking", "single_frame")
    L = 0 if model.cfg.variant == "single_frame" else tcfg.L
    samples = precompute_trajectories(sequences, model, t0, L, pp,
                                      cache_dir=cache_dir, fixed_window=fixed)
    # the backbone is frozen: features of stored crops are constants
    leaves0 = model.params.leaves()
    tpl_feats, win_feats = [], []
    for s in samples:
        tpl_feats.append(model.backbone(
            leaves0, s.template.astype(np.float64) / 255.0).value)
        win_feats.append([model.backbone(
            leaves0, w.astype(np.float64) / 255.0).value for w in s.windows])

    state = SgdState()
    losses, log_rows = [], []
    index = {id(s): i for i, s in enumerate(samples)}
    for it, batch in enumerate(_balanced_batches(samples, tcfg.batch,
                                                 tcfg.iters, rng)):
        leaves = model.params.leaves()
        per_sample = []
        for s in batch:
            i = index[id(s)]
            logits = model.score_sequence(leaves, tpl_feats[i], win_feats[i])
            per_sample.append(ad.mean_scalars(
                [ad.sigmoid_cross_entropy(n, float(s.label)) for n in logits]))
        loss = ad.mean_scalars(per_sample)
        ad.backward(loss)
        grads = ad.collect_grads(model.params, leaves)
        lr = lr_at(it, tcfg)
        sgd_step(model.params, grads, lr, tcfg.momentum, state)
        losses.append(float(loss.value))
        log_rows.append((it, lr, losses[-1]))
    _write_log(log_path, log_rows)
    return losses
