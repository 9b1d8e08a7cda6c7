"""Joint detection-and-tracking model: conv stack, recurrent cell,
correlation localization with search-window feedback, and the FC scorer.

One candidate proposal is tracked through L frames after its anchor
frame; per-step logits are averaged (after the sigmoid) into a single
detection confidence. The predicted box at each step feeds the next
step's search window.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import cells, ops
from .autodiff import Node, ParamSet
from .errors import ConfigError, ContractError
from .localizer import (BoundingBox, crop_resample, make_search_window,
                        peak_to_frame)

VARIANTS = ("full", "no_tracking", "no_recurrence", "single_frame")


@dataclass
class ModelConfig:
    cell: str = "lstm"
    k: int = 3
    channels: tuple[int, ...] = (8, 16, 32)
    backbone_k: int = 3
    rnn_channels: int = 16
    rnn_depth: int = 1
    L: int = 5
    alpha: float = 1.0
    hidden: int = 128
    template_res: int = 32
    window_res: int = 0
    variant: str = "full"
    literal_cell_coupling: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.cell not in ("lstm", "gru"):
            raise ConfigError(f"unknown cell type {self.cell!r}")

    @property
    def stride(self) -> int:
        """Cumulative downsampling of the conv stack (2x pool per layer)."""
        return 2 ** len(self.channels)

    @property
    def window_res_effective(self) -> int:
        if self.window_res > 0:
            return self.window_res
        # keep template and window feature scales matched: the window
        # covers (1 + 2*alpha) template side lengths
        raw = self.template_res * (1.0 + 2.0 * self.alpha)
        return int(np.ceil(raw / self.stride) * self.stride)

    @property
    def tpl_grid(self) -> int:
        return self.template_res // self.stride

    @property
    def win_grid(self) -> int:
        return self.window_res_effective // self.stride


@dataclass
class CandidateRun:
    proposal: BoundingBox
    trajectory: list[BoundingBox]
    logits: list[float]
    confidence: float
    lost: bool = False
    logit_nodes: list[Node] = field(default_factory=list)
    corr_nodes: list[Node] = field(default_factory=list)


def from_run_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        cell=str(cfg["model.cell"]),
        k=int(cfg["model.k"]),
        channels=tuple(int(c) for c in str(cfg["model.channels"]).split(",")),
        backbone_k=int(cfg["model.backbone_k"]),
        rnn_channels=int(cfg["model.rnn_channels"]),
        rnn_depth=int(cfg["model.rnn_depth"]),
        L=int(cfg["model.L"]),
        alpha=float(cfg["model.alpha"]),
        hidden=int(cfg["model.hidden"]),
        template_res=int(cfg["model.template_res"]),
        window_res=int(cfg["model.window_res"]),
        variant=str(cfg["model.variant"]),
        literal_cell_coupling=bool(int(cfg["model.literal_cell_coupling"])),
        seed=int(cfg["seed"]),
    )


class RcnModel:
    def __init__(self, cfg: ModelConfig, params: ParamSet | None = None):
        self.cfg = cfg
        if cfg.template_res % cfg.stride or cfg.window_res_effective % cfg.stride:
            raise ConfigError("template/window resolutions must be multiples of "
                              f"the backbone stride {cfg.stride}")
        if params is not None:
            self.params = params
        else:
            self.params = ParamSet()
            self._init_params(np.random.default_rng(cfg.seed))

    # --- parameter construction ------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        in_ch = 1
        for i, out_ch in enumerate(cfg.channels):
            self.params.add(f"backbone.conv{i}.w",
                            cells._uniform(rng, (out_ch, in_ch, cfg.backbone_k,
                                                 cfg.backbone_k)))
            self.params.add(f"backbone.conv{i}.b", np.zeros(out_ch))
            in_ch = out_ch
        rnn_in = cfg.channels[-1]
        for d in range(cfg.rnn_depth):
            if cfg.cell == "lstm":
                cells.init_conv_lstm(self.params, f"cell{d}", rnn_in,
                                     cfg.rnn_channels, cfg.k, rng,
                                     cfg.literal_cell_coupling)
            else:
                cells.init_conv_gru(self.params, f"cell{d}", rnn_in,
                                    cfg.rnn_channels, cfg.k, rng)
            rnn_in = cfg.rnn_channels
        scorer_in = cfg.rnn_channels * (cfg.tpl_grid ** 2 + cfg.win_grid ** 2)
        self.params.add("scorer.w1", cells._uniform(rng, (cfg.hidden, scorer_in)))
        self.params.add("scorer.b1", np.zeros(cfg.hidden))
        self.params.add("scorer.w2", cells._uniform(rng, (1, cfg.hidden)))
        self.params.add("scorer.b2", np.zeros(1))
        stage1_in = cfg.channels[-1] * cfg.tpl_grid ** 2
        self.params.add("stage1.w1", cells._uniform(rng, (cfg.hidden, stage1_in)))
        self.params.add("stage1.b1", np.zeros(cfg.hidden))
        self.params.add("stage1.w2", cells._uniform(rng, (1, cfg.hidden)))
        self.params.add("stage1.b2", np.zeros(1))

    def with_variant(self, tag: str) -> "RcnModel":
        """Same parameters under a different ablation wiring."""
        if tag not in VARIANTS:
            raise ConfigError(f"unknown variant {tag!r}")
        return RcnModel(replace(self.cfg, variant=tag), params=self.params)

    # --- forward pieces ----------------------------------------------------

    def backbone(self, leaves: dict[str, Node], image01: np.ndarray | Node) -> Node:
        x = image01 if isinstance(image01, Node) else Node(np.asarray(image01)[None])
        pad = self.cfg.backbone_k // 2
        for i in range(len(self.cfg.channels)):
            x = ad.conv2d(x, leaves[f"backbone.conv{i}.w"],
                          leaves[f"backbone.conv{i}.b"], 1, pad)
            x = ad.tanh(x)
            x = ad.max_pool2d(x, 2, 2)
        return x

    def _bind_cells(self, leaves):
        cfg = self.cfg
        if cfg.cell == "lstm":
            return [cells.bind_lstm(leaves, f"cell{d}", cfg.k,
                                    cfg.literal_cell_coupling)
                    for d in range(cfg.rnn_depth)]
        return [cells.bind_gru(leaves, f"cell{d}", cfg.k)
                for d in range(cfg.rnn_depth)]

    def _recurrent_step(self, x: Node, states: list, cws: list) -> Node:
        h = x
        for d, w in enumerate(cws):
            if self.cfg.cell == "lstm":
                h, states[d] = cells.conv_lstm_step(h, states[d], w)
            else:
                h = cells.conv_gru_step(h, states[d], w)
                states[d] = h
        return h

    def _zero_states(self, grid: int) -> list:
        cfg = self.cfg
        if cfg.cell == "lstm":
            return [cells.zero_state(cfg.rnn_channels, grid, grid)
                    for _ in range(cfg.rnn_depth)]
        return [Node(np.zeros((cfg.rnn_channels, grid, grid)))
                for _ in range(cfg.rnn_depth)]

    def encode_window(self, x: Node, cws: list) -> Node:
        """Severed-recurrence encoding (no memory), first cell's weights."""
        if self.cfg.cell == "lstm":
            return cells.template_encode(x, cws[0])
        zero = Node(np.zeros((self.cfg.rnn_channels,) + x.value.shape[1:]))
        return cells.conv_gru_step(x, zero, cws[0])

    def scorer_logit(self, leaves, tpl_flat: Node, h_flat: Node) -> Node:
        z = ad.concat([tpl_flat, h_flat])
        hid = ad.tanh(ad.affine(leaves["scorer.w1"], z, leaves["scorer.b1"]))
        out = ad.affine(leaves["scorer.w2"], hid, leaves["scorer.b2"])
        return ad.pick(out, 0)

    def stage1_logit(self, leaves, feat_flat: Node) -> Node:
        hid = ad.tanh(ad.affine(leaves["stage1.w1"], feat_flat, leaves["stage1.b1"]))
        out = ad.affine(leaves["stage1.w2"], hid, leaves["stage1.b2"])
        return ad.pick(out, 0)

    def template_crop(self, frame: np.ndarray, box: BoundingBox) -> np.ndarray:
        """Square crop at the box top-left, side max(w, h), template resolution."""
        side = int(round(max(box.w, box.h)))
        fh, fw = frame.shape
        sq = BoundingBox(box.x, box.y, side, side).clamped(fw, fh)
        return crop_resample(frame, int(round(sq.x)), int(round(sq.y)),
                             int(sq.w), self.cfg.template_res).astype(np.float64) / 255.0

    def template_features(self, leaves, frame, box) -> tuple[Node, Node]:
        """(encoded template for correlation/scoring, raw backbone features)."""
        raw = self.backbone(leaves, self.template_crop(frame, box))
        return self.encode_window(raw, self._bind_cells(leaves)), raw

    # --- candidate forward ---------------------------------------------------

    def forward_candidate(self, frames: list[np.ndarray], proposal: BoundingBox,
                          leaves: dict[str, Node] | None = None,
                          keep_graph: bool = False) -> CandidateRun:
        cfg = self.cfg
        fh, fw = frames[0].shape
        if not (0 <= proposal.x and 0 <= proposal.y
                and proposal.x + proposal.w <= fw and proposal.y + proposal.h <= fh):
            raise ContractError(f"proposal {proposal} outside {fw}x{fh} frame")
        leaves = leaves if leaves is not None else self.params.leaves()
        L = 0 if cfg.variant == "single_frame" else min(cfg.L, len(frames) - 1)
        tracking = cfg.variant in ("full", "no_recurrence")
        recurrent = cfg.variant in ("full", "no_tracking")

        cws = self._bind_cells(leaves)
        tpl_enc, _ = self.template_features(leaves, frames[0], proposal)
        tpl_flat = ad.flatten(tpl_enc)
        states = self._zero_states(cfg.win_grid)

        box = proposal
        trajectory = [proposal]
        logit_nodes: list[Node] = []
        corr_nodes: list[Node] = []
        lost = False
        rw = cfg.window_res_effective
        for t in range(L + 1):
            # window anchored at the previous frame's box; the correlation
            # peak then gives this frame's box before it is recorded
            win = make_search_window(box, cfg.alpha, (fw, fh))
            crop = crop_resample(frames[t], win.x0, win.y0, win.side, rw)
            x = self.backbone(leaves, crop.astype(np.float64) / 255.0)
            if recurrent:
                h = self._recurrent_step(x, states, cws)
            else:
                h = self.encode_window(x, cws)
            if t > 0:
                if tracking and not lost:
                    corr = ad.cross_correlate(h, tpl_enc)
                    corr_nodes.append(corr)
                    peak = ops.argmax2d(corr.value)
                    eff_stride = cfg.stride * win.side / rw
                    nb = peak_to_frame(peak, win, eff_stride, proposal)
                    if nb.intersects(fw, fh):
                        box = nb.clamped(fw, fh)
                    else:
                        lost = True  # hold the last valid box
                trajectory.append(box)
            logit_nodes.append(self.scorer_logit(leaves, tpl_flat, ad.flatten(h)))

        logits = [float(n.value) for n in logit_nodes]
        confidence = float(np.mean([ops.sigmoid(np.asarray(v)) for v in logits]))
        return CandidateRun(
            proposal=proposal, trajectory=trajectory, logits=logits,
            confidence=confidence, lost=lost,
            logit_nodes=logit_nodes if keep_graph else [],
            corr_nodes=corr_nodes if keep_graph else [],
        )

    def detect(self, frames: list[np.ndarray], proposals: list[BoundingBox]
               ) -> list[tuple[BoundingBox, float]]:
        return [(p, self.forward_candidate(frames, p).confidence)
                for p in proposals]

    # --- teacher-forced scoring (training path) --------------------------------

    def score_sequence(self, leaves, tpl_raw_feat: np.ndarray,
                       window_feats: list[np.ndarray]) -> list[Node]:
        """Per-step logits over precomputed backbone features.

        Used in stage-2 training where the backbone is frozen and window
        crops follow externally supplied trajectories.
        """
        cws = self._bind_cells(leaves)
        tpl_flat = ad.flatten(self.encode_window(Node(tpl_raw_feat), cws))
        states = self._zero_states(window_feats[0].shape[-1])
        out = []
        recurrent = self.cfg.variant in ("full", "no_tracking")
        feats = window_feats[:1] if self.cfg.variant == "single_frame" else window_feats
        for wf in feats:
            x = Node(wf)
            h = self._recurrent_step(x, states, cws) if recurrent \
                else self.encode_window(x, cws)
            out.append(self.scorer_logit(leaves, tpl_flat, ad.flatten(h)))
        return out


def candidate_loss(model: RcnModel, leaves, frames, proposal, label: float,
                   corr_weight: float = 0.0) -> Node:
    """Scalar training-style loss over a full tracked candidate.

    ``corr_weight`` adds a small term on the correlation maps so that
    gradient checks exercise the bilinear correlation path on both inputs.
    """
    run = model.forward_candidate(frames, proposal, leaves=leaves, keep_graph=True)
    loss = ad.mean_scalars([ad.sigmoid_cross_entropy(n, label)
                            for n in run.logit_nodes])
    if corr_weight and run.corr_nodes:
        corr_term = ad.mean_scalars([ad.sum_all(c) for c in run.corr_nodes])
        loss = ad.add(loss, ad.scale_shift(corr_term, corr_weight, 0.0))
    return loss


# --- checkpoint glue -------------------------------------------------------------

_META_STR = {"cell": ("lstm", "gru"), "variant": VARIANTS}


def model_to_tensors(model: RcnModel) -> dict[str, np.ndarray]:
    cfg = model.cfg
    meta = {
        "meta.cell": float(_META_STR["cell"].index(cfg.cell)),
        "meta.k": float(cfg.k),
        "meta.backbone_k": float(cfg.backbone_k),
        "meta.rnn_channels": float(cfg.rnn_channels),
        "meta.rnn_depth": float(cfg.rnn_depth),
        "meta.L": float(cfg.L),
        "meta.alpha": float(cfg.alpha),
        "meta.hidden": float(cfg.hidden),
        "meta.template_res": float(cfg.template_res),
        "meta.window_res": float(cfg.window_res),
        "meta.variant": float(_META_STR["variant"].index(cfg.variant)),
        "meta.literal_cell_coupling": float(cfg.literal_cell_coupling),
        "meta.seed": float(cfg.seed),
    }
    tensors = {k: np.asarray(v) for k, v in meta.items()}
    tensors["meta.channels"] = np.asarray(cfg.channels, dtype=np.float64)
    for name, p in model.params.items():
        tensors[f"param.{name}"] = p.value
    return tensors


def model_from_tensors(tensors: dict[str, np.ndarray]) -> RcnModel:
    cfg = ModelConfig(
        cell=_META_STR["cell"][int(tensors["meta.cell"])],
        k=int(tensors["meta.k"]),
        channels=tuple(int(c) for c in tensors["meta.channels"]),
        backbone_k=int(tensors["meta.backbone_k"]),
        rnn_channels=int(tensors["meta.rnn_channels"]),
        rnn_depth=int(tensors["meta.rnn_depth"]),
        L=int(tensors["meta.L"]),
        alpha=float(tensors["meta.alpha"]),
        hidden=int(tensors["meta.hidden"]),
        template_res=int(tensors["meta.template_res"]),
        window_res=int(tensors["meta.window_res"]),
        variant=_META_STR["variant"][int(tensors["meta.variant"])],
        literal_cell_coupling=bool(tensors["meta.literal_cell_coupling"]),
        seed=int(tensors["meta.seed"]),
    )
    params = ParamSet()
    for name, arr in tensors.items():
        if name.startswith("param."):
            params.add(name[len("param."):], arr.copy())
    return RcnModel(cfg, params=params)
