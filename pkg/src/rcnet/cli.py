"""Command-line entry point and experiment orchestration.

Dataset layout: ``DIR/<split>/<seq_id>/frame_%05d.pgm`` plus a
``gt.txt`` per sequence with lines ``frame_idx track_id class x y w h``.
Exit codes: 2 for configuration errors, 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io, metrics
from .errors import ConfigError, GenerationError, NumericError, RcnError
from .localizer import BoundingBox
from .model import (ModelConfig, RcnModel, VARIANTS, candidate_loss,
                    from_run_config, model_from_tensors, model_to_tensors)
from .synthgen import (CLASS_TARGET, SceneConfig, bg_subtract_proposals,
                       generate_sequence, ProposalParams)
from .trainer import TrainConfig, train_stage1, train_stage2
from .autodiff import grad_check


def _load_split(data_dir: Path):
    """Sequences of a split directory, ordered by sequence id."""
    seq_dirs = sorted(p for p in Path(data_dir).iterdir() if p.is_dir())
    if not seq_dirs:
        raise ConfigError(f"no sequence directories under {data_dir}")
    out = []
    for d in seq_dirs:
        frames, tracks = io.load_sequence_dir(d)
        out.append((d.name, frames, tracks))
    return out


def _split_dir(data: str, split: str) -> Path:
    p = Path(data)
    return p / split if (p / split).is_dir() else p


def _train_cfg(cfg: dict, stage: int, seed: int | None = None) -> TrainConfig:
    # the single-frame pretraining stage has its own budget and step size
    lr0 = float(cfg["train.stage1_lr0" if stage == 1 else "train.lr0"])
    iters = int(cfg["train.stage1_iters" if stage == 1 else "train.iters"])
    return TrainConfig(
        lr0=lr0, decay_factor=float(cfg["train.decay_factor"]),
        decay_period=int(cfg["train.decay_period"]), iters=iters,
        batch=int(cfg["train.batch"]), momentum=float(cfg["train.momentum"]),
        stage=stage, seed=int(cfg["seed"]) if seed is None else seed,
        L=int(cfg["model.L"]),
    )


def _proposal_params(cfg: dict) -> ProposalParams:
    return ProposalParams(
        diff_threshold=float(cfg["proposal.diff_threshold"]),
        min_area=int(cfg["proposal.min_area"]),
        dilation=int(cfg["proposal.dilation"]),
        history=int(cfg["proposal.history"]),
    )


# --- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    scene = SceneConfig()
    for kv in args.scene or []:
        if "=" not in kv:
            raise ConfigError(f"--scene expects key=value, got {kv!r}")
        key, value = kv.split("=", 1)
        if not hasattr(scene, key):
            raise ConfigError(f"unknown scene key {key!r}")
        current = getattr(scene, key)
        setattr(scene, key, type(current)(float(value) if isinstance(current, float)
                                          else int(value)))
    out = Path(args.out)
    for split, count, offset in (("train", args.train, 0),
                                 ("test", args.test, 1_000_000)):
        for i in range(count):
            seq = generate_sequence(scene, args.seed * 7_000_003 + offset + i)
            seq_dir = out / split / f"seq_{i:05d}"
            seq_dir.mkdir(parents=True, exist_ok=True)
            for t, frame in enumerate(seq.frames):
                io.write_pgm(seq_dir / f"frame_{t:05d}.pgm", frame)
            io.write_gt(seq_dir / "gt.txt", seq.tracks)
    print(f"wrote {args.train} train / {args.test} test sequences to {out}")
    return 0


def _build_stage2_model(cfg: dict, init_tensors: dict) -> RcnModel:
    model = RcnModel(from_run_config(cfg))
    for name, arr in init_tensors.items():
        if name.startswith("param."):
            pname = name[len("param."):]
            if pname in model.params:
                model.params[pname].value[...] = arr
    return model


def cmd_train(args) -> int:
    cfg = io.parse_config(args.config)
    sequences = _load_split(_split_dir(args.data, "train"), )
    tcfg = _train_cfg(cfg, args.stage)
    pp = _proposal_params(cfg)
    t0 = int(cfg["data.t0"])
    log_path = args.log or (str(args.out) + ".log")
    if args.stage == 1:
        model = RcnModel(from_run_config(cfg))
        train_stage1(sequences, model, tcfg, t0, pp, log_path=log_path)
    else:
        if not args.init:
            raise ConfigError("stage 2 requires --init with a stage-1 checkpoint")
        model = _build_stage2_model(cfg, io.load_checkpoint(args.init))
        train_stage2(sequences, model, tcfg, t0, pp, log_path=log_path)
    io.save_checkpoint(args.out, model_to_tensors(model))
    print(f"saved checkpoint to {args.out}")
    return 0


def _detect_records(model: RcnModel, sequences, cfg: dict):
    """Per-sequence detections and matching ground truth at the anchor frame."""
    t0 = int(cfg["data.t0"])
    pp = _proposal_params(cfg)
    rows, records = [], []
    for seq_id, frames, tracks in sequences:
        props = bg_subtract_proposals(frames, t0, pp)
        dets = model.detect(frames[t0:], props)
        gts = [box for tr in tracks if tr.cls == CLASS_TARGET
               for f, box in tr.boxes if f == t0]
        records.append(metrics.DetectionRecord(gts=gts, dets=dets))
        for box, conf in dets:
            rows.append((seq_id, t0, box.x, box.y, box.w, box.h, conf))
    return rows, records


def cmd_detect(args) -> int:
    cfg = io.parse_config(args.config)
    model = model_from_tensors(io.load_checkpoint(args.ckpt))
    sequences = _load_split(_split_dir(args.data, "test"))
    rows, _ = _detect_records(model, sequences, cfg)
    io.write_csv(args.out, "sequence,frame,x,y,w,h,confidence", rows)
    print(f"wrote {len(rows)} detections to {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = io.parse_config(args.config)
    model = model_from_tensors(io.load_checkpoint(args.ckpt))
    min_len = int(cfg["eval.min_track_len"])
    sequences = _load_split(_split_dir(args.data, "test"))
    rows = []
    for seq_id, frames, tracks in sequences:
        for tr in tracks:
            if tr.cls != CLASS_TARGET or len(tr.boxes) < min_len:
                continue
            first_frame, first_box = tr.boxes[0]
            span = len(frames) - first_frame - 1
            tracker = RcnModel(replace(model.cfg, L=span), params=model.params)
            run = tracker.forward_candidate(frames[first_frame:], first_box)
            for dt, box in enumerate(run.trajectory):
                rows.append((seq_id, tr.track_id, first_frame + dt,
                             box.x, box.y, box.w, box.h))
    io.write_csv(args.out, "sequence,track,frame,x,y,w,h", rows)
    print(f"wrote {len(rows)} track boxes to {args.out}")
    return 0


def _read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:] if line]


def cmd_eval_det(args) -> int:
    cfg = io.parse_config(args.config)
    dets = _read_csv(args.detections)
    by_seq: dict[str, list] = {}
    frame_of: dict[str, int] = {}
    for row in dets:
        box = BoundingBox(float(row["x"]), float(row["y"]),
                          float(row["w"]), float(row["h"]))
        by_seq.setdefault(row["sequence"], []).append((box, float(row["confidence"])))
        frame_of[row["sequence"]] = int(row["frame"])
    records = []
    for seq_dir in sorted(p for p in Path(args.gt).iterdir() if p.is_dir()):
        tracks = io.read_gt(seq_dir / "gt.txt")
        t0 = frame_of.get(seq_dir.name, int(cfg["data.t0"]))
        gts = [box for tr in tracks if tr.cls == CLASS_TARGET
               for f, box in tr.boxes if f == t0]
        records.append(metrics.DetectionRecord(
            gts=gts, dets=by_seq.get(seq_dir.name, [])))
    curve = metrics.fppi_mr_curve(records, iou_thresh=float(cfg["eval.iou"]))
    io.write_csv(args.out, "fppi,miss_rate", curve)
    print(f"log_avg_mr={metrics.log_average_mr(curve):.6f}")
    return 0


def cmd_eval_track(args) -> int:
    cfg = io.parse_config(args.config)
    min_len = int(cfg["eval.min_track_len"])
    preds: dict[tuple[str, int], list] = {}
    for row in _read_csv(args.tracks):
        key = (row["sequence"], int(row["track"]))
        preds.setdefault(key, []).append(
            (int(row["frame"]), BoundingBox(float(row["x"]), float(row["y"]),
                                            float(row["w"]), float(row["h"]))))
    curves = []
    for seq_dir in sorted(p for p in Path(args.gt).iterdir() if p.is_dir()):
        for tr in io.read_gt(seq_dir / "gt.txt"):
            key = (seq_dir.name, tr.track_id)
            if tr.cls != CLASS_TARGET or len(tr.boxes) < min_len or key not in preds:
                continue
            rows = sorted(preds[key])
            pred = metrics.Trajectory([f for f, _ in rows], [b for _, b in rows])
            gt = metrics.Trajectory([f for f, _ in tr.boxes],
                                    [b for _, b in tr.boxes])
            curves.append(metrics.ope_success(pred, gt))
    if not curves:
        raise ConfigError("no evaluable tracks (check min length and classes)")
    thresholds = [t for t, _ in curves[0]]
    mean_curve = [(t, float(np.mean([c[i][1] for c in curves])))
                  for i, t in enumerate(thresholds)]
    io.write_csv(args.out, "threshold,success_rate", mean_curve)
    print(f"auc={metrics.success_auc(mean_curve):.6f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = io.parse_config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    train_seqs = _load_split(_split_dir(args.data, "train"))
    test_seqs = _load_split(_split_dir(args.data, "test"))
    pp = _proposal_params(cfg)
    t0 = int(cfg["data.t0"])
    variant_cfgs: list[tuple[str, dict]] = [(v, {"model.variant": v})
                                            for v in VARIANTS]
    if args.extended:
        variant_cfgs += [
            ("gru_k3", {"model.cell": "gru", "model.k": 3}),
            ("lstm_k1", {"model.k": 1}),
            ("lstm_k5", {"model.k": 5}),
        ]
    report = []
    for seed in seeds:
        base = dict(cfg, seed=seed)
        stage1_model = RcnModel(from_run_config(base))
        train_stage1(train_seqs, stage1_model, _train_cfg(base, 1, seed), t0, pp)
        stage1_tensors = model_to_tensors(stage1_model)
        for name, overrides in variant_cfgs:
            vcfg = dict(base, **overrides)
            model = _build_stage2_model(vcfg, stage1_tensors)
            train_stage2(train_seqs, model, _train_cfg(vcfg, 2, seed), t0, pp)
            _, records = _detect_records(model, test_seqs, vcfg)
            mr = metrics.log_average_mr(
                metrics.fppi_mr_curve(records, iou_thresh=float(cfg["eval.iou"])))
            report.append((name, seed, mr))
            print(f"variant={name} seed={seed} log_avg_mr={mr:.4f}")
    io.write_csv(args.out, "variant,seed,log_avg_mr", report)
    return 0


def micro_model() -> tuple[RcnModel, list[np.ndarray], BoundingBox]:
    """Tiny configuration for finite-difference checks: 8x8 windows,
    2-channel single-layer backbone, 3 tracked steps."""
    mcfg = ModelConfig(channels=(2,), backbone_k=3, rnn_channels=2, k=3,
                       L=2, alpha=0.5, hidden=8, template_res=4, window_res=8,
                       seed=7)
    rng = np.random.default_rng(11)
    frames = [(rng.uniform(0, 255, (24, 24))).astype(np.uint8) for _ in range(3)]
    return RcnModel(mcfg), frames, BoundingBox(8, 9, 6, 6)


def cmd_grad_check(args) -> int:
    io.parse_config(args.config)  # validates keys; micro shape is fixed
    model, frames, box = micro_model()
    err = grad_check(
        lambda leaves: candidate_loss(model, leaves, frames, box, 1.0,
                                      corr_weight=1e-2),
        model.params, eps=1e-5)
    print(f"max_rel_error={err:.3e}")
    return 0 if err <= 1e-4 else 1


# --- wiring --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcnet",
                                description="joint detection and tracking of "
                                            "small moving objects in video")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train", type=int, default=20)
    g.add_argument("--test", type=int, default=10)
    g.add_argument("--scene", action="append", metavar="KEY=VALUE")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--data", required=True)
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--init")
    t.add_argument("--log")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score proposals on a split")
    d.add_argument("--data", required=True)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    d.set_defaults(func=cmd_detect)

    tr = sub.add_parser("track", help="one-path tracking from gt first boxes")
    tr.add_argument("--data", required=True)
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config")
    tr.set_defaults(func=cmd_track)

    ed = sub.add_parser("eval-det", help="FPPI / miss-rate curve")
    ed.add_argument("--detections", required=True)
    ed.add_argument("--gt", required=True)
    ed.add_argument("--out", required=True)
    ed.add_argument("--config")
    ed.set_defaults(func=cmd_eval_det)

    et = sub.add_parser("eval-track", help="OPE success curve")
    et.add_argument("--tracks", required=True)
    et.add_argument("--gt", required=True)
    et.add_argument("--out", required=True)
    et.add_argument("--config")
    et.set_defaults(func=cmd_eval_track)

    ab = sub.add_parser("ablate", help="train and score the model variants")
    ab.add_argument("--data", required=True)
    ab.add_argument("--config")
    ab.add_argument("--out", required=True)
    ab.add_argument("--seeds", default="0")
    ab.add_argument("--extended", action="store_true",
                    help="also run cell/kernel variants")
    ab.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("grad-check", help="finite-difference gradient audit")
    gc.add_argument("--config")
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GenerationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
