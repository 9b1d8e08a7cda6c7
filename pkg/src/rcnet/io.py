"""File formats: PGM frames, gt.txt annotations, checkpoints, run config.

Checkpoint layout (all little-endian): magic ``RCNCKPT1``; for each
tensor a u32 name length, UTF-8 name, u32 rank, rank u32 dims, then the
float64 payload row-major; finally a u32 CRC32 of everything between
the magic and the CRC.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .localizer import BoundingBox
from .synthgen import ObjectTrack

CKPT_MAGIC = b"RCNCKPT1"


# --- PGM -------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ConfigError("PGM writer expects a 2-D uint8 image")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5" or fields[3] != b"255":
        raise ConfigError(f"unsupported PGM header in {path}")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace byte after maxval
    return np.frombuffer(data[pos : pos + w * h], dtype=np.uint8).reshape(h, w).copy()


# --- ground truth ------------------------------------------------------------


def write_gt(path, tracks: list[ObjectTrack]) -> None:
    lines = []
    for tr in tracks:
        for frame_idx, box in tr.boxes:
            lines.append(
                f"{frame_idx} {tr.track_id} {tr.cls} "
                f"{box.x:g} {box.y:g} {box.w:g} {box.h:g}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_gt(path) -> list[ObjectTrack]:
    by_id: dict[int, ObjectTrack] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        f, tid, cls, x, y, w, h = line.split()
        tid = int(tid)
        tr = by_id.setdefault(tid, ObjectTrack(track_id=tid, cls=int(cls)))
        tr.boxes.append((int(f), BoundingBox(float(x), float(y), float(w), float(h))))
    tracks = [by_id[k] for k in sorted(by_id)]
    for tr in tracks:
        tr.boxes.sort(key=lambda fb: fb[0])
    return tracks


def load_sequence_dir(seq_dir) -> tuple[list[np.ndarray], list[ObjectTrack]]:
    seq_dir = Path(seq_dir)
    frames = [read_pgm(p) for p in sorted(seq_dir.glob("frame_*.pgm"))]
    tracks = read_gt(seq_dir / "gt.txt")
    return frames, tracks


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    body = bytearray()
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        nb = name.encode("utf-8")
        body += struct.pack("<I", len(nb)) + nb
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes(body))
        f.write(struct.pack("<I", crc))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ConfigError(f"{path}: bad checkpoint magic")
    body, (crc,) = data[8:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ConfigError(f"{path}: checkpoint CRC mismatch")
    tensors: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(body):
        (nlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos)
        pos += 8 * count
        tensors[name] = arr.reshape(dims).astype(np.float64)
    return tensors


# --- run configuration --------------------------------------------------------

CONFIG_DEFAULTS: dict[str, object] = {
    "seed": 0,
    "model.cell": "lstm",
    "model.k": 3,
    "model.channels": "8,16,32",
    "model.backbone_k": 3,
    "model.rnn_channels": 16,
    "model.rnn_depth": 1,
    "model.L": 5,
    "model.alpha": 1.0,
    "model.hidden": 128,
    "model.template_res": 32,
    "model.window_res": 0,  # 0 = derived from template_res and alpha
    "model.variant": "full",
    "model.literal_cell_coupling": 0,
    "train.lr0": 0.01,
    "train.stage1_lr0": 0.01,
    "train.stage1_iters": 1000,
    "train.decay_factor": 0.1,
    "train.decay_period": 1000,
    "train.iters": 4000,
    "train.batch": 5,
    "train.momentum": 0.9,
    "data.t0": 6,
    "proposal.diff_threshold": 35.0,
    "proposal.min_area": 6,
    "proposal.dilation": 1,
    "proposal.history": 6,
    "eval.iou": 0.5,
    "eval.min_track_len": 10,
}


def parse_config(path_or_text: str | Path | None) -> dict[str, object]:
    """Flat ``key = value`` config with documented defaults; rejects unknown keys."""
    cfg = dict(CONFIG_DEFAULTS)
    if path_or_text is None:
        return cfg
    text = Path(path_or_text).read_text() if Path(str(path_or_text)).exists() else str(path_or_text)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        default = CONFIG_DEFAULTS[key]
        try:
            if isinstance(default, int):
                cfg[key] = int(value)
            elif isinstance(default, float):
                cfg[key] = float(value)
            else:
                cfg[key] = value
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from e
    return cfg


# --- CSV -----------------------------------------------------------------------


def write_csv(path, header: str, rows) -> None:
    """CSV with '.' decimals and LF line endings regardless of locale."""
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
