import numpy as np
import pytest

from rcnet import io
from rcnet.errors import ConfigError
from rcnet.localizer import BoundingBox
from rcnet.synthgen import ObjectTrack


class TestPgm:
    def test_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, (17, 23)).astype(np.uint8)
        p = tmp_path / "a.pgm"
        io.write_pgm(p, img)
        np.testing.assert_array_equal(io.read_pgm(p), img)

    def test_header_layout(self, tmp_path):
        p = tmp_path / "a.pgm"
        io.write_pgm(p, np.zeros((2, 3), dtype=np.uint8))
        assert p.read_bytes().startswith(b"P5\n3 2\n255\n")

    def test_rejects_non_uint8(self, tmp_path):
        with pytest.raises(ConfigError):
            io.write_pgm(tmp_path / "a.pgm", np.zeros((2, 2)))

    def test_reads_comment_headers(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04")
        np.testing.assert_array_equal(io.read_pgm(p), [[1, 2], [3, 4]])

    def test_rejects_wrong_magic(self, tmp_path):
        p = tmp_path / "b.pgm"
        p.write_bytes(b"P2\n2 2\n255\n....")
        with pytest.raises(ConfigError):
            io.read_pgm(p)


class TestGt:
    def test_roundtrip(self, tmp_path):
        tracks = [
            ObjectTrack(track_id=0, cls=1,
                        boxes=[(0, BoundingBox(1, 2, 3, 4)),
                               (1, BoundingBox(2.5, 3.5, 3, 4))]),
            ObjectTrack(track_id=1, cls=0, boxes=[(0, BoundingBox(9, 9, 2, 2))]),
        ]
        p = tmp_path / "gt.txt"
        io.write_gt(p, tracks)
        back = io.read_gt(p)
        assert len(back) == 2
        assert back[0].cls == 1 and back[1].cls == 0
        f, b = back[0].boxes[1]
        assert (f, b.x, b.y, b.w, b.h) == (1, 2.5, 3.5, 3, 4)

    def test_line_format(self, tmp_path):
        p = tmp_path / "gt.txt"
        io.write_gt(p, [ObjectTrack(track_id=3, cls=1,
                                    boxes=[(7, BoundingBox(10, 11, 12, 13))])])
        assert p.read_text() == "7 3 1 10 11 12 13\n"


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        tensors = {
            "a.w": rng.normal(size=(3, 4, 5)),
            "b": rng.normal(size=7),
            "scalar": np.asarray(3.25),
        }
        p = tmp_path / "m.ckpt"
        io.save_checkpoint(p, tensors)
        back = io.load_checkpoint(p)
        assert list(back) == list(tensors)
        for k in tensors:
            np.testing.assert_array_equal(back[k], tensors[k])
            assert back[k].dtype == np.float64

    def test_magic(self, tmp_path):
        p = tmp_path / "m.ckpt"
        io.save_checkpoint(p, {"a": np.zeros(2)})
        assert p.read_bytes()[:8] == b"RCNCKPT1"

    def test_corruption_detected(self, tmp_path):
        p = tmp_path / "m.ckpt"
        io.save_checkpoint(p, {"a": np.arange(4.0)})
        raw = bytearray(p.read_bytes())
        raw[20] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(ConfigError, match="CRC"):
            io.load_checkpoint(p)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "m.ckpt"
        p.write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(ConfigError, match="magic"):
            io.load_checkpoint(p)


class TestConfig:
    def test_defaults_when_missing(self):
        cfg = io.parse_config(None)
        assert cfg == io.CONFIG_DEFAULTS

    def test_parse_overrides_and_comments(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nmodel.k = 5\ntrain.lr0 = 0.2  # inline\n\n")
        cfg = io.parse_config(p)
        assert cfg["model.k"] == 5 and cfg["train.lr0"] == 0.2
        assert cfg["model.cell"] == "lstm"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("model.bogus = 1\n")
        with pytest.raises(ConfigError, match="model.bogus"):
            io.parse_config(p)

    def test_bad_value_type_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("model.k = three\n")
        with pytest.raises(ConfigError, match="model.k"):
            io.parse_config(p)

    def test_missing_equals_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("model.k 3\n")
        with pytest.raises(ConfigError, match="key = value"):
            io.parse_config(p)


class TestCsv:
    def test_lf_endings_and_dot_decimals(self, tmp_path):
        p = tmp_path / "out.csv"
        io.write_csv(p, "a,b", [(1, 0.5), ("x", 2.25)])
        assert p.read_bytes() == b"a,b\n1,0.5\nx,2.25\n"

    def test_float_repr_roundtrips(self, tmp_path):
        p = tmp_path / "out.csv"
        v = 0.1 + 0.2
        io.write_csv(p, "v", [(v,)])
        assert float(p.read_text().splitlines()[1]) == v
