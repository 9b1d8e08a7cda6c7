import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcnet import metrics
from rcnet.localizer import BoundingBox
from rcnet.metrics import (DetectionRecord, Trajectory, fppi_mr_curve,
                           log_average_mr, match_frame, ope_success,
                           success_auc)


def B(x, y, w=10, h=10):
    return BoundingBox(x, y, w, h)


def random_records(seed, n_frames=6):
    r = np.random.default_rng(seed)
    records = []
    for _ in range(n_frames):
        gts = [B(float(r.uniform(0, 80)), float(r.uniform(0, 80)))
               for _ in range(r.integers(0, 3))]
        dets = []
        for _ in range(r.integers(0, 4)):
            if gts and r.uniform() < 0.5:
                g = gts[r.integers(len(gts))]
                box = B(g.x + float(r.uniform(-3, 3)), g.y + float(r.uniform(-3, 3)))
            else:
                box = B(float(r.uniform(0, 80)), float(r.uniform(0, 80)))
            dets.append((box, float(r.uniform(0, 1))))
        records.append(DetectionRecord(gts=gts, dets=dets))
    return records


class TestMatchFrame:
    def test_perfect_match(self):
        gts = [B(0, 0), B(40, 40)]
        dets = [(B(0, 0), 0.9), (B(40, 40), 0.8)]
        assert match_frame(dets, gts) == (2, 0, 0)

    def test_each_gt_claimed_once(self):
        gts = [B(0, 0)]
        dets = [(B(0, 0), 0.9), (B(1, 0), 0.8)]
        assert match_frame(dets, gts) == (1, 1, 0)

    def test_higher_confidence_matches_first(self):
        # the low-confidence det overlaps better but loses the gt
        gts = [B(0, 0)]
        dets = [(B(3, 0), 0.9), (B(0, 0), 0.1)]
        tp, fp, missed = match_frame(dets, gts)
        assert (tp, fp, missed) == (1, 1, 0)

    def test_iou_tie_goes_to_lower_gt_index(self):
        gts = [B(0, 0), B(6, 0)]
        det = (B(3, 0), 0.9)  # equal IoU 7/13 with both
        tp, fp, missed = match_frame([det], gts, iou_thresh=0.5)
        assert (tp, fp, missed) == (1, 0, 1)
        # and the claimed one is gt[0]: a second det at gt[0] now misses it
        tp, fp, missed = match_frame([det, (B(0, 0), 0.8)], gts, iou_thresh=0.5)
        assert fp == 1

    def test_below_threshold_is_fp(self):
        assert match_frame([(B(8, 8), 0.9)], [B(0, 0)]) == (0, 1, 1)

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_invariant_under_monotone_confidence_map(self, seed):
        r = np.random.default_rng(seed)
        gts = [B(float(r.uniform(0, 60)), float(r.uniform(0, 60)))
               for _ in range(2)]
        dets = [(B(float(r.uniform(0, 60)), float(r.uniform(0, 60))),
                 float(r.uniform(0, 1))) for _ in range(4)]
        mapped = [(b, 2.0 * c + 1.0) for b, c in dets]
        assert match_frame(dets, gts) == match_frame(mapped, gts)


class TestCurve:
    def test_no_detections(self):
        assert fppi_mr_curve([DetectionRecord(gts=[B(0, 0)], dets=[])]) \
            == [(0.0, 1.0)]
        assert fppi_mr_curve([DetectionRecord()]) == [(0.0, 0.0)]

    def test_single_tp(self):
        curve = fppi_mr_curve([DetectionRecord(gts=[B(0, 0)],
                                               dets=[(B(0, 0), 0.7)])])
        assert curve == [(0.0, 0.0)]

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_monotone_tradeoff(self, seed):
        """Lowering the threshold never removes detections: FP counts are
        non-decreasing and misses non-increasing along the sweep."""
        records = random_records(seed)
        confs = sorted({c for r in records for _, c in r.dets}, reverse=True)
        prev_fp, prev_missed = -1, None
        for thr in confs:
            fp = missed = 0
            for r in records:
                kept = [(b, c) for b, c in r.dets if c >= thr]
                _, f, m = match_frame(kept, r.gts)
                fp += f
                missed += m
            assert fp >= prev_fp
            if prev_missed is not None:
                assert missed <= prev_missed
            prev_fp, prev_missed = fp, missed

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_log_average_in_unit_range(self, seed):
        records = random_records(seed)
        assert 0.0 <= log_average_mr(fppi_mr_curve(records)) <= 1.0


class TestLogAverageMr:
    def test_flat_curve_returns_constant(self):
        assert abs(log_average_mr([(0.0, 0.25), (1.0, 0.25)]) - 0.25) < 1e-12

    def test_perfect_detector_hits_floor(self):
        assert log_average_mr([(0.0, 0.0)]) == pytest.approx(1e-10)

    def test_references_below_curve_use_worst_miss(self):
        # whole curve above fppi=1 except one point: fallback everywhere
        assert abs(log_average_mr([(5.0, 0.9), (7.0, 0.2)]) - 0.9) < 1e-12

    def test_hand_computed_three_image_case(self):
        records = [
            DetectionRecord(gts=[B(10, 10)],
                            dets=[(B(10, 10), 0.9), (B(50, 50), 0.8)]),
            DetectionRecord(gts=[B(20, 20)], dets=[(B(21, 20), 0.6)]),
            DetectionRecord(gts=[B(30, 30)], dets=[(B(60, 60, 8, 8), 0.4)]),
        ]
        curve = fppi_mr_curve(records)
        assert curve == [(0.0, 2 / 3), (1 / 3, 1 / 3), (1 / 3, 2 / 3),
                         (2 / 3, 1 / 3)]
        # 7 reference points below fppi 1/3 read miss 2/3, the last 2 read 1/3
        want = np.exp((7 * np.log(2 / 3) + 2 * np.log(1 / 3)) / 9)
        assert abs(log_average_mr(curve) - want) < 1e-12


class TestOpe:
    def test_trajectory_requires_contiguous_frames(self):
        with pytest.raises(ValueError):
            Trajectory([0, 2], [B(0, 0), B(1, 1)])
        with pytest.raises(ValueError):
            Trajectory([0], [])

    def test_identical_trajectories(self):
        tr = Trajectory([0, 1, 2], [B(0, 0), B(1, 1), B(2, 2)])
        curve = ope_success(tr, tr)
        for t, s in curve:
            assert s == (1.0 if t < 1.0 else 0.0)

    def test_disjoint_trajectories(self):
        a = Trajectory([0, 1], [B(0, 0), B(0, 0)])
        b = Trajectory([0, 1], [B(50, 50), B(50, 50)])
        assert all(s == 0.0 for _, s in ope_success(a, b))

    def test_half_overlap(self):
        gt = Trajectory([0, 1, 2, 3], [B(0, 0)] * 4)
        pred = Trajectory([0, 1, 2, 3], [B(0, 0), B(0, 0), B(50, 50), B(50, 50)])
        curve = ope_success(pred, gt)
        for t, s in curve:
            if 0.0 < t < 1.0:
                assert s == 0.5

    def test_non_increasing_in_threshold(self, rng):
        frames = list(range(8))
        gt = Trajectory(frames, [B(float(rng.uniform(0, 50)),
                                   float(rng.uniform(0, 50))) for _ in frames])
        pred = Trajectory(frames, [B(g.x + float(rng.uniform(-8, 8)),
                                     g.y + float(rng.uniform(-8, 8)))
                                   for g in gt.boxes])
        rates = [s for _, s in ope_success(pred, gt)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_auc_is_mean(self):
        curve = [(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]
        assert success_auc(curve) == 0.5
