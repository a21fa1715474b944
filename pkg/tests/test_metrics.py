import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sisweak.core import BoundingBox
from sisweak.metrics import (
    ALPHAS,
    InstancePrediction,
    ap,
    ap_r,
    box_deltas,
    box_losses,
    evaluate,
    iou_matrix,
    match_instances,
    optimal_match_count,
    seg_loss,
    smooth_l1,
    total_loss,
)
from sisweak.metrics import _greedy


def strip(h, w, x0, x1):
    m = np.zeros((h, w), dtype=bool)
    m[:, x0:x1] = True
    return m


def random_dataset(rng, n_images=4, size=6):
    data = []
    for _ in range(n_images):
        gts = [rng.random((size, size)) < 0.4 for _ in range(int(rng.integers(1, 5)))]
        preds = []
        for _ in range(int(rng.integers(0, 5))):
            base = gts[int(rng.integers(len(gts)))]
            noise = rng.random((size, size)) < rng.uniform(0, 0.3)
            preds.append(InstancePrediction(base ^ noise, float(rng.uniform())))
        data.append((preds, gts))
    return data


def test_alphas():
    assert ALPHAS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class TestMatching:
    def test_identical_any_order(self):
        gts = [strip(4, 8, 0, 2), strip(4, 8, 3, 5), strip(4, 8, 6, 8)]
        preds = [InstancePrediction(g, s) for g, s in zip(gts[::-1], (0.2, 0.9, 0.5))]
        for a in ALPHAS + (1.0,):
            assert len(match_instances(preds, gts, a)) == 3

    def test_no_predictions(self):
        assert match_instances([], [strip(2, 2, 0, 1)], 0.5) == []

    def test_higher_score_claims_gt(self):
        gt = strip(1, 10, 0, 10)
        p_hi = InstancePrediction(strip(1, 10, 0, 8), 0.9)  # IoU 0.8
        p_lo = InstancePrediction(strip(1, 10, 0, 6), 0.4)  # IoU 0.6
        m = match_instances([p_lo, p_hi], [gt], 0.5)
        assert len(m) == 1 and m[0].pred == 1 and m[0].iou == pytest.approx(0.8)

    def test_alpha_validated(self):
        with pytest.raises(ValueError):
            match_instances([], [], 0.0)

    def test_score_validated(self):
        with pytest.raises(ValueError):
            InstancePrediction(np.zeros((2, 2)), -0.1)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(ALPHAS))
    def test_one_to_one_above_alpha(self, seed, alpha):
        rng = np.random.default_rng(seed)
        preds, gts = random_dataset(rng, 1)[0]
        matches = match_instances(preds, gts, alpha)
        ious = iou_matrix(preds, gts)
        assert len({m.gt for m in matches}) == len(matches)
        assert len({m.pred for m in matches}) == len(matches)
        assert all(ious[m.pred, m.gt] >= alpha for m in matches)
        assert len(matches) <= optimal_match_count(ious, alpha)


def test_greedy_can_diverge_from_optimal():
    # p0 (top score) grabs g0 although only g0 fits p1 too: greedy 1, optimal 2.
    ious = np.array([[0.9, 0.6], [0.8, 0.0]])
    assert optimal_match_count(ious, 0.5) == 2
    assert len(_greedy(ious, [0, 1], 0.5)) == 1


class TestApR:
    def test_perfect(self):
        gts = [strip(3, 6, 0, 2), strip(3, 6, 4, 6)]
        data = [([InstancePrediction(g) for g in gts], gts)]
        assert all(ap_r(data, a) == 1.0 for a in ALPHAS)

    def test_half_matched(self):
        gts = [strip(3, 6, 0, 2), strip(3, 6, 4, 6)]
        assert ap_r([([InstancePrediction(gts[0])], gts)], 0.5) == 0.5

    def test_mean_over_images(self):
        g = [strip(2, 4, 0, 1), strip(2, 4, 2, 4)]
        data = [([InstancePrediction(x) for x in g], g), ([InstancePrediction(g[0])], g)]
        assert ap_r(data, 0.5) == pytest.approx(0.75)

    def test_images_without_gt_excluded(self):
        g = [strip(2, 4, 0, 2)]
        rep = evaluate([("a", [InstancePrediction(g[0])], g), ("b", [], [])])
        assert rep.excluded == ["b"] and rep.ap == 1.0

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            ap_r([], 0.5)
        with pytest.raises(ValueError):
            ap([([], [])])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_in_alpha(self, seed):
        rep = ap(random_dataset(np.random.default_rng(seed)))
        vals = list(rep.ap_r.values())
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestAp:
    def test_perfect(self):
        gts = [strip(3, 6, 0, 3)]
        assert ap([([InstancePrediction(gts[0])], gts)]).ap == 1.0

    def test_uniform_point_six(self):
        gt = strip(1, 5, 0, 5)
        pred = InstancePrediction(strip(1, 5, 0, 3))  # IoU 3/5
        rep = ap([([pred], [gt]), ([pred], [gt])])
        assert [rep.ap_r[a] for a in ALPHAS] == [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
        assert rep.ap == pytest.approx(0.3, abs=1e-12)

    def test_empty_predictions(self):
        assert ap([([], [strip(2, 2, 0, 1)])]).ap == 0.0

    def test_report_shape(self):
        g = [strip(2, 4, 0, 2)]
        rep = ap([("img", [InstancePrediction(g[0], 0.7)], g)])
        d = rep.to_dict()
        assert d["ap"] == pytest.approx(sum(d["ap_r"]) / 10, abs=1e-9)
        assert d["images"][0]["image"] == "img" and d["images"][0]["n_gt"] == 1
        assert "AP" in rep.table()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_ap_is_mean(self, seed):
        rep = ap(random_dataset(np.random.default_rng(seed)))
        assert abs(rep.ap - sum(rep.ap_r.values()) / 10) <= 1e-9


class TestLosses:
    def test_seg_loss_values(self):
        t = np.array([[1, 0], [0, 1]], dtype=bool)
        assert seg_loss(t.astype(float), t) <= 1e-7
        assert seg_loss(np.full((2, 2), 0.5), t) == pytest.approx(math.log(2))
        assert seg_loss(np.array([[1e-8]]), np.ones((1, 1))) == pytest.approx(18.4207, abs=1e-4)

    def test_seg_loss_shape(self):
        with pytest.raises(ValueError):
            seg_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    @given(st.integers(0, 2**31))
    def test_seg_loss_minimized_at_target(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.random((3, 3)) < 0.5
        p = rng.uniform(size=(3, 3))
        assert 0 <= seg_loss(t.astype(float), t) <= seg_loss(p, t)

    def test_box_losses(self):
        b = [BoundingBox(0, 0, 4, 4), BoundingBox(2, 2, 6, 9)]
        cls, reg = box_losses(b, b, [1.0, 0.0], [1, 0])
        assert reg == 0.0 and cls <= 1e-7

    def test_unit_delta(self):
        # dx = 1: the ground-truth centre sits one box width to the right.
        pred, gt = BoundingBox(0, 0, 4, 4), BoundingBox(4, 0, 8, 4)
        np.testing.assert_allclose(box_deltas(pred, gt), [1, 0, 0, 0])
        assert box_losses([pred], [gt], [0.5], [1])[1] == pytest.approx(0.5)
        assert smooth_l1(1.0) == 0.5 and smooth_l1(0.5) == 0.125 and smooth_l1(-3.0) == 2.5

    def test_box_losses_misaligned(self):
        with pytest.raises(ValueError):
            box_losses([BoundingBox(0, 0, 1, 1)], [], [0.5], [1])

    def test_total(self):
        assert total_loss(0, 0, 0, 0) == 0
        assert total_loss(0.1, 0.2, 0.3, 0.4) == pytest.approx(1.0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
    def test_total_is_sum(self, xs):
        assert total_loss(*xs) == pytest.approx(sum(xs), abs=1e-6)
