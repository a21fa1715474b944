import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sisweak.core import BoundingBox, iou
from sisweak.proposals import (
    DEFAULT_NMS_THRESHOLD,
    DEFAULT_TOP_K,
    IGNORE,
    NEGATIVE,
    NEGATIVE_IOU,
    POSITIVE,
    POSITIVE_IOU,
    Proposal,
    assign_samples,
    nms,
    top_k,
)


@st.composite
def proposal(draw):
    x0 = draw(st.integers(0, 15))
    y0 = draw(st.integers(0, 15))
    box = BoundingBox(x0, y0, draw(st.integers(x0 + 1, 20)), draw(st.integers(y0 + 1, 20)))
    return Proposal(box, draw(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9, 1.0])))


proposals = st.lists(proposal(), max_size=12)


def test_defaults():
    assert DEFAULT_NMS_THRESHOLD == 0.7 and DEFAULT_TOP_K == 80
    assert (POSITIVE_IOU, NEGATIVE_IOU) == (0.7, 0.3)


def test_score_validated():
    with pytest.raises(ValueError):
        Proposal(BoundingBox(0, 0, 1, 1), 1.2)


class TestNms:
    def test_duplicates(self):
        b = BoundingBox(0, 0, 5, 5)
        kept = nms([Proposal(b, 0.8), Proposal(b, 0.9)], 0.7)
        assert kept == [Proposal(b, 0.9)]

    def test_shifted_pair_survives(self):
        a = Proposal(BoundingBox(0, 0, 10, 10), 0.9)
        b = Proposal(BoundingBox(1, 1, 11, 11), 0.8)
        assert nms([b, a], 0.7) == [a, b]

    def test_empty(self):
        assert nms([]) == []

    def test_tie_break_by_origin(self):
        a = Proposal(BoundingBox(5, 0, 10, 5), 0.5)
        b = Proposal(BoundingBox(0, 0, 5, 5), 0.5)
        c = Proposal(BoundingBox(0, 3, 5, 8), 0.5)
        assert nms([c, a, b], 0.9) == [b, a, c]

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            nms([], 0.0)

    @given(proposals, st.sampled_from([0.3, 0.5, 0.7, 1.0]))
    def test_properties(self, props, t):
        kept = nms(props, t)
        assert all(p in props for p in kept)
        for i, p in enumerate(kept):
            for q in kept[i + 1:]:
                assert iou(p.box, q.box) <= t
        if props:
            assert kept[0].score == max(p.score for p in props)
        assert nms(kept, t) == kept


class TestTopK:
    def test_hundred_to_eighty(self):
        rng = np.random.default_rng(0)
        props = [Proposal(BoundingBox(i, 0, i + 2, 2), float(s))
                 for i, s in enumerate(rng.uniform(size=100))]
        out = top_k(props)
        assert len(out) == 80
        assert [p.score for p in out] == sorted((p.score for p in props), reverse=True)[:80]

    def test_short_list_and_zero(self):
        props = [Proposal(BoundingBox(0, 0, 1, 1), 0.2), Proposal(BoundingBox(1, 0, 2, 1), 0.4)]
        assert top_k(props, 5) == props[::-1]
        assert top_k(props, 0) == []
        with pytest.raises(ValueError):
            top_k(props, -1)


class TestAssign:
    def test_examples(self):
        gt = [BoundingBox(0, 0, 10, 10)]
        half = BoundingBox(0, 0, 10, 5)  # IoU exactly 0.5
        labels = assign_samples([gt[0], BoundingBox(20, 20, 25, 25), half], gt)
        assert labels == [POSITIVE, NEGATIVE, IGNORE]

    def test_boundaries_are_ignore(self):
        gt = [BoundingBox(0, 0, 10, 10)]
        seven = BoundingBox(0, 0, 10, 7)
        three = BoundingBox(0, 0, 10, 3)
        assert assign_samples([seven, three], gt) == [IGNORE, IGNORE]

    def test_no_gt(self):
        assert assign_samples([BoundingBox(0, 0, 2, 2)] * 3, []) == [NEGATIVE] * 3

    def test_thresholds_validated(self):
        with pytest.raises(ValueError):
            assign_samples([], [], 0.3, 0.7)

    @given(st.lists(proposal(), min_size=1, max_size=8), st.lists(proposal(), max_size=4),
           st.floats(0.3, 0.99))
    def test_raising_pos_thresh(self, anchors, gts, pos):
        anchors = [p.box for p in anchors]
        gts = [p.box for p in gts]
        base = assign_samples(anchors, gts, 0.3, 0.2)
        raised = assign_samples(anchors, gts, pos, 0.2)
        assert len(raised) == len(anchors)
        for before, after in zip(base, raised):
            if before == NEGATIVE:
                assert after == NEGATIVE
            if after == POSITIVE:
                assert before == POSITIVE
