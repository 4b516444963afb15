import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import box_iou, brute_ap, max_matching

from burrnas.detectmetrics import (
    IOU_THRESHOLDS,
    Detection,
    EvalConfig,
    ap_from_flags,
    average_precision,
    extract_boxes,
    iou,
    match_at_iou,
    mean_ap,
    nms,
    per_threshold_ap,
    pooled_ap,
    read_detections,
    write_detections,
)
from burrnas.errors import ParseError
from burrnas.geometry import BBox


def det(x0, y0, x1, y1, conf):
    return Detection(BBox(x0, y0, x1, y1), conf)


def random_case(rng, n_det=4, n_gt=3):
    def box():
        x, y = rng.integers(0, 8, 2)
        w, h = rng.integers(2, 6, 2)
        return BBox(float(x), float(y), float(x + w), float(y + h))

    dets = [Detection(box(), float(c)) for c in rng.permutation(np.linspace(0.1, 0.9, 9))[: rng.integers(0, n_det + 1)]]
    gts = [box() for _ in range(rng.integers(1, n_gt + 1))]
    return dets, gts


# ---------------------------------------------------------------- iou


def test_iou_examples():
    a = BBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(5, 5, 6, 6)) == 0.0
    assert iou(a, BBox(1, 1, 3, 3)) == pytest.approx(1 / 7)


coords = st.integers(0, 20)


@st.composite
def boxes(draw):
    x0, y0 = draw(coords), draw(coords)
    return BBox(x0, y0, x0 + draw(st.integers(1, 10)), y0 + draw(st.integers(1, 10)))


@given(boxes(), boxes())
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0 <= v <= 1
    assert iou(a, a) == 1
    assert v == pytest.approx(box_iou(a.as_tuple(), b.as_tuple()))


# ---------------------------------------------------------------- boxes and nms


def test_extract_boxes_examples():
    assert extract_boxes(np.zeros((5, 5)), 4, 0.5) == []
    m = np.zeros((5, 5))
    m[2, 3] = 0.9
    [d] = extract_boxes(m, 4, 0.5)
    assert d.box == BBox(12, 8, 16, 12) and d.confidence == 0.9
    diag = np.zeros((4, 4))
    diag[1, 1] = diag[2, 2] = 0.8
    assert len(extract_boxes(diag, 1, 0.5)) == 2


def test_extract_boxes_component_peak():
    m = np.zeros((6, 6))
    m[1, 1:4] = [0.6, 0.95, 0.7]
    m[2, 3] = 0.55
    [d] = extract_boxes(m, 2, 0.5)
    assert d.box == BBox(2, 2, 8, 6) and d.confidence == 0.95


def test_nms_examples():
    a = det(0, 0, 10, 10, 0.9)
    b = det(0, 0, 10, 8, 0.8)  # IoU 0.8 with a
    assert iou(a.box, b.box) == pytest.approx(0.8)
    assert nms([b, a], 0.5) == [a]
    far = [det(0, 0, 1, 1, 0.3), det(5, 5, 6, 6, 0.4)]
    assert len(nms(far, 0.5)) == 2


def test_nms_greedy_chain():
    # A overlaps B and B overlaps C, A and C are disjoint; suppressing B frees C
    A, B, C = det(0, 0, 10, 10, 0.9), det(5, 0, 15, 10, 0.8), det(10, 0, 20, 10, 0.7)
    assert iou(A.box, B.box) == pytest.approx(1 / 3) and iou(A.box, C.box) == 0
    assert nms([C, B, A], 0.3) == [A, C]


def test_nms_tie_prefers_smaller_box():
    big, small = det(0, 0, 10, 10, 0.5), det(0, 0, 9, 9, 0.5)
    assert nms([big, small], 0.5) == [small]


@given(st.lists(st.tuples(boxes(), st.floats(0, 1)), max_size=8), st.floats(0.1, 0.9))
def test_nms_idempotent(items, thr):
    dets = [Detection(b, c) for b, c in items]
    once = nms(dets, thr)
    assert nms(once, thr) == once


# ---------------------------------------------------------------- matching and AP


def test_match_examples():
    g = BBox(0, 0, 10, 10)
    assert match_at_iou([det(0, 0, 10, 10, 0.9)], [g], 0.5).tp == [True]
    m = match_at_iou([det(0, 0, 10, 9, 0.6), det(0, 0, 10, 10, 0.8)], [g], 0.5)
    assert m.tp == [False, True] and m.n_tp == 1
    low = det(0, 0, 10, 10 * 0.45, 0.9)
    assert iou(low.box, g) == pytest.approx(0.45)
    assert match_at_iou([low], [g], 0.5).tp == [False]


def test_ap_examples():
    g = [BBox(0, 0, 10, 10)]
    assert average_precision([det(0, 0, 10, 10, 0.9)], g, 0.5).ap == 1.0
    curve = average_precision([det(50, 50, 60, 60, 0.95), det(0, 0, 10, 10, 0.9)], g, 0.5)
    assert curve.points == [(0.0, 0.0), (1.0, 0.5)]
    assert curve.ap == pytest.approx(0.5)
    assert average_precision([], g, 0.5).ap == 0.0
    assert ap_from_flags([], [], 0).ap == 1.0
    assert ap_from_flags([0.5], [False], 0).ap == 0.0


def test_map_threshold_sweep():
    g = BBox(0, 0, 10, 10)
    d = det(0, 0, 7, 10, 0.8)
    assert iou(d.box, g) == 0.7
    aps = per_threshold_ap([[d]], [[g]])
    assert aps == [1.0] * 5 + [0.0] * 5
    assert mean_ap([[d]], [[g]]) == 0.5


def test_map_perfect_and_all_false():
    gts = [[BBox(0, 0, 4, 4)], [BBox(2, 2, 9, 9), BBox(20, 20, 25, 30)]]
    perfect = [[Detection(b, 0.9) for b in img] for img in gts]
    assert mean_ap(perfect, gts) == 1.0
    wrong = [[det(40, 40, 50, 50, 0.9)], [det(60, 60, 61, 61, 0.7)]]
    assert mean_ap(wrong, gts) == 0.0


def test_map_is_mean_of_thresholds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        cases = [random_case(rng) for _ in range(3)]
        dets, gts = [c[0] for c in cases], [c[1] for c in cases]
        aps = per_threshold_ap(dets, gts)
        assert mean_ap(dets, gts) == pytest.approx(sum(aps) / len(IOU_THRESHOLDS), abs=1e-15)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.5, 0.5))
    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.5, 1.0))


def test_ap_matches_brute_force_and_is_monotone():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        dets, gts = random_case(rng)
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        m = match_at_iou(dets, gts, thr)
        scores = [d.confidence for d in dets]
        ap = average_precision(dets, gts, thr).ap
        assert ap == pytest.approx(brute_ap(scores, m.tp, len(gts)), abs=1e-12)

        # a lowest-confidence false positive never helps
        fp = Detection(BBox(100, 100, 101, 101), 0.01)
        assert average_precision(dets + [fp], gts, thr).ap <= ap + 1e-12

        # a true positive on a still-unmatched GT never hurts
        free = [g for g, hit in zip(gts, m.gt_matched) if not hit and g not in gts[: gts.index(g)]]
        if free:
            tp = Detection(free[0], float(rng.uniform(0.05, 0.95)))
            assert average_precision(dets + [tp], gts, thr).ap >= ap - 1e-12


def test_greedy_matching_close_to_maximum():
    rng = np.random.default_rng(99)
    agree = 0
    for _ in range(1000):
        dets, gts = random_case(rng)
        greedy = match_at_iou(dets, gts, 0.5).n_tp
        best = max_matching([d.box.as_tuple() for d in dets], [g.as_tuple() for g in gts], 0.5)
        assert greedy <= best
        agree += greedy == best
    assert agree >= 950


def test_pooled_ap_requires_aligned_sets():
    with pytest.raises(ValueError):
        pooled_ap([[]], [[], []], 0.5)


def test_detections_file_round_trip(tmp_path):
    dets = {"a": [det(0, 0, 4, 4, 0.7), det(1, 2, 3, 4, 0.2)], "b": []}
    write_detections(tmp_path / "d.json", dets)
    assert read_detections(tmp_path / "d.json") == dets
    (tmp_path / "bad.json").write_text('{"a": {"boxes": [[0, 0, 1, 1]], "scores": []}}')
    with pytest.raises(ParseError):
        read_detections(tmp_path / "bad.json")
