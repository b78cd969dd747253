import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shelfalign.detection import (
    DETECTED_COLOR,
    OVERLAY_COLORS,
    find_empty_and_unknown,
    fit_box,
    footprint_fraction,
    iou,
    render_overlay,
    suppress,
)
from shelfalign.types import EMPTY_ID, UNKNOWN_ID, BoundingBox, CandidateCenter, DetectedObject, GrayImage


def _detection(object_id, x0, y0, x1, y1, vote=1.0):
    box = BoundingBox(x0, y0, x1, y1)
    return DetectedObject(object_id, box.center, box, vote)


def _candidate(object_id, x, y, vote, half=10.0):
    return CandidateCenter(object_id, x, y, vote), BoundingBox(x - half, y - half, x + half, y + half)


def test_fit_box_centers_model_footprint():
    box = fit_box(CandidateCenter("o1", 100, 100, 1.0), 40, 60, 1.0, 640, 480)
    assert box == BoundingBox(80, 70, 120, 130)


def test_fit_box_clamps_to_shelf():
    box = fit_box(CandidateCenter("o1", 0, 0, 1.0), 40, 60, 1.0, 640, 480)
    assert box == BoundingBox(0, 0, 20, 30)


def test_fit_box_scales_by_beta():
    box = fit_box(CandidateCenter("o1", 50, 100, 1.0), 50, 200, 0.5, 640, 480)
    assert box == BoundingBox(37.5, 50, 62.5, 150)


def test_fit_box_rejects_non_positive_beta():
    with pytest.raises(ValueError):
        fit_box(CandidateCenter("o1", 0, 0, 1.0), 10, 10, 0.0, 100, 100)


def test_footprint_fraction_of_clamped_boxes():
    # center on the bottom edge of a 120 px shelf keeps half the height
    box = fit_box(CandidateCenter("o2", 689, 120, 1.0), 82, 120, 1.0, 800, 120)
    assert footprint_fraction(box, 82, 120, 1.0) == pytest.approx(0.5)
    inside = fit_box(CandidateCenter("o2", 100, 60, 1.0), 82, 120, 1.0, 800, 120)
    assert footprint_fraction(inside, 82, 120, 1.0) == pytest.approx(1.0)
    scaled = fit_box(CandidateCenter("o2", 50, 100, 1.0), 50, 200, 0.5, 640, 480)
    assert footprint_fraction(scaled, 50, 200, 0.5) == pytest.approx(1.0)


def test_iou_values():
    a = BoundingBox(0, 0, 10, 10)
    b = BoundingBox(5, 0, 15, 10)
    assert iou(a, b) == pytest.approx(1 / 3)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(10, 0, 20, 10)) == 0.0


boxes = st.tuples(st.floats(0, 50), st.floats(0, 50), st.floats(0.5, 30), st.floats(0.5, 30)).map(
    lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3])
)


@given(boxes, boxes)
def test_iou_is_symmetric_and_bounded(a, b):
    assert iou(a, b) == pytest.approx(iou(b, a))
    assert 0.0 <= iou(a, b) <= 1.0


def test_suppression_keeps_stronger_of_overlapping_pair():
    survivors = suppress([_candidate("o1", 50, 50, 2.0), _candidate("o2", 52, 50, 5.0)])
    assert [(d.object_id, d.vote) for d in survivors] == [("o2", 5.0)]


def test_suppression_keeps_disjoint_candidates():
    survivors = suppress([_candidate("o1", 50, 50, 2.0), _candidate("o1", 100, 50, 1.0)])
    assert [d.center for d in survivors] == [(50, 50), (100, 50)]


def test_kept_detections_are_never_displaced():
    kept = [_detection("o1", 40, 40, 60, 60, vote=0.5)]
    survivors = suppress([_candidate("o2", 50, 50, 9.0), _candidate("o2", 150, 50, 3.0)], kept=kept)
    assert survivors[0] is kept[0]
    assert [d.center for d in survivors[1:]] == [(150, 50)]


@pytest.mark.parametrize("thresh", [0.0, 1.0, -0.2])
def test_suppression_rejects_bad_threshold(thresh):
    with pytest.raises(ValueError):
        suppress([], overlap_thresh=thresh)


candidate_lists = st.lists(
    st.tuples(st.sampled_from(["o1", "o2", "o3"]), st.integers(0, 100), st.integers(0, 40), st.integers(1, 20)),
    max_size=12,
    unique_by=lambda t: (t[0], t[1], t[2]),
)


@given(candidate_lists, st.randoms())
def test_suppression_is_order_independent_and_leaves_no_overlap(raw, rnd):
    candidates = [_candidate(o, float(x), float(y), float(v)) for o, x, y, v in raw]
    shuffled = list(candidates)
    rnd.shuffle(shuffled)
    first = suppress(candidates)
    assert first == suppress(shuffled)
    for i, a in enumerate(first):
        for b in first[i + 1:]:
            assert iou(a.box, b.box) <= 0.2


def _shelf(width, spans, height=100, background=200):
    """Bright shelf with dark columns in each (x0, x1) span."""
    pixels = np.full((height, width), background, dtype=np.uint8)
    for x0, x1 in spans:
        pixels[:, x0:x1] = 10
    return GrayImage(pixels)


def test_fully_covered_shelf_has_no_free_space():
    detections = [_detection("o1", 0, 10, 50, 90), _detection("o2", 50, 10, 100, 90)]
    assert find_empty_and_unknown(_shelf(100, []), detections) == []


def test_dark_gap_becomes_one_empty_region():
    detections = [_detection("o1", 0, 10, 50, 90), _detection("o2", 100, 10, 150, 90)]
    (region,) = find_empty_and_unknown(_shelf(150, [(50, 100)]), detections)
    assert region.object_id == EMPTY_ID
    assert region.box == BoundingBox(50, 10, 100, 90)
    assert not region.is_real


def test_bright_gap_becomes_one_unknown_region():
    detections = [_detection("o1", 0, 10, 50, 90), _detection("o2", 125, 10, 175, 90)]
    (region,) = find_empty_and_unknown(_shelf(175, []), detections)
    assert region.object_id == UNKNOWN_ID
    assert region.box == BoundingBox(50, 10, 125, 90)


def test_narrow_gap_is_ignored():
    detections = [_detection("o1", 0, 10, 50, 90), _detection("o2", 80, 10, 130, 90)]
    assert find_empty_and_unknown(_shelf(130, [(50, 80)]), detections) == []


def test_dark_then_bright_gap_is_split():
    detections = [_detection("o1", 0, 10, 50, 90), _detection("o2", 200, 10, 250, 90)]
    regions = find_empty_and_unknown(_shelf(250, [(50, 100)]), detections)
    assert [r.object_id for r in regions] == [EMPTY_ID, UNKNOWN_ID]
    assert regions[0].box.x1 <= regions[1].box.x0


def test_no_detections_gives_one_unknown_covering_the_image():
    (region,) = find_empty_and_unknown(_shelf(80, []), [])
    assert region.object_id == UNKNOWN_ID
    assert region.box == BoundingBox(0, 0, 80, 100)


def test_overlay_colors_by_kind():
    img = GrayImage(np.full((60, 60), 128, dtype=np.uint8))
    overlay = render_overlay(img, [
        _detection("o1", 5, 5, 25, 25),
        _detection(EMPTY_ID, 30, 5, 50, 25),
        _detection(UNKNOWN_ID, 5, 30, 25, 50),
    ])
    assert overlay.shape == (60, 60, 3)
    assert tuple(overlay[5, 5]) == DETECTED_COLOR
    assert tuple(overlay[5, 30]) == OVERLAY_COLORS[EMPTY_ID]
    assert tuple(overlay[30, 5]) == OVERLAY_COLORS[UNKNOWN_ID]
    assert tuple(overlay[15, 15]) == (128, 128, 128)
