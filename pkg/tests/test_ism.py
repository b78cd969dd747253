import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from shelfalign.ism import (
    TRUNCATION,
    build_vote_matrix,
    extract_centers,
    restrict_votes,
    save_vote_matrix,
    scale_factor,
    vote_target,
    vote_weights,
)
from shelfalign.types import DescriptorKind, FeatureMatch, FeatureSet, ProductModel, VoteMatrix


def _points(xs, ys, width, height):
    n = len(xs)
    return FeatureSet(
        source_width=width,
        source_height=height,
        kind=DescriptorKind.BINARY,
        xs=np.asarray(xs, dtype=np.float32),
        ys=np.asarray(ys, dtype=np.float32),
        orientations=np.zeros(n, dtype=np.float32),
        scales=np.zeros(n, dtype=np.uint8),
        descriptors=np.zeros((n, 32), dtype=np.uint8),
    )


def _model(width=100, height=200, xs=(0.0,), ys=(0.0,)):
    return ProductModel("o1", width, height, _points(xs, ys, width, height))


def test_vote_target_displaces_by_model_offset():
    shelf = _points([300.0], [40.0], 640, 480)
    match = FeatureMatch(0, 0, 0.0, 0.0)
    assert vote_target(match, shelf, _model(), beta=1.0) == (350.0, 140.0)
    assert vote_target(match, shelf, _model(), beta=0.5) == (325.0, 90.0)


def test_keypoint_at_model_center_votes_in_place():
    shelf = _points([12.0], [34.0], 640, 480)
    model = _model(xs=(50.0,), ys=(100.0,))
    assert vote_target(FeatureMatch(0, 0, 0.0, 0.0), shelf, model, 1.0) == (12.0, 34.0)


def test_scale_factor_is_height_ratio():
    assert scale_factor(200, 400) == 0.5
    with pytest.raises(ValueError):
        scale_factor(200, 0)


def test_vote_weights_min_max():
    assert vote_weights(np.array([10.0, 20.0, 30.0])).tolist() == [1.0, 0.5, 0.0]
    assert vote_weights(np.array([7.0, 7.0])).tolist() == [1.0, 1.0]
    assert vote_weights(np.array([3.0])).tolist() == [1.0]


def test_single_match_gaussian_values():
    # model center offset (50, 100) with keypoint at (0, 0); shelf keypoint (10, 0) -> target (60, 100)
    shelf = _points([10.0], [0.0], 128, 128)
    votes = build_vote_matrix([FeatureMatch(0, 0, 5.0, 0.1)], shelf, _model(), sigma=7.0, beta=1.0)
    assert votes.values.shape == (128, 128)
    assert votes.values.dtype == np.float32
    assert votes.values[100, 60] == pytest.approx(1.0)
    assert votes.values[100, 67] == pytest.approx(math.exp(-0.5), rel=1e-5)
    assert votes.values[107, 60] == pytest.approx(math.exp(-0.5), rel=1e-5)


def test_empty_match_list_gives_zero_matrix():
    votes = build_vote_matrix([], _points([], [], 64, 32), _model(), sigma=7.0)
    assert votes.values.shape == (32, 64)
    assert not votes.values.any()


def test_duplicate_matches_double_the_peak():
    shelf = _points([10.0], [0.0], 128, 128)
    match = FeatureMatch(0, 0, 5.0, 0.1)
    single = build_vote_matrix([match], shelf, _model(), beta=1.0)
    double = build_vote_matrix([match, match], shelf, _model(), beta=1.0)
    assert double.values.max() == pytest.approx(2 * single.values.max())


def test_vote_mass_matches_gaussian_integral():
    shelf = _points([14.0], [0.0], 128, 256)
    votes = build_vote_matrix([FeatureMatch(0, 0, 0.0, 0.0)], shelf, _model(), sigma=7.0, beta=1.0)
    # 3-sigma square truncation keeps about 99.5% of the mass
    assert float(votes.values.sum()) == pytest.approx(2 * math.pi * 49, rel=0.01)


def test_suppression_radius_uses_scaled_smaller_side():
    shelf = _points([10.0], [0.0], 128, 100)
    votes = build_vote_matrix([], shelf, _model(width=100, height=200), sigma=7.0)
    assert votes.suppression_radius == pytest.approx(0.5 * 100 / 2)


def _naive(matches, shelf, model, sigma, beta):
    values = np.zeros((shelf.source_height, shelf.source_width))
    weights = vote_weights(np.array([m.distance for m in matches], dtype=np.float64))
    ys, xs = np.mgrid[0:shelf.source_height, 0:shelf.source_width]
    for match, gamma in zip(matches, weights):
        tx, ty = vote_target(match, shelf, model, beta)
        inside = (np.abs(xs - tx) <= TRUNCATION * sigma) & (np.abs(ys - ty) <= TRUNCATION * sigma)
        g = gamma * np.exp(-((xs - tx) ** 2 + (ys - ty) ** 2) / (2 * sigma ** 2))
        values += np.where(inside, g, 0.0)
    return values


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(16, 128), st.integers(16, 128),
       st.floats(2.0, 10.0), st.floats(0.5, 2.0))
def test_accumulation_equals_naive_evaluation(seed, width, height, sigma, beta):
    rng = np.random.default_rng(seed)
    n_shelf, n_model = 12, 8
    shelf = _points(rng.uniform(0, width - 1, n_shelf), rng.uniform(0, height - 1, n_shelf), width, height)
    model = ProductModel("o1", 40, 60, _points(rng.uniform(0, 39, n_model), rng.uniform(0, 59, n_model), 40, 60))
    matches = [
        FeatureMatch(int(i), int(rng.integers(n_model)), float(rng.integers(0, 100)), 0.5)
        for i in rng.choice(n_shelf, size=int(rng.integers(0, n_shelf + 1)), replace=False)
    ]
    votes = build_vote_matrix(matches, shelf, model, sigma=sigma, beta=beta)
    assert np.max(np.abs(votes.values - _naive(matches, shelf, model, sigma, beta))) <= 1e-4


def _blob(values, x, y, peak, sigma=3.0):
    ys, xs = np.mgrid[0:values.shape[0], 0:values.shape[1]]
    values += peak * np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * sigma ** 2))


def test_no_centers_in_zero_matrix():
    assert extract_centers(VoteMatrix("o1", np.zeros((10, 10), dtype=np.float32), 5.0), 1.0) == []


def test_single_blob_center():
    values = np.zeros((60, 80))
    _blob(values, 40, 30, 10.0)
    (center,) = extract_centers(VoteMatrix("o1", values.astype(np.float32), 5.0), 1.0)
    assert (center.x, center.y) == (40.0, 30.0)
    assert center.vote == pytest.approx(10.0)


def test_weak_blob_appears_once_alpha_drops():
    values = np.zeros((60, 120))
    _blob(values, 30, 30, 10.0)
    _blob(values, 90, 30, 4.0)
    votes = VoteMatrix("o1", values.astype(np.float32), 10.0)
    assert [(c.x, c.y) for c in extract_centers(votes, 1.0)] == [(30.0, 30.0)]
    assert [(c.x, c.y) for c in extract_centers(votes, 0.75)] == [(30.0, 30.0), (90.0, 30.0)]


def test_centers_respect_suppression_radius():
    values = np.zeros((40, 80))
    _blob(values, 20, 20, 10.0, sigma=1.0)
    _blob(values, 26, 20, 9.0, sigma=1.0)
    _blob(values, 60, 20, 8.0, sigma=1.0)
    centers = extract_centers(VoteMatrix("o1", values.astype(np.float32), 10.0), 1.0)
    assert [(c.x, c.y) for c in centers] == [(20.0, 20.0), (60.0, 20.0)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lower_alpha_keeps_earlier_centers(seed):
    rng = np.random.default_rng(seed)
    values = np.zeros((50, 50))
    for _ in range(5):
        _blob(values, rng.uniform(0, 49), rng.uniform(0, 49), rng.uniform(1, 10), sigma=2.0)
    votes = VoteMatrix("o1", values.astype(np.float32), 4.0)
    strict = {(c.x, c.y) for c in extract_centers(votes, 1.0)}
    relaxed = extract_centers(votes, 0.5625)
    assert strict <= {(c.x, c.y) for c in relaxed}
    for i, a in enumerate(relaxed):
        for b in relaxed[i + 1:]:
            assert math.hypot(a.x - b.x, a.y - b.y) >= 4.0


def test_restrict_votes_zeroes_outside_keep():
    values = np.ones((4, 4), dtype=np.float32)
    keep = np.zeros((4, 4), dtype=bool)
    keep[:, 2:] = True
    restricted = restrict_votes(VoteMatrix("o1", values, 2.0), keep)
    assert restricted.values[:, :2].sum() == 0
    assert restricted.values[:, 2:].sum() == 8


def test_vote_dump_is_min_max_scaled(tmp_path):
    values = np.array([[0.0, 1.0], [2.0, 4.0]], dtype=np.float32)
    path = save_vote_matrix(VoteMatrix("o1", values, 1.0), tmp_path / "votes.png")
    with Image.open(path) as img:
        assert np.asarray(img).tolist() == [[0, 64], [128, 255]]
