"""Implicit-shape-model voting: matched shelf features vote for product centers."""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from shelfalign import outputs
from shelfalign.types import CandidateCenter, FeatureMatch, FeatureSet, ProductModel, VoteMatrix

logger = logging.getLogger(__name__)

# Gaussian votes are truncated to a square window of this many sigmas
TRUNCATION = 3.0


def scale_factor(shelf_height: int, model_height: int) -> float:
    """beta_j = h_s / h_j."""
    if model_height <= 0:
        raise ValueError(f"model height must be positive, got {model_height}")
    return shelf_height / model_height


def vote_target(match: FeatureMatch, shelf: FeatureSet, model: ProductModel, beta: float) -> Tuple[float, float]:
    """Center hypothesis of one match: shelf keypoint plus the scaled keypoint-to-center offset."""
    model_point = model.features.keypoint(match.model_index)
    shelf_point = shelf.keypoint(match.shelf_index)
    return (
        shelf_point.x + beta * (model.width / 2.0 - model_point.x),
        shelf_point.y + beta * (model.height / 2.0 - model_point.y),
    )


def vote_weights(distances: np.ndarray) -> np.ndarray:
    """gamma = 1 - min-max normalized distance; all-equal distances weigh 1."""
    if distances.size == 0:
        return distances.astype(np.float64)
    low, high = float(distances.min()), float(distances.max())
    if high == low:
        return np.ones_like(distances, dtype=np.float64)
    return 1.0 - (distances - low) / (high - low)


def build_vote_matrix(matches: Sequence[FeatureMatch], shelf: FeatureSet, model: ProductModel,
                      sigma: float = 7.0, beta: Optional[float] = None) -> VoteMatrix:
    """Accumulate Gaussian-weighted center votes of one product over the shelf grid."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if beta is None:
        beta = scale_factor(shelf.source_height, model.height)

    width, height = shelf.source_width, shelf.source_height
    values = np.zeros((height, width), dtype=np.float64)
    radius = TRUNCATION * sigma
    two_sigma_sq = 2.0 * sigma * sigma

    weights = vote_weights(np.array([m.distance for m in matches], dtype=np.float64))
    for match, gamma in zip(matches, weights):
        if gamma <= 0:
            continue
        tx, ty = vote_target(match, shelf, model, beta)
        x_lo, x_hi = max(0, math.ceil(tx - radius)), min(width - 1, math.floor(tx + radius))
        y_lo, y_hi = max(0, math.ceil(ty - radius)), min(height - 1, math.floor(ty + radius))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        gx = np.exp(-((np.arange(x_lo, x_hi + 1) - tx) ** 2) / two_sigma_sq)
        gy = np.exp(-((np.arange(y_lo, y_hi + 1) - ty) ** 2) / two_sigma_sq)
        values[y_lo:y_hi + 1, x_lo:x_hi + 1] += gamma * np.outer(gy, gx)

    return VoteMatrix(
        object_id=model.object_id,
        values=values.astype(np.float32),
        suppression_radius=beta * min(model.width, model.height) / 2.0,
    )


def restrict_votes(votes: VoteMatrix, keep: np.ndarray) -> VoteMatrix:
    """Zero votes outside the boolean ``keep`` grid."""
    return VoteMatrix(
        object_id=votes.object_id,
        values=np.where(keep, votes.values, 0.0).astype(np.float32),
        suppression_radius=votes.suppression_radius,
    )


def extract_centers(votes: VoteMatrix, alpha: float) -> List[CandidateCenter]:
    """Local maxima above (alpha / 2) * max(V), strongest first, spaced by the suppression radius."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    values = votes.values
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0.0:
        return []

    threshold = alpha / 2.0 * peak
    local_max = (values == ndimage.maximum_filter(values, size=3, mode="constant", cval=0.0)) & (values > threshold)
    ys, xs = np.nonzero(local_max)
    scores = values[ys, xs]
    order = np.lexsort((xs, ys, -scores))

    min_dist_sq = votes.suppression_radius ** 2
    centers: List[CandidateCenter] = []
    for i in order:
        x, y = float(xs[i]), float(ys[i])
        if all((x - c.x) ** 2 + (y - c.y) ** 2 >= min_dist_sq for c in centers):
            centers.append(CandidateCenter(votes.object_id, x, y, float(scores[i])))

    logger.debug(f"{votes.object_id}: {len(centers)} centers above tau_v={threshold:.4f}")
    return centers


def save_vote_matrix(votes: VoteMatrix, path: Union[str, Path]) -> Path:
    """Min-max scaled grayscale PNG of the vote grid."""
    values = votes.values.astype(np.float64)
    low, high = values.min(), values.max()
    scaled = np.zeros_like(values) if high == low else (values - low) / (high - low) * 255.0
    return outputs.write_png(path, np.rint(scaled).astype(np.uint8))
